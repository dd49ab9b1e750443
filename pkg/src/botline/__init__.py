"""botline: rule-based dialogue engine for enterprise-customized device
failure reporting, with a coded service catalog and deterministic replay."""

from .dialog import DialogSession, Engine, SessionClosed, step_appointment
from .matching import MatchResult, ValueExpect, match
from .neurons import (InformationNeuron, MemoryRecord, NeuronStore,
                      RequirementRecord, build_trigger_index)
from .registry import BotId, BotRegistry, BotSpec
from .replay import build_engine, golden_script, run_script
from .storage import UserRecord, UserStore

__version__ = "0.1.0"

__all__ = [
    "BotId",
    "BotRegistry",
    "BotSpec",
    "DialogSession",
    "Engine",
    "InformationNeuron",
    "MatchResult",
    "MemoryRecord",
    "NeuronStore",
    "RequirementRecord",
    "SessionClosed",
    "UserRecord",
    "UserStore",
    "ValueExpect",
    "build_engine",
    "build_trigger_index",
    "golden_script",
    "match",
    "run_script",
    "step_appointment",
]
