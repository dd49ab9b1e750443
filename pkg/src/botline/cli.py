"""Operator entry points: serve, chat REPL, bot registration, replay harness.

Replay drives the in-process engine by default so assertions have zero
network dependencies; --over-http cross-checks a running service.
"""
from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime

from .api import create_app, engine_from_config, load_config
from .dialog import SessionClosed
from .registry import ValidationError
from .replay import HttpClient, InProcessClient, build_engine, run_script


def _engine_for(args, empty_default: bool = False) -> "Engine":
    config = load_config(getattr(args, "config", None))
    if getattr(args, "bots", None):
        config["bots_path"] = args.bots
    if getattr(args, "store", None):
        config["store_path"] = args.store
    if empty_default and not config.get("bots_path"):
        return build_engine(bot_docs=[], store_path=config.get("store_path"))
    return engine_from_config(config)


def cmd_serve(args) -> int:
    import uvicorn

    try:
        config = load_config(args.config)
        app = create_app(config=config)
    except (OSError, ValueError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        uvicorn.run(app, host=config["bind_host"], port=config["bind_port"],
                    log_level="info")
    except SystemExit:
        raise
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_chat(args) -> int:
    engine = _engine_for(args)
    clock = (datetime.strptime(args.clock, "%Y-%m-%d %H:%M")
             if args.clock else datetime.now().replace(second=0, microsecond=0))
    session, greeting = engine.open_session(args.user, clock)
    print(f"S: {greeting}")
    try:
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            if line == "/state":
                print(json.dumps(engine.snapshot(session), indent=2))
                continue
            if line == "/quit":
                engine.close_session(session)
                print("S: Bye.")
                break
            try:
                reply = engine.handle_turn(session, line)
            except SessionClosed:
                print("(session closed)")
                break
            print(f"S: {reply}")
            if session.closing == "closed":
                break
    except KeyboardInterrupt:
        engine.close_session(session)
    return 0


def cmd_replay(args) -> int:
    with open(args.script, "r", encoding="utf-8") as f:
        script = json.load(f)
    if args.over_http:
        client = HttpClient(args.over_http)
    else:
        client = InProcessClient(_engine_for(args))
    result = run_script(client, script, check=args.assert_)
    print(result.transcript())
    if args.assert_:
        failures = result.failures()
        if failures:
            print("\nASSERTION FAILURES:", file=sys.stderr)
            for f in failures:
                print(f"  {f}", file=sys.stderr)
            return 1
        print(f"\nall {len(result.turns)} turns passed")
    return 0


def cmd_bots_add(args) -> int:
    engine = _engine_for(args, empty_default=True)
    try:
        with open(args.file, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    docs = doc["bots"] if isinstance(doc, dict) else doc
    created = []
    try:
        for d in docs:
            created.extend(engine.registry.register_bot(d))
    except (ValidationError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    non_root = len(engine.registry.nodes) - 1
    print(f"created {len(created)} nodes this run; {non_root} nodes in tree")
    return 0


def cmd_bots_list(args) -> int:
    engine = _engine_for(args)
    for spec in engine.registry.tree():
        depth = spec.bot_id.level
        print(f"{'  ' * depth}{spec.bot_id}  {spec.display_name} [{spec.origin}]")
    return 0


def cmd_users_export(args) -> int:
    from .storage import UserStore

    store = UserStore(args.store)
    record = store.load(args.user)
    if record is None:
        print(f"error: no record for {args.user}", file=sys.stderr)
        return 1
    print(json.dumps(record.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_users_import(args) -> int:
    from .storage import UserRecord, UserStore

    store = UserStore(args.store)
    try:
        with open(args.file, "r", encoding="utf-8") as f:
            record = UserRecord.from_dict(json.load(f))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    store.save(record)
    print(f"imported {record.user_id} ({len(record.reports)} reports)")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="botline",
                                     description="failure-report dialogue engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("chat", help="interactive chat REPL")
    p.add_argument("--user", required=True)
    p.add_argument("--clock", help='reference clock "YYYY-MM-DD HH:MM"')
    p.add_argument("--config")
    p.add_argument("--bots", help="bot fixture JSON")
    p.add_argument("--store", help="user store directory")
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("replay", help="replay a script, optionally asserting")
    p.add_argument("script")
    p.add_argument("--assert", dest="assert_", action="store_true",
                   help="compare replies and state snapshots; exit 1 on diff")
    p.add_argument("--over-http", metavar="BASE_URL",
                   help="drive a running service instead of the in-process engine")
    p.add_argument("--config")
    p.add_argument("--bots")
    p.add_argument("--store")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("bots", help="bot catalog tools")
    bsub = p.add_subparsers(dest="bots_command", required=True)
    pa = bsub.add_parser("add", help="register bots from a JSON file")
    pa.add_argument("file")
    pa.add_argument("--config")
    pa.add_argument("--bots")
    pa.add_argument("--store")
    pa.set_defaults(func=cmd_bots_add)
    pl = bsub.add_parser("list", help="print the bot tree")
    pl.add_argument("--config")
    pl.add_argument("--bots")
    pl.add_argument("--store")
    pl.set_defaults(func=cmd_bots_list)

    p = sub.add_parser("users", help="user store tools")
    usub = p.add_subparsers(dest="users_command", required=True)
    ue = usub.add_parser("export", help="print one user record as JSON")
    ue.add_argument("user")
    ue.add_argument("--store", required=True)
    ue.set_defaults(func=cmd_users_export)
    ui = usub.add_parser("import", help="load a user record JSON into the store")
    ui.add_argument("file")
    ui.add_argument("--store", required=True)
    ui.set_defaults(func=cmd_users_import)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
