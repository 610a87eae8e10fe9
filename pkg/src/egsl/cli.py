"""``egsl`` command line: run scenarios, verify ledgers, inspect state, forecast load.

Exit codes: 0 success, 1 failed check or integrity failure, 2 structural or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .energy import forecast_load, hourly_consumption
from .engine import final_state, replay_from_genesis
from .errors import ConfigError, CorruptLedgerError, EgslError, LedgerFormatError, ReplayDivergenceError, ScriptError
from .ledger import LedgerFile, registry_from_transactions, verify_ledger
from .scenario import load_script, run_script
from .state import ConsentRecord, read_decision

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_STRUCTURE = 2

log = logging.getLogger("egsl")


def _err(msg: str) -> None:
    print(f"egsl: {msg}", file=sys.stderr)


def _jsonable(value):
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def cmd_run(args) -> int:
    try:
        script = load_script(args.script)
    except ScriptError as exc:
        _err(f"invalid script {args.script}:")
        for line in str(exc).splitlines():
            print(f"  {line}", file=sys.stderr)
        return EXIT_STRUCTURE
    if args.seed_override is not None and script.pinned_seed is not None:
        _err(f"{args.script} pins seed {script.pinned_seed}; --seed-override refused")
        return EXIT_STRUCTURE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ledger_path = out / f"{script.name}.egsl"
    try:
        result = run_script(script, seed=args.seed_override, ledger_mode=args.ledger_mode, ledger_path=ledger_path)
    except ConfigError as exc:
        _err(f"configuration error: {exc}")
        return EXIT_STRUCTURE
    except EgslError as exc:
        _err(f"run halted: {exc.code}: {exc}")
        return EXIT_FAIL
    report_path = out / f"{script.name}.report.json"
    report_path.write_text(result.report_json(), encoding="utf-8")
    r = result.report
    print(f"scenario {r['scenario']}: {r['blocks']} blocks, {r['transactions']} transactions, mode {r['ledgerMode']}")
    print(f"final state root {r['finalStateRoot']}")
    for order in r["dispatchOrders"]:
        print(f"dispatch {order['prosumer']}: surplus {order['surplusKWh']} kWh, payment {order['payment']}")
    for agg in r["districtAggregates"]:
        print(f"district {agg['district']}: total {agg['totalSurplusKWh']} central {agg['toCentralKWh']} trade {agg['toTradeKWh']}")
    for c in r["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['check']} expected={c['expected']!r} actual={c['actual']!r}")
    print(f"ledger {ledger_path}")
    print(f"report {report_path}")
    return EXIT_OK if result.passed else EXIT_FAIL


def _load_ledger(path: str) -> LedgerFile:
    try:
        return LedgerFile.load(path)
    except OSError as exc:
        raise LedgerFormatError(f"cannot read {path}: {exc.strerror}") from None


def cmd_verify(args) -> int:
    try:
        ledger = _load_ledger(args.ledger)
    except LedgerFormatError as exc:
        _err(f"structural error: {exc}")
        return EXIT_STRUCTURE
    report = verify_ledger(ledger)
    for check in report.blocks:
        print(check.line())
    for problem in report.problems:
        print(f"ledger: {problem}")
    if not report.valid:
        bad = report.first_bad_block
        print(f"INVALID: first bad block {bad}" if bad is not None else "INVALID")
        return EXIT_FAIL
    try:
        root = replay_from_genesis(ledger)
    except ReplayDivergenceError as exc:
        print(f"INVALID: replay diverges at block {exc.block_index}: {exc}")
        return EXIT_FAIL
    print(f"VALID: {len(ledger)} blocks, replayed state root {root.hex()}")
    return EXIT_OK


def _resolve_identity(ledger: LedgerFile, who: str | None) -> tuple[str, str]:
    registry, authority, _ = registry_from_transactions(ledger.transactions())
    if who is None:
        return authority, authority
    matches = [i for i in registry if i.startswith(who.lower())]
    if len(who) < 8 or len(matches) != 1:
        raise ConfigError(f"--as {who!r} does not name exactly one registered identity")
    return matches[0], authority


def cmd_inspect(args) -> int:
    try:
        ledger = _load_ledger(args.ledger)
        report = verify_ledger(ledger)
    except LedgerFormatError as exc:
        _err(f"structural error: {exc}")
        return EXIT_STRUCTURE
    if not report.valid:
        _err(f"ledger does not verify (first bad block {report.first_bad_block}); run 'egsl verify'")
        return EXIT_FAIL
    try:
        reader, authority = _resolve_identity(ledger, args.as_identity)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_STRUCTURE
    state = final_state(ledger)
    refused = 0

    if args.tx is not None:
        try:
            tx = ledger.find_transaction(bytes.fromhex(args.tx))
        except ValueError:
            _err("--tx takes a hex transaction id")
            return EXIT_STRUCTURE
        if tx is None:
            _err(f"no transaction {args.tx}")
            return EXIT_FAIL
        if reader not in (authority, tx.invoker):
            _err("permission refused: only the invoker or the authority may dump a transaction")
            return EXIT_FAIL
        dump = _jsonable(tx.to_value())
        try:
            dump["decodedArgs"] = _jsonable(tx.decoded_args())
        except EgslError:
            dump["decodedArgs"] = None
        print(json.dumps(dump, indent=2, sort_keys=True))
        return EXIT_OK

    if args.consent_subject is not None:
        keys = [k for k in state.keys("consent/") if k.count("/") == 1]
        rows = []
        for key in keys:
            value = state.get(key).value
            if not value["subject"].startswith(args.consent_subject):
                continue
            allowed, _ = read_decision(state, reader, key)
            if not allowed:
                refused += 1
                continue
            rec = ConsentRecord.from_value(value)
            rows.append(f"{rec.consent_id[:16]} {rec.status:9} requester={rec.requester[:16]} resource={rec.resource_key} at={rec.requested_at}")
        print("\n".join(rows) if rows else "(no consent records)")
    else:
        prefix = args.prefix or ""
        for key in state.keys(prefix):
            allowed, _ = read_decision(state, reader, key)
            if not allowed:
                refused += 1
                continue
            entry = state.get(key)
            print(f"{key} v{entry.version} owner={entry.owner[:16]} {json.dumps(_jsonable(entry.value), sort_keys=True)}")
    if refused:
        _err(f"permission refused for {refused} entr{'y' if refused == 1 else 'ies'} as {reader[:16]}")
        return EXIT_FAIL
    return EXIT_OK


def cmd_forecast(args) -> int:
    try:
        ledger = _load_ledger(args.ledger)
    except LedgerFormatError as exc:
        _err(f"structural error: {exc}")
        return EXIT_STRUCTURE
    if not verify_ledger(ledger).valid:
        _err("ledger does not verify; run 'egsl verify'")
        return EXIT_FAIL
    state = final_state(ledger)
    readings = []
    for key, entry in state.items():
        parts = key.split("/")
        if len(parts) == 3 and parts[0] == "energy" and parts[2].isdigit():
            readings.append(entry.value)
    series = hourly_consumption(readings, args.prosumer)
    try:
        result = forecast_load(series, args.horizon, args.k)
    except EgslError as exc:
        _err(f"{exc}")
        return EXIT_FAIL
    kind = "seasonal hour-of-week mean" if result.seasonal else "flat mean (under one week of history)"
    print(f"history {len(series)} h, {kind}")
    for j, v in enumerate(result.forecast):
        print(f"+{j + 1:>3}h {v}")
    print("peak hours " + " ".join(f"{h:02d}:00" for h in result.peak_hours))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egsl", description="Permissioned ledger simulator for e-government smart contracts.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario script")
    p.add_argument("script")
    p.add_argument("--out", default="out", help="directory for the ledger file and report (default: out)")
    p.add_argument("--seed-override", type=int, help="seed for scripts that do not pin one")
    p.add_argument("--ledger-mode", choices=("chain", "dag"), help="override the script's ledger mode")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="verify a ledger file and replay it from genesis")
    p.add_argument("ledger")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect", help="list state or dump a transaction, with access control")
    p.add_argument("ledger")
    q = p.add_mutually_exclusive_group()
    q.add_argument("--prefix", help="state key prefix, e.g. energy/<id>/")
    q.add_argument("--tx", help="transaction id (hex)")
    q.add_argument("--consent-subject", help="identity id (or prefix) of the data subject")
    p.add_argument("--as", dest="as_identity", help="identity id (or unique prefix) to read as; default the authority")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("forecast", help="forecast hourly load from a ledger's meter readings")
    p.add_argument("ledger")
    p.add_argument("--horizon", type=int, default=24)
    p.add_argument("-k", type=int, default=3, help="number of peak hours")
    p.add_argument("--prosumer", help="restrict to one prosumer id")
    p.set_defaults(func=cmd_forecast)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CorruptLedgerError as exc:
        _err(f"corrupt ledger: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
