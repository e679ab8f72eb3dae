"""Command-line entry point: validate topologies, run scenarios, serve the API,
and summarize saved reports.

Exit codes: 0 success, 1 validation or scenario failure, 2 usage error
(argparse), 3 I/O error.  Data goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from .simulator import ScenarioError, run_scenario
from .topology import TopologyError, load_topology, locate_path_line

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 3


def _err(message: str):
    print(message, file=sys.stderr)


def cmd_validate(args) -> int:
    try:
        text = Path(args.topology).read_text()
    except OSError as exc:
        _err(f"cannot read {args.topology}: {exc}")
        return EXIT_IO
    try:
        topo = load_topology(text)
    except TopologyError as exc:
        line = locate_path_line(text, exc.path)
        anchor = f"{args.topology}:{line}: " if line is not None else ""
        _err(f"{anchor}invalid topology: {exc}")
        return EXIT_INVALID
    print(f"ok: {len(topo.nodes)} nodes, {len(topo.links)} links")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        report = run_scenario(args.scenario, seed=args.seed)
    except (OSError, FileNotFoundError) as exc:
        _err(f"cannot read scenario: {exc}")
        return EXIT_IO
    except (ScenarioError, TopologyError) as exc:
        _err(f"scenario failed: {exc}")
        return EXIT_INVALID

    out_dir = Path(args.out or os.environ.get("QNETSIM_DATA_DIR", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.format in ("report", "both"):
        path = out_dir / "report.json"
        path.write_text(report.to_json())
        wrote.append(str(path))
    if args.format in ("series", "both"):
        path = out_dir / "series.csv"
        path.write_text(report.series_csv())
        wrote.append(str(path))

    summary = report.doc["summary"]
    for rid, state in summary["outcomes"].items():
        reason = report.doc["requests"][rid]["failure_reason"]
        print(f"request {rid}: {state}" + (f" ({reason})" if reason else ""))
    cars = [row["car"] for row in report.series if not math.isinf(row["car"])]
    if cars:
        print(f"min CAR: {min(cars):.2f}")
    fids = [row["fidelity"] for row in report.series]
    if fids:
        print(f"mean fidelity: {sum(fids) / len(fids):.4f}")
    if summary.get("teleport"):
        t = summary["teleport"]
        print(f"teleport estimate [{t['profile']}]: rate {t['rate_hz']:.2f} Hz, "
              f"fidelity {t['fidelity_avg']:.4f}")
    for path in wrote:
        _err(f"wrote {path}")
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        from .service import build_service
    except ImportError as exc:
        _err(f"service dependencies missing: {exc}")
        return EXIT_INVALID
    addr = args.addr or os.environ.get("QNETSIM_ADDR", "127.0.0.1:8077")
    host, _, port_text = addr.partition(":")
    try:
        port = int(port_text or "8077")
    except ValueError:
        _err(f"bad --addr {addr!r}, expected host:port")
        return EXIT_INVALID
    for path, what in ((args.topology, "topology"), (args.tokens, "token file")):
        if not Path(path).exists():
            _err(f"{what} not found: {path}")
            return EXIT_IO
    try:
        app, service = build_service(
            args.topology, args.tokens,
            args.db or os.environ.get("QNETSIM_DATA_DIR", ".") + "/qnetsim.db",
            profile=args.profile, pace=args.pace, console_dir=args.console)
    except (ValueError, TopologyError) as exc:
        _err(f"startup refused: {exc}")
        return EXIT_INVALID

    import uvicorn
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=port, log_level="warning")
    except (SystemExit, OSError) as exc:  # bind failure (port in use) and kin
        _err(f"serve failed: {exc}")
        return EXIT_INVALID
    finally:
        service.stop()
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        doc = json.loads(Path(args.report).read_text())
    except OSError as exc:
        _err(f"cannot read report: {exc}")
        return EXIT_IO
    except json.JSONDecodeError as exc:
        _err(f"not a report file: {exc}")
        return EXIT_INVALID
    print(f"seed: {doc.get('seed')}  duration: {doc.get('duration_s')} s")
    for rid, state in (doc.get("summary", {}).get("outcomes", {}) or {}).items():
        print(f"request {rid}: {state}")
    per_request = doc.get("summary", {}).get("per_request", {}) or {}
    for rid, stats in per_request.items():
        parts = [f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                 for k, v in stats.items() if v is not None]
        print(f"  {rid}: " + ", ".join(parts))
    if args.series:
        rows = doc.get("series", [])
        from .simulator import SERIES_COLUMNS
        lines = [",".join(SERIES_COLUMNS)]
        for row in rows:
            lines.append(",".join(
                "" if row.get(c) is None else repr(row[c]) if isinstance(row[c], float)
                else str(row[c]) for c in SERIES_COLUMNS))
        Path(args.series).write_text("\n".join(lines) + "\n")
        _err(f"wrote {args.series}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qnetsim",
        description="Metro-scale quantum network control plane and simulator.",
        epilog="Environment: QNETSIM_ADDR overrides the serve address, "
               "QNETSIM_DATA_DIR the default output/data directory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a topology file")
    p.add_argument("topology")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="run a scenario and write report/series")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", default=None, help="output directory (default: cwd)")
    p.add_argument("--format", choices=("report", "series", "both"), default="both")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("serve", help="serve the network API")
    p.add_argument("topology")
    p.add_argument("--addr", default=None, help="host:port (default 127.0.0.1:8077)")
    p.add_argument("--tokens", required=True, help="YAML token table")
    p.add_argument("--db", default=None, help="SQLite path (default ./qnetsim.db)")
    p.add_argument("--profile", default=None, help="physics profile for live requests")
    p.add_argument("--pace", type=float, default=0.0,
                   help="wall seconds per simulated second (0 = run flat out)")
    p.add_argument("--console", default=None, help="static console directory to mount")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("report", help="summarize a saved report")
    p.add_argument("report")
    p.add_argument("--series", default=None, help="also extract the series as CSV")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
