"""Command line entry point: ``lrlab <subcommand> --config scenario.json``.

Exit status: 0 when everything ran and all checks passed, 3 when a bound
or proof check failed, 2 for configuration errors, 1 for other errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from lrlab.errors import ConfigError, LRLabError
from lrlab.harness.config import parse_config, with_overrides
from lrlab.harness.export import export, reexport
from lrlab.harness.runner import ResultSet, run_scenario, run_sweep

SCENARIO_COMMANDS = ("lightcone", "perturbed", "dual", "avalanche", "proofcheck")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrlab", description="Lieb-Robinson bound experiments on disordered spin chains.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="scenario JSON file")
    common.add_argument("--out", type=Path, help="output directory (default: the config's output.directory)")
    common.add_argument("--workers", type=_positive_int, help="worker processes (default: available CPUs)")
    common.add_argument("--seed", type=_u64, help="override disorder.base_seed")
    common.add_argument("--tol", type=_positive_float, help="override schedule.tol")

    helps = {
        "lightcone": "unperturbed commutator scan and lightcone fit",
        "perturbed": "perturbed scan checked against the full/far/single bounds",
        "dual": "same total Hamiltonian in the original and dual decomposition",
        "avalanche": "ergodic grain replacing part of the chain",
        "proofcheck": "numerical checks of the individual proof steps",
    }
    for name in SCENARIO_COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])

    sweep = sub.add_parser("sweep", parents=[common], help="rerun a scenario over values of one config field")
    sweep.add_argument("--axis", required=True, help="dotted field path, e.g. disorder.W or perturbations[0].tau")
    sweep.add_argument("--values", required=True, help="JSON list or comma-separated values")
    sweep.add_argument("--mode", choices=SCENARIO_COMMANDS, help="override the config's mode")

    ex = sub.add_parser("export", help="validate exported results and write them again")
    ex.add_argument("--input", required=True, type=Path, help="directory produced by a scenario run")
    ex.add_argument("--out", required=True, type=Path)
    return parser


def parse_values(text: str) -> list:
    text = text.strip()
    if text.startswith("["):
        values = json.loads(text)
        if not isinstance(values, list):
            raise ValueError("--values must be a list")
        return values
    if not text:
        return []
    return [json.loads(v) if v.strip() else v for v in text.split(",")]


def _load_raw(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("$", f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"{path} is not valid JSON: {exc}") from exc


def _report(res: ResultSet, out: Path) -> None:
    cfg = res.config
    print(f"{cfg.scenario_id} [{cfg.mode}] hash={res.config_hash[:12]} records={len(res.records)} wall={res.wall_time:.1f}s")
    for sid, fit in res.fits:
        print(f"  fit {sid}: K={fit.K:.4g} xi={fit.xi:.4g} beta={fit.beta:.4g} rms={fit.rms_log_residual:.3g}")
    for m in res.margin_reports:
        status = "ok" if m["n_violations"] == 0 else "VIOLATED"
        print(f"  bound {m['kind']}: {status} ({m['n_violations']}/{m['n_points']} violations)")
    for p in res.proof_reports:
        status = "ok" if p["passed"] else "FAILED"
        print(f"  check {p['name']}: {status} ({p.get('n_failed', 0)}/{p['n_runs']} failed)")
    print(f"  written to {out}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "export":
            for path in reexport(args.input, args.out):
                print(path)
            return 0
        raw = _load_raw(args.config)
        if args.command == "sweep":
            raw = with_overrides(raw, seed=args.seed, tol=args.tol, mode=args.mode)
            values = parse_values(args.values)
            results = run_sweep(raw, args.axis, values, args.workers)
            base = args.out or Path(parse_config(raw).output.directory)
            index = []
            for res in results:
                j = res.provenance["sweep"]["index"]
                out = base / f"sweep_{j:03d}"
                export(res, out, res.config.output.formats)
                _report(res, out)
                index.append({**res.provenance["sweep"], "config_hash": res.config_hash, "directory": out.name})
            base.mkdir(parents=True, exist_ok=True)
            (base / "sweep.json").write_text(json.dumps({"axis": args.axis, "runs": index}, indent=2) + "\n")
            return 0 if all(r.ok for r in results) else 3
        cfg = parse_config(with_overrides(raw, seed=args.seed, tol=args.tol, mode=args.command))
        res = run_scenario(cfg, args.workers)
        out = args.out or Path(cfg.output.directory)
        export(res, out, cfg.output.formats)
        _report(res, out)
        return 0 if res.ok else 3
    except ConfigError as exc:
        print(f"config error at {exc.path}: {exc}", file=sys.stderr)
        return 2
    except (LRLabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
