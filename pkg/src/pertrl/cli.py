"""``pertrl`` command line entry point."""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

from . import __version__, kernels
from .config import EXPERIMENTS, load_config, validate
from .errors import ConfigError, PertrlError
from .experiments import ResultTable, run

CSV_COLUMNS = ("experiment", "grid", "statistic", "value", "stderr", "n_seeds", "master_seed")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(table: ResultTable, cfg, reproducible: bool) -> str:
    head = [
        f"# pertrl {__version__} experiment={table.experiment} master_seed={table.master_seed} backend={kernels.BACKEND}",
        "# config: " + json.dumps(cfg.to_dict(), sort_keys=True),
    ]
    if not reproducible:
        head.append("# generated_at: " + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    head += [f"# {n}" for n in table.notes]
    lines = head + [",".join(CSV_COLUMNS)]
    for r in table.rows:
        vals = (table.experiment, r.grid, r.statistic, r.value, r.stderr, r.n_seeds, table.master_seed)
        lines.append(",".join(_cell(v) for v in vals))
    return "\n".join(lines) + "\n"


def render_json(table: ResultTable, cfg, reproducible: bool) -> str:
    doc = {"experiment": table.experiment, "master_seed": table.master_seed, "config": cfg.to_dict(), "summary": table.summary}
    if not reproducible:
        doc["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pertrl", description="Perturbative cost-to-go experiments.")
    p.add_argument("--version", action="version", version=f"pertrl {__version__}")
    p.add_argument("experiment", choices=EXPERIMENTS + ("validate",))
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None, help="output directory (default: config 'output' or ./results)")
    p.add_argument("--reproducible", action="store_true", help="omit timestamps so reruns are byte-identical")
    p.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "validate":
        problems = validate(args.config)
        for msg in problems:
            print(f"error: {msg}", file=sys.stderr)
        if not problems:
            print(f"{args.config}: ok")
        return 2 if problems else 0
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, args.experiment)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"error: {msg}", file=sys.stderr)
        return exc.exit_code
    out = args.out or Path(cfg.output or "results")
    try:
        table = run(cfg, threads=args.threads)
    except PertrlError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{cfg.experiment}.csv").write_text(render_csv(table, cfg, args.reproducible))
    (out / f"{cfg.experiment}.json").write_text(render_json(table, cfg, args.reproducible))
    for name, text in table.extra_files.items():
        (out / f"{cfg.experiment}_{name}").write_text(text)
    print(f"wrote {out / (cfg.experiment + '.csv')} ({len(table.rows)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
