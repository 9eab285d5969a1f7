"""Command-line front end.

Usage::

    doublestable COMMAND [--config FILE] [--alpha A] [--rho R --rho R ...] ...

Exit status is 0 on success, 2 on a parameter error and 3 on a numerical error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import lab
from .errors import NumericalError, ParameterError
from .estimators import CSV_COLUMNS
from .process import simulate_path
from .streams import stream

log = logging.getLogger("doublestable")

OUTPUT_COLUMNS = CSV_COLUMNS + ("config_digest", "extra")
_TUPLE_FLOAT = {"rho", "y", "x", "m_lag"}
_TUPLE_INT = {"n_list", "d"}
_INT = {"n", "reps", "m", "table_horizon", "seed", "parallelism"}
_FLOAT = {"alpha", "beta", "residual_frac"}


# -- config ---------------------------------------------------------------------


def parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _TUPLE_FLOAT:
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if key in _TUPLE_INT:
            return tuple(int(float(v)) for v in raw.replace(",", " ").split())
        if key == "m":
            return None if raw.lower() in ("", "none") else int(float(raw))
        if key in _INT:
            return int(float(raw))
        if key in _FLOAT:
            return float(raw)
    except ValueError as exc:
        raise ParameterError(f"bad value for {key}: {raw!r}") from exc
    if raw.lower() == "none":
        return None
    return raw


def read_config_file(path: str | Path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment unless it prefixes a
    ``key=value`` pair, so CSV outputs with an echoed header can be replayed.
    A json-lines output is replayed from its first (``config``) line."""
    known = {f.name for f in fields(lab.ExperimentConfig)}
    text = Path(path).read_text()
    first = text.lstrip().split("\n", 1)[0]
    if first.startswith("{"):
        echo = json.loads(first).get("config", {})
        return {k: parse_value(k, " ".join(map(str, v)) if isinstance(v, list) else str(v)) for k, v in echo.items() if k in known}
    out = {}
    for line in text.splitlines():
        s = line.strip()
        if s.startswith("#"):
            s = s[1:].strip()
        elif not s:
            continue
        elif "=" not in s:
            break  # reached the data of a CSV output
        if "=" not in s:
            continue
        key, raw = s.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in known:
            raise ParameterError(f"unknown config key {key!r}")
        out[key] = parse_value(key, raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doublestable", description="Simulation lab for the stable-regenerative double-stable model.")
    p.add_argument("command", choices=sorted(set(lab.COMMANDS) | {c.replace("-", "_") for c in lab.COMMANDS}))
    p.add_argument("--config", help="flat key=value file; flags override its values")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--rho", type=float, action="append")
    p.add_argument("--y", type=float, action="append")
    p.add_argument("--reps", type=int)
    p.add_argument("--m", type=int, help="truncation override")
    p.add_argument("--table-horizon", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--out", help="output file (stdout if omitted)")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--cache-dir", help="directory for cached renewal tables")
    p.add_argument("--x", type=float, action="append", help="running-max grid point (macro)")
    p.add_argument("--n-list", type=int, action="append", help="path lengths for the flatness trend (macro)")
    p.add_argument("--d", type=int, action="append", help="window length (hitprob)")
    p.add_argument("--m-lag", type=float, action="append", help="lag as a fraction of the block length (ac)")
    p.add_argument("--residual-frac", type=float, help="tail-process horizon: residual sum of u^2 relative to its total")
    p.add_argument("--manifest", action="store_true", help="write OUT.manifest.json with per-replication digests")
    p.add_argument("--dump-paths", type=int, default=0, metavar="K", help="dump the first K simulated paths")
    p.add_argument("--dump-dir", default=None, help="directory for dumped paths (default: next to OUT)")
    p.add_argument("--dump-format", choices=("csv", "npy"), default="csv")
    p.add_argument("--plot-data", action="store_true", help="write OUT.plot.csv with x, y, ci_lo, ci_hi")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> lab.ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    values["command"] = args.command.replace("_", "-")
    for f in fields(lab.ExperimentConfig):
        if f.name == "command":
            continue
        v = getattr(args, f.name, None)
        if v is None:
            continue
        values[f.name] = tuple(v) if isinstance(v, list) else v
    return lab.ExperimentConfig(**values)


# -- output ---------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _echo_lines(cfg: lab.ExperimentConfig) -> list[str]:
    out = []
    for k, v in cfg.echo().items():
        if isinstance(v, list):
            v = " ".join(_fmt(x) for x in v)
        out.append(f"# {k}={_fmt(v)}")
    return out


def render(rows: list[lab.ResultRow], cfg: lab.ExperimentConfig) -> str:
    buf = io.StringIO()
    if cfg.format == "jsonl":
        buf.write(json.dumps({"config": cfg.echo(), "config_digest": cfg.digest}, sort_keys=True) + "\n")
        for r in rows:
            flat = r.flat()
            flat["extra"] = json.loads(flat["extra"])
            buf.write(json.dumps(lab._jsonable({k: flat[k] for k in OUTPUT_COLUMNS}), allow_nan=False) + "\n")
        return buf.getvalue()
    for line in _echo_lines(cfg):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OUTPUT_COLUMNS)
    for r in rows:
        flat = r.flat()
        w.writerow([_fmt(flat[c]) for c in OUTPUT_COLUMNS])
    return buf.getvalue()


def plot_rows(rows: list[lab.ResultRow]) -> list[tuple]:
    """``(series, x, y, ci_lo, ci_hi)`` with 95% normal intervals.

    The abscissa is ``rho`` for exceedance rates, ``y`` for grid-indexed rows and
    the row position otherwise.
    """
    out = []
    for i, r in enumerate(rows):
        rec = r.record
        se = rec.clustered_se if rec.clustered_se == rec.clustered_se else rec.se
        if rec.name == "block_exceedance_rate":
            x = rec.rho
        elif rec.y == rec.y:
            x = rec.y
        else:
            x = rec.extra.get("n", rec.extra.get("d", rec.extra.get("m_lag", i)))
            if not np.isscalar(x):
                x = i
        out.append((rec.name, x, rec.estimate, rec.estimate - 1.96 * se, rec.estimate + 1.96 * se))
    return out


def write_plot_data(rows, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("series", "x", "y", "ci_lo", "ci_hi"))
        for row in plot_rows(rows):
            w.writerow([_fmt(v) for v in row])


def dump_path(x: np.ndarray, path: Path, fmt: str = "csv") -> None:
    """Write a path as ``k, x_k`` rows (``k`` from 1) or a raw ``.npy`` array."""
    if fmt == "npy":
        np.save(path, np.asarray(x, dtype=float))
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("k", "x_k"))
        for k, v in enumerate(x, start=1):
            w.writerow((k, repr(float(v))))


def dump_paths(cfg: lab.ExperimentConfig, count: int, directory: Path, fmt: str = "csv") -> list[Path]:
    """Regenerate the first ``count`` paths of each path-based series of ``cfg``."""
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for label, series in lab.path_specs(cfg):
        for i in range(min(count, cfg.reps)):
            x = simulate_path(series, stream(cfg.seed, i, label)).x
            p = directory / f"path_{label}_{i:05d}.{fmt}"
            dump_path(x, p, fmt)
            written.append(p)
    return written


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        cfg = config_from_args(args)
        with lab.digest_log() as digests:
            rows = lab.run(cfg)
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except TypeError as exc:  # unknown config keys reaching the dataclass
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2
    text = render(rows, cfg)
    if cfg.out is None:
        sys.stdout.write(text)
        return 0
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    meta = {
        "started": started.isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config_digest": cfg.digest,
        "durations": [r.duration for r in rows],
    }
    Path(f"{out}.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    if args.plot_data:
        write_plot_data(rows, Path(f"{out}.plot.csv"))
    if args.manifest:
        manifest = {"seed": cfg.seed, "config": cfg.echo(), "config_digest": cfg.digest, "replications": digests}
        Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    if args.dump_paths > 0:
        directory = Path(args.dump_dir) if args.dump_dir else out.parent / f"{out.name}.paths"
        dump_paths(cfg, args.dump_paths, directory, args.dump_format)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
