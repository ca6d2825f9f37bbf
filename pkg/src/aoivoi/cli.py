"""Command-line front end: experiment configs, CSV results and figures.

Config files use a flat ``key = value`` grammar; list-valued keys take
comma-separated values and ``#`` starts a comment::

    preset = n_sweep
    scheduler = aoi, voi
    N = 20, 40, 60
    resources = 1:1, 3:3      # UL:DL pairs; overrides R_UL x R_DL
    seed = 0
    repetitions = 10

Precedence is preset < file < command-line flags.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .estimation import expected_error_sq
from .model import ConfigError, SubSystemParams
from .network import ResourceGrid
from .scheduling import SchedulerKind
from .simulation import ResultRow, RunConfig, paper_classes, run_sweep

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CSV_COLUMNS = [
    "scheduler", "N", "R_UL", "R_DL", "T_s", "T_sim", "seed", "avg_aoi", "iae",
    "class_avg_aoi", "class_iae", "starved_loops", "starved_by_class", "noise_checksum",
]


@dataclass(frozen=True)
class ExperimentSpec:
    preset: str = "reference"
    scheduler: tuple[str, ...] = ("aoi", "voi")
    N: tuple[int, ...] = (40,)
    R_UL: tuple[int, ...] = (3,)
    R_DL: tuple[int, ...] = (3,)
    resources: tuple[tuple[int, int], ...] = ()
    T_s: int = 10
    T_sim: int = 20000
    seed: int = 0
    repetitions: int = 1
    warmup: int = 0
    A: tuple[float, ...] = (0.75, 1.0, 1.25, 1.5)
    W: float = 1.0
    traces: bool = False
    out: str = "results"
    jobs: int = 1

    def resource_pairs(self) -> list[tuple[int, int]]:
        if self.resources:
            return list(self.resources)
        return list(itertools.product(self.R_UL, self.R_DL))

    def run_configs(self) -> list[RunConfig]:
        classes = paper_classes(self.W, self.A)
        return [
            RunConfig(
                N=n, classes=classes, T_s=self.T_s, R_UL=ul, R_DL=dl, T_sim=self.T_sim,
                seed=self.seed, scheduler=sched, warmup=self.warmup, keep_traces=self.traces,
            )
            for sched in self.scheduler
            for n in self.N
            for ul, dl in self.resource_pairs()
        ]


PRESETS: dict[str, dict] = {
    "reference": {},
    "n_sweep": dict(
        N=(20, 40, 60, 80, 100, 120), resources=((1, 1), (3, 3)), repetitions=10,
    ),
    "ul_sweep": dict(N=(20, 120), R_UL=(1, 2, 3, 6, 9), R_DL=(3,), repetitions=10),
}


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {text!r}")
    return value


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _pair(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"expected UL:DL, got {text!r}")
    return _int(parts[0]), _int(parts[1])


def _sched(text: str) -> str:
    return SchedulerKind.parse(text).value


def _items(text: str) -> list[str]:
    items = [s.strip() for s in text.split(",")]
    if not items or any(not s for s in items):
        raise ConfigError(f"empty list element in {text!r}")
    return items


# key -> (element parser, is_list)
_KEYS = {
    "preset": (str, False),
    "scheduler": (_sched, True),
    "N": (_int, True),
    "R_UL": (_int, True),
    "R_DL": (_int, True),
    "resources": (_pair, True),
    "T_s": (_int, False),
    "T_sim": (_int, False),
    "seed": (_int, False),
    "repetitions": (_int, False),
    "warmup": (_int, False),
    "A": (_float, True),
    "W": (_float, False),
    "traces": (_bool, False),
    "out": (str, False),
    "jobs": (_int, False),
}


def _parse_value(key: str, text: str):
    if key not in _KEYS:
        raise ConfigError(f"unknown key {key!r}")
    parser, is_list = _KEYS[key]
    text = text.strip()
    if is_list:
        return tuple(parser(s) for s in _items(text))
    if not text:
        raise ConfigError(f"missing value for {key!r}")
    return parser(text)


def _read_config(text: str, source: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        try:
            values[key] = _parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
        values.setdefault("_lines", {})[key] = lineno
    return values


def _validate(spec: ExperimentSpec, where: dict) -> None:
    def fail(key, msg):
        loc = where.get(key)
        raise ConfigError(f"{loc}: {msg}" if loc else msg)

    if spec.preset not in PRESETS:
        fail("preset", f"unknown preset {spec.preset!r} (expected one of {', '.join(PRESETS)})")
    for key in ("scheduler", "N", "A"):
        if not getattr(spec, key):
            fail(key, f"{key} must not be empty")
    for n in spec.N:
        if n < 1:
            fail("N", f"N must be positive, got {n}")
        if n % len(spec.A):
            fail("N", f"N={n} cannot be split equally over {len(spec.A)} plant classes")
    for ul, dl in spec.resource_pairs():
        try:
            ResourceGrid(ul, dl)
        except ConfigError as exc:
            fail("resources" if spec.resources else ("R_UL" if ul < 1 else "R_DL"), str(exc))
    if spec.T_s < 1:
        fail("T_s", f"T_s must be positive, got {spec.T_s}")
    if spec.T_sim < 1:
        fail("T_sim", f"T_sim must be positive, got {spec.T_sim}")
    if not 0 <= spec.warmup < spec.T_sim:
        fail("warmup", f"warmup must be in [0, T_sim), got {spec.warmup}")
    if spec.repetitions < 1:
        fail("repetitions", f"repetitions must be positive, got {spec.repetitions}")
    if spec.W < 0:
        fail("W", f"W must be non-negative, got {spec.W}")
    if spec.jobs == 0:
        fail("jobs", "jobs must be non-zero")


def parse_spec(text: str | None = None, flags: dict | None = None, source: str = "<config>") -> ExperimentSpec:
    """Resolve preset, config text and flag overrides into a spec.

    ``flags`` maps config keys to raw strings (as typed on the command line)
    or to already-parsed values.
    """
    file_values = _read_config(text or "", source)
    flag_values = {}
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if isinstance(value, str):
            try:
                value = _parse_value(key, value)
            except ConfigError as exc:
                raise ConfigError(f"--{key}: {exc}") from None
        elif key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        flag_values[key] = value

    where = {k: f"{source}:{n}" for k, n in file_values.pop("_lines", {}).items()}
    where.update({k: f"--{k}" for k in flag_values})
    preset = flag_values.get("preset", file_values.get("preset", "reference"))
    if preset not in PRESETS:
        loc = where.get("preset", "preset")
        raise ConfigError(f"{loc}: unknown preset {preset!r} (expected one of {', '.join(PRESETS)})")
    merged = dict(PRESETS[preset])
    merged.update(file_values)
    merged.update(flag_values)
    merged["preset"] = preset
    # explicit R_UL / R_DL beat a preset's resource pairs
    if ("R_UL" in file_values or "R_DL" in file_values or "R_UL" in flag_values or "R_DL" in flag_values) and (
        "resources" not in file_values and "resources" not in flag_values
    ):
        merged["resources"] = ()
    spec = ExperimentSpec(**merged)
    _validate(spec, where)
    return spec


def render(spec: ExperimentSpec) -> str:
    """Config text that parses back to ``spec``."""
    lines = []
    for f in fields(spec):
        value = getattr(spec, f.name)
        if f.name == "resources":
            if not value:
                continue
            text = ", ".join(f"{ul}:{dl}" for ul, dl in value)
        elif isinstance(value, tuple):
            text = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ";".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_csv(rows: Iterable[ResultRow], path) -> Path:
    """Write rows sorted by (scheduler, N, R_UL, ..., seed) with a fixed header."""
    path = Path(path)
    rows = sorted(rows, key=lambda r: r.sort_key)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in rows:
                d = asdict(row)
                writer.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> list[ResultRow]:
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            floats = lambda s: tuple(float(v) for v in s.split(";")) if s else ()
            ints = lambda s: tuple(int(v) for v in s.split(";")) if s else ()
            rows.append(ResultRow(
                scheduler=rec["scheduler"], N=int(rec["N"]), R_UL=int(rec["R_UL"]),
                R_DL=int(rec["R_DL"]), T_s=int(rec["T_s"]), T_sim=int(rec["T_sim"]),
                seed=int(rec["seed"]), avg_aoi=float(rec["avg_aoi"]), iae=float(rec["iae"]),
                class_avg_aoi=floats(rec["class_avg_aoi"]), class_iae=floats(rec["class_iae"]),
                starved_loops=int(rec["starved_loops"]), starved_by_class=ints(rec["starved_by_class"]),
                noise_checksum=rec["noise_checksum"],
            ))
    return rows


class FigureError(ValueError):
    pass


def g_curve_data(a_values: Sequence[float], W: float = 1.0, max_aoi: int = 10) -> dict[float, np.ndarray]:
    ages = range(max_aoi + 1)
    out = {}
    for a in a_values:
        p = SubSystemParams(0, a, 1.0, W, a)
        out[a] = np.array([expected_error_sq(d, p) for d in ages])
    return out


def _series(rows, group_key, x_key, y_key):
    """Mean over seeds of ``y`` per group and x value."""
    acc: dict = {}
    for r in rows:
        acc.setdefault(group_key(r), {}).setdefault(x_key(r), []).append(y_key(r))
    return {g: {x: float(np.mean(v)) for x, v in sorted(d.items())} for g, d in sorted(acc.items())}


def _check_coverage(series: dict, what: str, family=lambda g: None) -> None:
    """Every group must cover every x value seen in its family of groups."""
    xs: dict = {}
    for g, d in series.items():
        xs.setdefault(family(g), set()).update(d)
    missing = [f"{g[0]} {g[1]} @ {what}={x:g}" for g, d in series.items() for x in sorted(xs[family(g)]) if x not in d]
    if missing:
        raise FigureError("missing cells: " + ", ".join(missing))


def emit_figures(rows: Sequence[ResultRow], out_dir, kinds: Sequence[str] | None = None,
                 a_values: Sequence[float] = (0.75, 1.0, 1.25, 1.5)) -> list[Path]:
    """Render SVG figures from result rows.

    ``kinds`` selects from ``aoi_vs_n``, ``iae_vs_n``, ``aoi_vs_ratio``,
    ``iae_vs_ratio`` and ``g_curve``; by default every kind the rows can
    support is drawn, plus the age-to-error curve.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = list(rows)
    if not rows:
        raise FigureError("no result rows to plot")
    out_dir = Path(out_dir)

    # group key is (scheduler, legend label, coverage family)
    by_res = lambda r: (r.scheduler, f"{r.R_UL}:{r.R_DL}", None)
    by_n = lambda r: (r.scheduler, f"N={r.N} R_DL={r.R_DL}", r.R_DL)
    ratio = lambda r: r.R_UL / r.R_DL
    panels = {
        "aoi_vs_n": (by_res, lambda r: r.N, lambda r: r.avg_aoi, "N", "average AoI [steps]"),
        "iae_vs_n": (by_res, lambda r: r.N, lambda r: r.iae, "N", "IAE per loop"),
        "aoi_vs_ratio": (by_n, ratio, lambda r: r.avg_aoi, "R_UL / R_DL", "average AoI [steps]"),
        "iae_vs_ratio": (by_n, ratio, lambda r: r.iae, "R_UL / R_DL", "IAE per loop"),
    }
    if kinds is None:
        kinds = [k for k, (g, x, *_) in panels.items()
                 if any(len(d) > 1 for d in _series(rows, g, x, lambda r: 0.0).values())]
        kinds.append("g_curve")
    unknown = set(kinds) - set(panels) - {"g_curve"}
    if unknown:
        raise FigureError(f"unknown figure kinds {sorted(unknown)}")

    prepared = {}
    for kind in kinds:
        if kind == "g_curve":
            continue
        group, x, y, xlabel, ylabel = panels[kind]
        series = _series(rows, group, x, y)
        _check_coverage(series, xlabel, family=lambda g: g[2])
        prepared[kind] = (series, xlabel, ylabel)

    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, (series, xlabel, ylabel) in prepared.items():
        fig, ax = plt.subplots(figsize=(5, 3.6))
        for (sched, label, _), d in series.items():
            ax.plot(list(d), list(d.values()), marker="o", label=f"{sched.upper()} {label}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if "ratio" in kind:
            ax.set_xscale("log")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{kind}.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    if "g_curve" in kinds:
        data = g_curve_data(a_values)
        fig, ax = plt.subplots(figsize=(5, 3.6))
        ages = np.arange(len(next(iter(data.values()))))
        ax.plot(ages, ages, "k--", label="AoI")
        for a, g in data.items():
            ax.plot(ages, g, marker=".", label=f"A={a:g}")
        ax.set_xlabel("AoI [steps]")
        ax.set_ylabel("expected squared error")
        ax.set_yscale("symlog")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / "g_curve.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def _summary(rows: Sequence[ResultRow]) -> str:
    lines = [f"{'sched':6} {'N':>4} {'UL:DL':>6} {'avg AoI':>10} {'IAE':>12}"]
    acc: dict = {}
    for r in rows:
        acc.setdefault((r.scheduler, r.N, r.R_UL, r.R_DL), []).append(r)
    for (sched, n, ul, dl), rs in sorted(acc.items()):
        lines.append(
            f"{sched:6} {n:>4} {f'{ul}:{dl}':>6} {np.mean([r.avg_aoi for r in rs]):>10.3f}"
            f" {np.mean([r.iae for r in rs]):>12.1f}"
        )
    return "\n".join(lines)


def _save_traces(result, out_dir: Path) -> None:
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    for cfg, (aoi, err) in result.traces.items():
        name = f"{cfg.scheduler.value}_N{cfg.N}_ul{cfg.R_UL}_dl{cfg.R_DL}_seed{cfg.seed}.npz"
        np.savez_compressed(trace_dir / name, aoi=aoi, error=err)


def _flag_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
    p.add_argument("--scheduler", help="comma list of aoi, voi, random")
    p.add_argument("--N", dest="N", help="comma list of loop counts")
    p.add_argument("--R-UL", dest="R_UL", help="comma list of UL resources")
    p.add_argument("--R-DL", dest="R_DL", help="comma list of DL resources")
    p.add_argument("--resources", help="comma list of UL:DL pairs")
    p.add_argument("--T-s", dest="T_s", help="sampling period in slots")
    p.add_argument("--T-sim", dest="T_sim", help="slots per run")
    p.add_argument("--seed")
    p.add_argument("--repetitions")
    p.add_argument("--warmup", help="slots excluded from the metrics")
    p.add_argument("--A", dest="A", help="comma list of scalar plant dynamics")
    p.add_argument("--W", dest="W", help="noise variance")
    p.add_argument("--traces", help="export per-slot traces (true/false)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", help="parallel worker processes")


def _spec_from_args(args) -> ExperimentSpec:
    text, source = None, "<config>"
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        source = args.config
    flags = {k: getattr(args, k) for k in _KEYS if hasattr(args, k)}
    return parse_spec(text, flags, source)


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="aoivoi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment grid and write results.csv")
    _flag_args(run_p)
    run_p.add_argument("--figures", action="store_true", help="also render figures")
    show_p = sub.add_parser("show-config", help="print the resolved config")
    _flag_args(show_p)
    fig_p = sub.add_parser("figures", help="render figures from a results CSV")
    fig_p.add_argument("csv")
    fig_p.add_argument("--out", default=None)
    fig_p.add_argument("--kinds", default=None, help="comma list of figure kinds")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        if args.command == "figures":
            rows = read_csv(args.csv)
            out = Path(args.out) if args.out else Path(args.csv).parent / "figures"
            kinds = _items(args.kinds) if args.kinds else None
            for path in emit_figures(rows, out, kinds):
                print(path)
            return EXIT_OK
        spec = _spec_from_args(args)
    except (ConfigError, FigureError) as exc:
        print(f"aoivoi: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "show-config":
        sys.stdout.write(render(spec))
        return EXIT_OK

    out_dir = Path(spec.out)
    result = run_sweep(spec.run_configs(), spec.repetitions, n_jobs=spec.jobs)
    try:
        csv_path = emit_csv(result.rows, out_dir / "results.csv")
        (out_dir / "config.txt").write_text(render(spec))
        if spec.traces:
            _save_traces(result, out_dir)
        if args.figures and result.rows:
            emit_figures(result.rows, out_dir / "figures", a_values=spec.A)
    except OSError as exc:
        print(f"aoivoi: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if result.rows:
        print(_summary(result.rows))
    print(f"wrote {len(result.rows)} rows to {csv_path}")
    for cfg, err in result.failures:
        print(f"aoivoi: cell {cfg.scheduler.value} N={cfg.N} {cfg.R_UL}:{cfg.R_DL} seed={cfg.seed} failed: {err}",
              file=sys.stderr)
    return EXIT_OK if not result.failures else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
