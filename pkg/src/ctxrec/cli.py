"""Command line entry point: ``ctxrec simulate | compare | export``."""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from . import __version__, config as cfgmod, sim

log = logging.getLogger("ctxrec")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTERNAL = 4
EXIT_DATA = 5

MANIFEST = "manifest.json"
TRIALS = "trials.tsv"
CURVES = "curves.tsv"
EXPORT_FORMATS = ("csv", "tsv", "json")
BASELINES = ("qlearning", "qlearning-greedy")
EARLY_WINDOWS = 5
# settings that must agree for runs to be comparable
SHAPE_KEYS = ("n_teams", "users_per_team", "n_resources", "n_trials", "window")


class CliError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def parse_seeds(text: str) -> List[int]:
    """``"0-29"``, ``"1,2,5"`` or a mix such as ``"0-4,10"``."""
    seeds: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
        except ValueError:
            raise CliError(EXIT_CONFIG, f"--seeds: cannot parse {part!r}") from None
    if not seeds:
        raise CliError(EXIT_CONFIG, "--seeds: empty seed list")
    return seeds


# -- simulate -----------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    overrides = list(args.set or [])
    if args.seeds:
        overrides.append(f"sim.seeds={json.dumps(parse_seeds(args.seeds))}")
    if args.variants:
        overrides.append(f"sim.variants={json.dumps(args.variants.split(','))}")
    if args.trials is not None:
        overrides.append(f"sim.n_trials={args.trials}")
        if args.trials % 10 and not any(o.startswith("sim.window=") for o in overrides):
            overrides.append(f"sim.window={args.trials}")
    try:
        raw = cfgmod.read_raw(args.config)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config: {exc}") from None
    try:
        config = cfgmod.from_dict(cfgmod.apply_overrides(raw, overrides))
    except cfgmod.ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error at {exc}") from None

    out = Path(args.out)
    started = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    log.info("running %d seeds x %s", len(config.sim.seeds), config.sim.variants)
    result = sim.run_experiment(config, parallelism=args.parallelism)
    finished = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / TRIALS).write_text(sim.dump_trials(result.logs), encoding="utf-8")
        (out / CURVES).write_text(sim.dump_curves(result), encoding="utf-8")
        manifest = {
            "format": "ctxrec-run-manifest",
            "version": 1,
            "code_version": __version__,
            "config": config.to_dict(),
            "seeds": config.sim.seeds,
            "variants": config.sim.variants,
            "started": started,
            "finished": finished,
            "outputs": {"trials": TRIALS, "curves": CURVES},
        }
        (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write outputs: {exc}") from None

    for variant, curve in sim.mean_curves(result).items():
        print(f"{variant:18s} " + " ".join(f"{v:.3f}" for v in curve))
    print(f"wrote {out}")
    return EXIT_OK


# -- loading run directories ----------------------------------------------------


def load_run(directory: Path) -> Tuple[dict, List[sim.TrialRecord]]:
    try:
        manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
        trials = sim.load_trials((directory / TRIALS).read_text(encoding="utf-8"), str(directory / TRIALS))
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, f"{directory}: not a run directory ({exc.filename} missing)") from None
    except OSError as exc:
        raise CliError(EXIT_IO, f"{directory}: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_DATA, f"{directory}: {exc}") from None
    return manifest, trials


def curves_from(trials: Sequence[sim.TrialRecord], window: int) -> Dict[Tuple[int, str, str], List[float]]:
    runs: Dict[Tuple[int, str, str], List[sim.TrialRecord]] = {}
    for r in trials:
        runs.setdefault((r.seed, r.variant, r.user_id), []).append(r)
    return {k: sim.precision_curve(v, window).values for k, v in runs.items()}


def window_stats(curves: Dict[Tuple[int, str, str], List[float]]) -> Dict[str, Tuple[np.ndarray, np.ndarray, int]]:
    by_variant: Dict[str, List[List[float]]] = {}
    for (_, variant, _), values in sorted(curves.items()):
        by_variant.setdefault(variant, []).append(values)
    out = {}
    for variant, rows in by_variant.items():
        a = np.array(rows)
        std = a.std(axis=0, ddof=1) if len(a) > 1 else np.zeros(a.shape[1])
        out[variant] = (a.mean(axis=0), std, len(a))
    return out


def early_by_seed(curves, variant: str) -> Dict[int, float]:
    acc: Dict[int, List[float]] = {}
    for (seed, v, _), values in curves.items():
        if v == variant:
            acc.setdefault(seed, []).append(float(np.mean(values[:EARLY_WINDOWS])))
    return {s: float(np.mean(x)) for s, x in acc.items()}


def ordering_verdict(curves) -> Optional[str]:
    variants = {v for _, v, _ in curves}
    baseline = next((b for b in BASELINES if b in variants), None)
    if "hyql" not in variants or baseline is None:
        return None
    h, b = early_by_seed(curves, "hyql"), early_by_seed(curves, baseline)
    seeds = sorted(set(h) & set(b))
    diffs = np.array([h[s] - b[s] for s in seeds])
    head = (f"windows 1-{EARLY_WINDOWS}: hyql {np.mean([h[s] for s in seeds]):.3f} vs "
            f"{baseline} {np.mean([b[s] for s in seeds]):.3f} over {len(seeds)} paired seeds")
    if len(seeds) < 2 or np.all(diffs == diffs[0]):
        ok = len(seeds) > 0 and diffs[0] > 0
        return f"{head}; {'HyQL ahead' if ok else 'HyQL not ahead'} (too few distinct pairs for a test)"
    t = stats.ttest_rel([h[s] for s in seeds], [b[s] for s in seeds], alternative="greater")
    ok = bool(diffs.mean() > 0 and t.pvalue < 0.05)
    word = "HyQL > baseline at 95% confidence" if ok else "ordering NOT established"
    return f"{head}; mean diff {diffs.mean():+.3f}, t={t.statistic:.2f}, p={t.pvalue:.2g}: {word}"


# -- compare ------------------------------------------------------------------


def cmd_compare(args: argparse.Namespace) -> int:
    dirs = [Path(d) for d in args.dirs]
    loaded = [load_run(d) for d in dirs]
    shapes = [{k: m["config"]["sim"][k] for k in SHAPE_KEYS} for m, _ in loaded]
    for d, shape in zip(dirs[1:], shapes[1:]):
        if shape != shapes[0]:
            raise CliError(EXIT_DATA, f"{d}: manifest incompatible with {dirs[0]}: {shape} vs {shapes[0]}")
    window = shapes[0]["window"]

    per_dir = []
    for (_, trials) in loaded:
        per_dir.append(curves_from(trials, window))

    print("dir\tvariant\twindow\tmean\tstd\truns")
    table = []
    for d, curves in zip(dirs, per_dir):
        st = window_stats(curves)
        table.append(st)
        for variant, (mean, std, n) in st.items():
            for w, (m, s) in enumerate(zip(mean, std), start=1):
                print(f"{d}\t{variant}\t{w}\t{m:.4f}\t{s:.4f}\t{n}")

    if len(dirs) > 1:
        print()
        print("dir\tvariant\twindow\tdiff_vs_first")
        for d, st in zip(dirs[1:], table[1:]):
            for variant, (mean, _, _) in st.items():
                if variant in table[0]:
                    for w, delta in enumerate(mean - table[0][variant][0], start=1):
                        print(f"{d}\t{variant}\t{w}\t{delta:+.4f}")
        pooled: Dict[Tuple[int, str, str], List[float]] = {}
        for curves in per_dir:
            for k, v in curves.items():
                pooled.setdefault(k, v)
        verdict = ordering_verdict(pooled)
        print()
        print("verdict: " + (verdict or "no hyql/baseline pair to compare"))
    return EXIT_OK


# -- export -------------------------------------------------------------------


def cmd_export(args: argparse.Namespace) -> int:
    if args.format not in EXPORT_FORMATS:
        raise CliError(EXIT_CONFIG, f"--format: unknown format {args.format!r}; choose from {EXPORT_FORMATS}")
    d = Path(args.dir)
    manifest, trials = load_run(d)
    if not trials:
        raise CliError(EXIT_DATA, f"{d}: run contains no trials")
    st = window_stats(curves_from(trials, manifest["config"]["sim"]["window"]))
    rows = []
    for variant in sorted(st):
        mean, std, n = st[variant]
        for w, (m, s) in enumerate(zip(mean, std), start=1):
            rows.append({"variant": variant, "window": w, "mean_precision": round(float(m), 6),
                         "std": round(float(s), 6), "runs": n})
    target = d / f"precision_by_window.{args.format}"
    if args.format == "json":
        text = json.dumps(rows, indent=1, sort_keys=True) + "\n"
    else:
        sep = "," if args.format == "csv" else "\t"
        cols = ["variant", "window", "mean_precision", "std", "runs"]
        text = sep.join(cols) + "\n" + "".join(sep.join(str(r[c]) for c in cols) + "\n" for r in rows)
    try:
        target.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {target}: {exc}") from None
    print(target)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ctxrec",
        description="Cold-start comparison of plain Q-learning and hybrid CBR+CF Q-learning.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the simulated experiment and write logs, curves and a manifest")
    s.add_argument("--config", help=f"YAML config or run manifest (default: ${cfgmod.CONFIG_ENV} or the bundled default)")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. --set learning.p=0.8 (repeatable)")
    s.add_argument("--seeds", help="seed list, e.g. 0-29 or 1,2,3")
    s.add_argument("--variants", help="comma-separated: qlearning, qlearning-greedy, hyql")
    s.add_argument("--trials", type=int, help="trials per run (sim.n_trials)")
    s.add_argument("--out", default="runs/latest", help="output directory (default: %(default)s)")
    s.add_argument("--parallelism", type=int, default=1, help="worker processes (default: %(default)s)")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="per-window mean/std per variant across run directories")
    c.add_argument("dirs", nargs="+", help="run directories written by simulate")
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("export", help="write a variant x window precision table for plotting")
    e.add_argument("dir", help="run directory")
    e.add_argument("--format", default="csv", help=f"one of {', '.join(EXPORT_FORMATS)} (default: %(default)s)")
    e.set_defaults(func=cmd_export)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ctxrec: error: {exc}", file=sys.stderr)
        return exc.code
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
