"""Command line front door: ``crit <classify|exact|simulate|verify> --config PATH``."""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, acceptance, bd, config, montecarlo, pgf, stats
from .curves import CurveTable, _json_value
from .errors import ConfigInvalid, CritError, NoSurvivors, TooFewSamples
from .model import hypothesis_report

log = logging.getLogger("critlab")

EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_FAILED = 0, 1, 2, 3
SIM_MOMENT_ORDER = 4


class _Emitter:
    """Writes named artifacts to ``--out`` or, without it, to stdout."""

    def __init__(self, out_dir, fmt, timestamp):
        self.out_dir = Path(out_dir) if out_dir else None
        self.fmt = fmt
        self.stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds") if timestamp else None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    def _write(self, name, text):
        if self.out_dir:
            path = self.out_dir / name
            path.write_text(text, encoding="utf-8", newline="\n")
            log.info("wrote %s", path)
        else:
            sys.stdout.write(text)

    def table(self, stem, table: CurveTable, header=()):
        if self.fmt == "json":
            doc = table.to_dict()
            if self.stamp:
                doc["generated"] = self.stamp
            self._write(f"{stem}.json", json.dumps(doc, indent=2) + "\n")
        else:
            lines = [f"generated: {self.stamp}"] if self.stamp else []
            self._write(f"{stem}.csv", table.to_csv([*lines, *header]))

    def report(self, stem, doc):
        doc = dict(doc)
        if self.stamp:
            doc = {"generated": self.stamp, **doc}
        self._write(f"{stem}.json", json.dumps(_json_value(doc), indent=2) + "\n")


def _grid(exp, horizon=None):
    T = exp.horizon if horizon is None else horizon
    if exp.grid_step:
        return bd.TimeGrid.with_step(T, exp.grid_step)
    return bd.TimeGrid.uniform(T, 100)


def cmd_classify(exp, emit):
    horizon = int(exp.horizon) if exp.kind == "discrete" else exp.horizon
    report = hypothesis_report(exp.model, horizon)
    emit.report(f"{exp.name}_classify", {"model": exp.name, **report.to_dict()})
    return EXIT_OK


def _discrete_exact(exp):
    N = int(exp.horizon)
    R = min(exp.moment_order, pgf.MAX_FACTORIAL_ORDER)
    curve = pgf.discrete_curves(exp.model, N)
    fm = pgf.factorial_moment_curve(exp.model, N, R)
    rows = curve.index
    for name, col in fm.columns.items():
        if name.startswith(("F_", "logF_", "ratio_")):
            curve.add(name, col[rows])
    bounds = pgf.sandwich_curve(exp.model, N, rows)
    curve.add("gamma_bound", bounds["gamma_bound"])
    curve.add("sharp_bound", bounds["sharp_bound"])
    return curve


def _continuous_exact(exp):
    grid = _grid(exp)
    table = bd.continuous_curves(exp.model, grid, exp.moment_order)
    sand = bd.sandwich_curve(exp.model, grid)
    for name in ("bracket_low", "bracket_high", "identity_residual"):
        col = np.concatenate([[1.0 if name != "identity_residual" else 0.0], sand[name]])
        table.add(name, col)
    return table


def cmd_exact(exp, emit):
    table = _discrete_exact(exp) if exp.kind == "discrete" else _continuous_exact(exp)
    emit.table(f"{exp.name}_exact", table, [f"model: {exp.name}", f"kind: {exp.kind}"])
    return EXIT_OK


def cmd_simulate(exp, emit):
    cps = tuple(exp.checkpoints)
    if exp.kind == "discrete":
        cps = tuple(int(c) for c in cps)
    cfg = montecarlo.SimConfig(exp.seed, exp.replicates, cps, workers=exp.workers)
    sim = montecarlo.simulate_discrete if exp.kind == "discrete" else montecarlo.simulate_continuous
    batch = montecarlo.attach_normalizers(sim(exp.model, cfg), exp.model)
    summary = batch.summary()
    tests, sample_rows = [], []
    for row in summary:
        c = row["checkpoint"]
        row["exact_phi"] = batch.exact_phi[c]
        entry = {"checkpoint": c}
        try:
            zeta = montecarlo.conditioned_scaled_samples(batch, c)
        except NoSurvivors:
            tests.append({**entry, "ks": None, "moments": None})
            continue
        sample_rows.append((c, zeta))
        try:
            entry["ks"] = stats.ks_vs_exponential(zeta).to_dict()
        except TooFewSamples as exc:
            entry["ks"] = {"error": str(exc)}
        try:
            mt = stats.empirical_moments_ci(zeta, SIM_MOMENT_ORDER)
            entry["moments"] = {k: v.tolist() for k, v in mt.columns.items()}
        except TooFewSamples as exc:
            entry["moments"] = {"error": str(exc)}
        tests.append(entry)
    doc = {"model": exp.name, "kind": exp.kind, "seed": exp.seed, "replicates": exp.replicates,
           "excluded": batch.excluded, "checkpoints": summary, "tests": tests}
    emit.report(f"{exp.name}_simulate", doc)
    if emit.out_dir and sample_rows:
        cp = np.concatenate([np.full(len(z), c) for c, z in sample_rows])
        zeta = np.concatenate([z for _, z in sample_rows])
        emit.table(f"{exp.name}_samples", CurveTable("checkpoint", cp, {"scaled": zeta}))
    return EXIT_OK


def cmd_verify(seed, emit):
    results = acceptance.run_suite(seed)
    for r in results:
        print(r.line(), flush=True)
    passed = all(r.passed for r in results)
    doc = {"seed": seed, "passed": passed, "criteria": [r.to_dict() for r in results]}
    if emit.out_dir:
        emit.report("verify_report", doc)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return EXIT_OK if passed else EXIT_FAILED


def build_parser():
    p = argparse.ArgumentParser(prog="crit", description="Critical branching and birth-death process toolkit.")
    p.add_argument("--version", action="version", version=f"crit {__version__}")
    p.add_argument("command", choices=["classify", "exact", "simulate", "verify"])
    p.add_argument("--config", help="config file path or bundled reference name "
                                    f"({', '.join(config.bundled_names())})")
    p.add_argument("--seed", type=int, help="override the Monte Carlo master seed (unsigned 64-bit)")
    p.add_argument("--out", help="directory for output files (default: stdout)")
    p.add_argument("--format", choices=["csv", "json"], help="table format (default from config, else csv)")
    p.add_argument("--no-timestamp", action="store_true", help="omit the generation timestamp")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        exp = None
        if args.config:
            exp = config.load(args.config)
        elif args.command != "verify":
            raise ConfigInvalid("--config is required", "")
        fmt = args.format or (exp.output_format if exp else "csv")
        out = args.out or (exp.output_path if exp else None)
        emit = _Emitter(out, fmt, not args.no_timestamp)
        if args.command == "verify":
            seed = args.seed if args.seed is not None else (exp.seed if exp else config.DEFAULT_SEED)
            return cmd_verify(seed, emit)
        if args.seed is not None:
            exp.seed = args.seed
        log.info("%s: %s (%s model)", args.command, exp.name, exp.kind)
        return {"classify": cmd_classify, "exact": cmd_exact, "simulate": cmd_simulate}[args.command](exp, emit)
    except ConfigInvalid as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CritError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except BrokenPipeError:
        sys.stderr.close()
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
