"""Command line runner: ``thermolab <subcommand> [--config FILE] [--set key=value ...]``.

Each subcommand writes ``<out>/<subcommand>.json`` (sorted keys, resolved
config echoed) plus plot-ready CSV files, and exits with

    0  every configured assertion passed
    1  an assertion failed
    2  the command line or the config could not be parsed
    3  capacity or convergence failure

Diagnostics for exit codes 1 to 3 go to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from pathlib import Path

from .config import SUBCOMMANDS, ConfigError, build, load_config

EXIT_OK, EXIT_ASSERT, EXIT_PARSE, EXIT_CAPACITY = 0, 1, 2, 3
STREAM_RULE = "PCG64(SeedSequence([seed & 0xffffffff, seed >> 32, crc32(module), replica]))"


class Outcome:
    """Accumulates results, named checks and warnings for one run."""

    def __init__(self, name: str, cfg: dict):
        self.name = name
        self.cfg = cfg
        self.results: dict = {}
        self.checks: dict = {}
        self.warnings: list[str] = []
        self.csv: dict[str, tuple[list[str], list]] = {}
        self.provenance: dict = {"seed": cfg["run"]["seed"], "stream_rule": STREAM_RULE}

    def check(self, name: str, passed: bool, value=None, tolerance=None, enforced: bool = True):
        self.checks[name] = {"passed": bool(passed), "value": value, "tolerance": tolerance, "enforced": enforced}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values() if c["enforced"])

    def document(self) -> dict:
        return {
            "command": self.name,
            "config": self.cfg,
            "results": self.results,
            "checks": self.checks,
            "passed": self.passed,
            "warnings": self.warnings,
            "provenance": self.provenance,
        }


def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _plain(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps(doc: dict) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) or hasattr(v, "dtype") and v.dtype.kind == "f"
                             else v for v in row])


def _word(symbols) -> str:
    return "".join(str(int(s)) for s in symbols)


# ---------------------------------------------------------------------------
# subcommands


def run_spectral(out: Outcome, cfg: dict) -> None:
    from .lattice import decode_index
    from .transfer import NotConvergedError, build_truncated_operator, leading_multiplicity, power_iterate

    ex = build(cfg)
    opts = cfg["spectral"]
    L = build_truncated_operator(ex.potential, ex.weights, ex.depth, ex.alphabet, cfg["run"]["max_states"])
    sd = _converged(power_iterate(L, ex.tol), NotConvergedError)
    mult = leading_multiplicity(L, sd.rho, tol=opts["multiplicity_tol"])
    out.results["spectral"] = sd.as_dict()
    out.results["multiplicity"] = mult.as_dict()
    out.provenance.update(depth=ex.depth, tail_bound=L.tail_bound, potential_depth=ex.potential.depth)
    res = max(sd.right_residual, sd.left_residual)
    out.check("residual", res < opts["residual_max"], res, opts["residual_max"])
    out.check("h_positive", sd.h.min() > 0, float(sd.h.min()), 0.0)
    out.check("nu_positive", sd.nu.min() > 0, float(sd.nu.min()), 0.0)
    out.check("multiplicity", mult.multiplicity == opts["expect_multiplicity"], mult.multiplicity,
              opts["expect_multiplicity"])
    k, D = L.k, L.depth
    out.csv["spectral_vectors.csv"] = (
        ["index", "word", "h", "nu"],
        [(i, _word(decode_index(i, k, D).symbols), float(sd.h[i]), float(sd.nu[i])) for i in range(L.size)],
    )


def _converged(sd, error):
    if not sd.converged:
        raise error(f"power iteration residuals {sd.right_residual:.3g}, {sd.left_residual:.3g} above tol {sd.tol:g}")
    return sd


def run_conformal(out: Outcome, cfg: dict) -> None:
    import numpy as np

    from .conformal import check_full_support, check_h1, conditional_conformal
    from .lattice import CylinderFunction
    from .transfer import NotConvergedError, build_truncated_operator, power_iterate

    ex = build(cfg)
    opts = cfg["conformal"]
    L = build_truncated_operator(ex.potential, ex.weights, ex.depth, ex.alphabet, cfg["run"]["max_states"])
    sd = _converged(power_iterate(L, ex.tol), NotConvergedError)
    nu = sd.nu_measure()
    out.results["rho"] = sd.rho
    out.provenance.update(depth=ex.depth, tail_bound=L.tail_bound)
    support = [check_full_support(nu, ex.potential, ex.weights, sd.rho, n, ex.alphabet, opts["support_tol"])
               for n in range(1, ex.depth + 1)]
    out.results["support"] = [r.as_dict() for r in support]
    worst = min(r.ratio for r in support)
    out.check("full_support", all(r.passed for r in support), worst, 1.0 - opts["support_tol"])
    out.csv["conformal_support.csv"] = (["n", "min_mass", "ratio"], [(r.depth, r.min_mass, r.ratio) for r in support])
    if ex.depth >= 2:
        h1 = check_h1(nu, ex.weights, ex.potential, sd.rho, ex.alphabet, opts["h1_tol"])
        out.results["h1"] = h1.as_dict()
        out.check("h1", h1.passed, h1.max_ratio / h1.K, 1.0 + opts["h1_tol"])
    else:
        out.warnings.append("H1 check needs depth >= 2; skipped")
    if opts["condition_on"]:
        ind = np.zeros(L.size)
        for wd in opts["condition_on"]:
            ind = np.maximum(ind, CylinderFunction.indicator(wd, ex.depth, L.k).values)
        cond = conditional_conformal(nu, ind, L, sd.rho, opts["invariance_tol"])
        out.results["conditional"] = {"condition_on": opts["condition_on"], **cond.as_dict()}


def run_specification(out: Outcome, cfg: dict) -> None:
    import numpy as np

    from .conformal import boundary_sensitivity_scan, kernel_consistency, kernel_partition_sum
    from .lattice import Word
    from .transfer import NotConvergedError, build_truncated_operator, power_iterate

    ex = build(cfg)
    opts = cfg["specification"]
    f, w, A = ex.potential, ex.weights, ex.alphabet
    event = Word(tuple(opts["event"]))
    boundaries = [Word(tuple(b)) for b in opts["boundaries"]]
    n_list = sorted(opts["n_list"])
    table = boundary_sensitivity_scan(f, w, event, boundaries, n_list, A)
    out.csv["specification_kernel.csv"] = (["n", "boundary", "event", "value", "lower", "upper"], list(table.rows()))
    out.csv["specification_sensitivity.csv"] = (["n", "discrepancy"], list(zip(n_list, table.discrepancy.tolist())))
    out.results["discrepancy"] = table.discrepancy
    out.results["boundary_convention"] = "boundaries are extended periodically beyond their length"
    out.provenance.update(potential_depth=f.depth, tail_bound=f.tail_bound)

    sums = [(n, j, kernel_partition_sum(f, w, n, b, A)) for n in n_list for j, b in enumerate(boundaries)]
    worst = max(abs(s - 1.0) for _, _, s in sums)
    out.results["partition_sums"] = [{"n": n, "boundary": j, "sum": s} for n, j, s in sums]
    out.check("partition_sum", worst <= opts["partition_tol"], worst, opts["partition_tol"])

    if f.kind in ("constant", "tabulated"):
        r = max(f.depth - 1, 1)
        gaps = []
        for n in n_list:
            L = build_truncated_operator(f, w, n + r, A, cfg["run"]["max_states"])
            sd = _converged(power_iterate(L, ex.tol), NotConvergedError)
            mass, avg = kernel_consistency(f, w, event, n, sd.nu_measure(), A)
            gaps.append({"n": n, "nu_A": mass, "average_kernel": avg, "gap": abs(mass - avg)})
        out.results["consistency"] = gaps
        worst = max(g["gap"] for g in gaps)
        out.check("consistency", worst <= opts["consistency_tol"], worst, opts["consistency_tol"])
    else:
        out.warnings.append(f"consistency check is run for finite-range potentials only (kind {f.kind!r})")

    disc = table.discrepancy
    if opts["expect"] == "decay":
        out.check("discrepancy_decays", bool(np.all(np.diff(disc) < 0)), disc.tolist(), "strictly decreasing")
    elif opts["expect"] == "persist":
        if f.kind != "mean-field":
            raise ConfigError('expect = "persist" is defined for the mean-field potential', "specification.expect")
        threshold = math.tanh(f.beta * abs(f.gamma)) / 2
        out.check("discrepancy_persists", bool(disc.min() > threshold), float(disc.min()), threshold)


def run_curie_weiss(out: Outcome, cfg: dict) -> None:
    from .curie_weiss import classify_phase, cw_spectral_data, sample_mixture, solve_magnetization, \
        verify_generalized_conformal

    opts = cfg["curie-weiss"]
    seed = cfg["run"]["seed"]
    beta = float(opts["beta"])
    sol = solve_magnetization(beta)
    cw = cw_spectral_data(beta)
    out.results["fixed_point"] = {"roots": sol.roots, "residuals": sol.residuals, "regime": sol.regime}
    out.results["spectral"] = cw.as_dict()
    out.check("fixed_point", max(sol.residuals) < opts["root_tol"], max(sol.residuals), opts["root_tol"])
    if sol.regime == "supercritical":
        out.check("eigenvalue_above_2", cw.eigenvalue > 2.0, cw.eigenvalue, 2.0)
        rep = verify_generalized_conformal(beta, opts["N"], opts["count"], seed, opts["k_se"])
        out.results["conformal_mc"] = rep.as_dict()
        out.warnings.extend(rep.notes)
        out.check("conformal_mc", rep.passed, {"plus_z": rep.plus.z, "minus_z": rep.minus.z},
                  f"{rep.k_se:g} SE + horizon bias")
    else:
        out.check("single_root", sol.roots == [0.0], sol.roots, [0.0])
    t = float(opts["mixture_t"])
    sample = sample_mixture(beta, t, opts["N"], opts["mixture_count"], seed)
    phase = classify_phase(sample, beta, opts["N"])
    out.results["phases"] = phase.as_dict()
    out.warnings.extend(phase.notes)
    mixed = sol.regime == "supercritical" and 0.0 < t < 1.0
    expected_dim = 2 if mixed else 1
    out.check("dimension", phase.dimension == expected_dim, phase.dimension, expected_dim)
    if mixed:
        k = opts["k_se"]
        for c, target in (("plus", t), ("minus", 1.0 - t)):
            q, se = phase.fractions[c], phase.fraction_se[c]
            out.check(f"mass_{c}", abs(q - target) <= k * se, q, {"target": target, "band": k * se})
    out.check("harmonic_ratio", phase.shf_passed(opts["k_se"]),
              {c: e.z for c, e in phase.shf.items()}, f"{opts['k_se']:g} SE + horizon bias")
    out.provenance.update(horizon_N=opts["N"], horizon_note="m(x) replaced by the empirical mean of N coordinates")


def run_fclt(out: Outcome, cfg: dict) -> None:
    from .lattice import CylinderFunction
    from .markov import asymptotic_variance, fclt_experiment, make_kernel, solve_poisson
    from .transfer import center, normalize_potential

    ex = build(cfg)
    opts = cfg["fclt"]
    fbar, residual = normalize_potential(ex.potential, ex.weights, ex.depth, ex.tol, ex.alphabet)
    kernel = make_kernel(fbar, ex.weights, ex.depth, ex.alphabet)
    phi = CylinderFunction.coordinate(ex.alphabet, ex.depth, opts["position"])
    nu = kernel.stationary()
    sol = solve_poisson(kernel.L, center(phi, nu), nu)
    var = asymptotic_variance(kernel.L, nu, sol)
    out.results["normalization_residual"] = residual
    out.results["poisson"] = sol.as_dict()
    out.results["variance"] = var.as_dict()
    out.provenance.update(depth=ex.depth, normalized_potential_depth=fbar.depth)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = fclt_experiment(kernel, phi, opts["n"], opts["replicas"], cfg["run"]["seed"], opts["t_grid"],
                              var.sigma2_poisson, opts["significance"], opts["k_se"])
    underpowered = opts["replicas"] < 100
    out.warnings.extend(str(w.message) for w in caught)
    out.results["fclt"] = rep.as_dict()
    out.results["underpowered"] = underpowered
    out.check("variance_agreement", var.agreement <= 1e-10 * max(1.0, var.sigma2_poisson), var.agreement, 1e-10)
    out.check("fclt", rep.passed, {"ks": rep.ks_statistic, "var_y1": rep.var_y1},
              {"ks_critical": rep.ks_critical, "k_se": opts["k_se"]}, enforced=not underpowered)
    out.csv["fclt_samples.csv"] = (["replica", "y1"], [(r, float(y)) for r, y in enumerate(rep.y1)])


def run_dyson(out: Outcome, cfg: dict) -> None:
    from .longrange import birkhoff_flatness_check, dyson_decay_profile, modulus_check

    opts = cfg["dyson"]
    seed = cfg["run"]["seed"]
    eps = float(opts["epsilon"])
    mod = modulus_check(eps, opts["pairs"], opts["N_list"], seed)
    out.results["modulus"] = mod.as_dict()
    out.check("modulus", mod.passed, mod.worst_ratio, mod.bound)
    out.csv["dyson_modulus.csv"] = (["N", "ratio"], sorted(mod.ratio_by_N.items()))
    if eps > 1:
        fl = birkhoff_flatness_check(eps, opts["flatness_n"], opts["flatness_pairs"], seed, opts["flatness_N_list"])
        out.results["flatness"] = fl.as_dict()
        out.check("flatness", fl.passed, fl.worst_ratio, 1.0)
        out.csv["dyson_flatness.csv"] = (["N", "ratio"], sorted(fl.ratio_by_N.items()))
    else:
        out.warnings.append("flatness needs epsilon > 1; skipped")
    prof = dyson_decay_profile(eps, opts["depth"], window=tuple(opts["window"]), slack=opts["slack"],
                               tol=cfg["run"]["tol"])
    out.results["decay"] = prof.as_dict()
    out.warnings.extend(prof.notes)
    out.check("normalization", prof.normalization_residual < opts["residual_max"], prof.normalization_residual,
              opts["residual_max"])
    out.check("decay_slope", prof.passed, prof.slope, prof.target + prof.slack, enforced=not prof.degenerate)
    out.csv["dyson_decay.csv"] = (["n", "norm", "bound"], list(prof.rows()))
    out.provenance.update(truncation_modulus=mod.truncation, tail_modulus=mod.tail, decay_depth=opts["depth"],
                          decay_truncation=prof.m)


def run_entropy(out: Outcome, cfg: dict) -> None:
    from .conformal import block_relative_entropy, pressure_check
    from .lattice import CylinderMeasure

    ex = build(cfg)
    opts = cfg["entropy"]
    if ex.potential.depth > 2:
        raise ConfigError("entropy runs on potentials of range <= 2", "potential.kind")
    if ex.weights.normalized:
        H = [block_relative_entropy(CylinderMeasure.product(ex.weights, n), ex.weights) for n in opts["n_list"]]
        out.results["product_reference"] = {"n": opts["n_list"], "block_relative_entropy": H}
        out.check("product_entropy_zero", all(h == 0.0 for h in H), max(abs(h) for h in H), 0.0)
    pc = pressure_check(ex.potential, ex.weights, ex.alphabet, opts["n_list"], opts["tol"])
    out.results["pressure"] = pc.as_dict()
    out.check("pressure_identity", pc.passed, {"slope": pc.gap, "exact": pc.gap_exact}, opts["tol"])


RUNNERS = {
    "spectral": run_spectral,
    "conformal": run_conformal,
    "specification": run_specification,
    "curie-weiss": run_curie_weiss,
    "fclt": run_fclt,
    "dyson": run_dyson,
    "entropy": run_entropy,
}


# ---------------------------------------------------------------------------
# entry point


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermolab", description="Transfer-operator experiments.")
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="TOML experiment file")
    parser.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    parser.add_argument("--out", help="output directory (default: $THERMOLAB_OUT or .)")
    parser.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry by dot path (repeatable)")
    return parser


def _diagnostic(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(json.dumps(exc.as_dict(), sort_keys=True), file=sys.stderr)
        return EXIT_PARSE
    threads = str(cfg["run"]["threads"])
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = threads
    out_dir = Path(args.out or os.environ.get("THERMOLAB_OUT") or ".")

    from .lattice import LatticeError
    from .markov import DegenerateObservable, NotNormalizedError, PoissonDivergence
    from .transfer import CapacityError, NotConvergedError, StabilityError

    outcome = Outcome(args.command, cfg)
    try:
        RUNNERS[args.command](outcome, cfg)
    except ConfigError as exc:
        print(json.dumps(exc.as_dict(), sort_keys=True), file=sys.stderr)
        return EXIT_PARSE
    except (CapacityError, NotConvergedError, StabilityError, PoissonDivergence) as exc:
        _diagnostic(type(exc).__name__, str(exc))
        return EXIT_CAPACITY
    except (DegenerateObservable, NotNormalizedError) as exc:
        _diagnostic(type(exc).__name__, str(exc))
        return EXIT_ASSERT
    except LatticeError as exc:
        _diagnostic("config", str(exc))
        return EXIT_PARSE

    out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.command.replace("-", "_")
    (out_dir / f"{stem}.json").write_text(dumps(outcome.document()), encoding="utf-8", newline="\n")
    for name, (header, rows) in outcome.csv.items():
        write_csv(out_dir / name, header, rows)
    if not outcome.passed:
        failed = sorted(k for k, c in outcome.checks.items() if c["enforced"] and not c["passed"])
        _diagnostic("assertion", f"failed checks: {', '.join(failed)}", checks=failed)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
