"""Batch command-line front end.

``qkam <command> CONFIG.yaml`` validates the configuration, runs the pipeline
entirely in memory and only then writes its artifacts (each through a temporary
file and an atomic rename) followed by a ``MANIFEST`` of SHA-256 checksums.  A
failing run therefore leaves no artifacts behind.

Exit codes: 0 success, 1 I/O failure, 2 invalid configuration, 3 exhausted
diophantine budget, 4 exact zero divisor, 5 truncation overflow, 6 ambiguous
spectral matches (artifacts are still written in that case).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import COMMANDS, ConfigError, RunConfig, load_config
from .diophantine import GammaExhausted, check_diophantine, excision_report, lattice_vectors, zone_measure
from .engine import (
    EngineConfig,
    InvalidPerturbation,
    LocalityViolation,
    TruncationOverflow,
    frequency_series,
    predict_quantization,
    residual_at,
    run,
)
from .fitting import loglog_fit
from .norms import gaussian_examples, verify_lemma_estimates
from .quantize import (
    AmbiguousMatch,
    assemble_hamiltonian,
    basis_indices,
    antiwick_remainder_norm,
    match_spectrum,
    prop_a1_scaling,
    spectrum,
    truncation_drift,
)
from .symbols import PolySymbol, ZeroDivisor

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_GAMMA = 3
EXIT_ZERO_DIVISOR = 4
EXIT_OVERFLOW = 5
EXIT_AMBIGUOUS = 6

OUTPUT_ENV = "QKAM_OUTPUT_DIR"
# eigenvalues moving more than DRIFT_TOL * hbar between cutoffs N and 2N are not matched
DRIFT_TOL = 1e-10

CONVERGENCE_COLUMNS = ["p", "measured_residual", "theoretical_bound", "gamma_p"]
SUPERCONVERGENCE_COLUMNS = ["p", "epsilon", "residual", "fitted_slope", "stderr"]
SPECTRUM_COLUMNS = ["epsilon", "hbar", "alpha", "E_diagonalized", "E_predicted_formula",
                    "E_predicted_with_remainder", "residual", "trunc_drift"]
SCALING_COLUMNS = ["experiment", "x", "y", "fitted_slope", "stderr"]
DIOPHANTINE_COLUMNS = ["k", "divisor", "margin"]
ZONE_COLUMNS = ["k", "alpha", "measure", "stderr", "bound"]
EXCISION_COLUMNS = ["K", "bound", "mc_estimate", "stderr"]
LEMMA_COLUMNS = ["lemma_id", "example", "rho", "sigma", "d", "delta", "delta_p", "gamma", "tau",
                 "measured", "bound", "ratio", "quad_error"]


# ---------------------------------------------------------------------- formatting
def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return " ".join(str(x) for x in v)
    return str(v)


def csv_bytes(columns: list, rows: list) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue().encode()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n").encode()


def _slope(xs, ys) -> tuple:
    pts = [(x, y) for x, y in zip(xs, ys) if x > 0 and y > 0]
    if len(pts) < 2:
        return math.nan, math.nan
    return loglog_fit([p[0] for p in pts], [p[1] for p in pts])


def _pool_map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------- pipelines
def _engine_config(cfg: RunConfig, eps, hbar, mode: str | None = None) -> EngineConfig:
    return EngineConfig(
        cfg.frame.omega, cfg.perturbation(), gamma=cfg.gamma, tau=cfg.tau, K=cfg.K, P=cfg.P,
        mode=mode or cfg.mode, epsilon=eps, hbar=hbar, rho=cfg.rho, sigma=cfg.sigma,
        degree_cap=cfg.D, overflow_fraction=cfg.overflow_fraction,
    )


def _scalar_series_json(series) -> list:
    return [{"order": e, "coefficient": v.to_triples()} for e, v in series]


def normal_form_artifacts(cfg: RunConfig, jobs: int = 1) -> dict:
    """``convergence.csv``, ``superconvergence.csv`` and ``normal_form.json``."""
    eps_list = cfg.epsilon_q
    if not eps_list:
        return {
            "convergence.csv": csv_bytes(CONVERGENCE_COLUMNS, []),
            "superconvergence.csv": csv_bytes(SUPERCONVERGENCE_COLUMNS, []),
            "normal_form.json": json_bytes({"config": cfg.to_dict(), "result": None}),
        }
    hb = cfg.hbar_q[0]
    history: list = []
    state, cert = run(_engine_config(cfg, eps_list[0], hb), history=history)
    conv = [
        {"p": p, "measured_residual": cert.measured_residuals[p - 1],
         "theoretical_bound": cert.theoretical_bounds[p - 1], "gamma_p": cert.gamma_history[p]}
        for p in range(1, cert.steps + 1)
    ]
    sup = []
    for st in history[1:]:
        eps_pos = [e for e in eps_list if e > 0]
        res = [residual_at(st, e, hb) for e in eps_pos]
        slope, err = _slope([float(e) for e in eps_pos], res)
        sup += [{"p": st.step, "epsilon": float(e), "residual": r, "fitted_slope": slope, "stderr": err}
                for e, r in zip(eps_pos, res)]
    result = {
        "frequencies": [_scalar_series_json(s) for s in frequency_series(state)],
        "energy": _scalar_series_json(sorted(state.energy.items())),
        "remainders": [[{"order": e, "terms": v.to_records()} for e, v in sorted(r.items())]
                       for r in state.remainders],
        "residual": [{"order": e, "terms": v.to_records()} for e, v in sorted(state.Q.items())],
        "certificate": cert.to_dict(),
        "warnings": [{"k": list(w.k), "divisor": w.divisor, "threshold": w.threshold} for w in state.warnings],
    }
    return {
        "convergence.csv": csv_bytes(CONVERGENCE_COLUMNS, conv),
        "superconvergence.csv": csv_bytes(SUPERCONVERGENCE_COLUMNS, sup),
        "normal_form.json": json_bytes({"config": cfg.to_dict(), "result": result}),
    }


def _spectrum_case(args):
    cfg, state, eps, hb, alphas = args
    H = assemble_hamiltonian(cfg.frame, cfg.perturbation(), eps, hb, cfg.N)
    eigs = spectrum(H)
    if eps:
        eigs2 = spectrum(assemble_hamiltonian(cfg.frame, cfg.perturbation(), eps, hb, 2 * cfg.N))
        drift = truncation_drift(eigs, eigs2)
    else:
        drift = np.zeros_like(eigs)
    rep = match_spectrum(
        eigs,
        lambda a: predict_quantization(state, a, hb, eps),
        alphas,
        cfg.eta,
        float(hb),
        predictor_remainder=lambda a: predict_quantization(state, a, hb, eps, with_remainder=True),
        drift=drift,
        drift_tol=DRIFT_TOL * float(hb),
        strict=False,
    )
    return rep.matched, rep.ambiguous


def spectrum_artifacts(cfg: RunConfig, jobs: int = 1) -> tuple:
    """``spectrum.csv`` and ``scaling.csv``; returns ``(artifacts, n_conflicts)``."""
    eps_list, hb_list = cfg.epsilon_q, cfg.hbar_q
    alphas = [a for a in basis_indices(cfg.l, cfg.max_alpha + 1) if sum(a) <= cfg.max_alpha]
    rows, scal, n_conf = [], [], 0
    if eps_list and hb_list:
        state, _ = run(_engine_config(cfg, max(eps_list), max(hb_list)))
        cases = [(cfg, state, e, h, alphas) for h in hb_list for e in eps_list]
        for (_, _, e, h, _), (matched, conflicts) in zip(cases, _pool_map(_spectrum_case, cases, jobs)):
            n_conf += len(conflicts)
            for m in sorted(matched, key=lambda m: (sum(m.alpha), m.alpha)):
                rows.append({"epsilon": float(e), "hbar": float(h), "alpha": m.alpha, "E_diagonalized": m.e_diag,
                             "E_predicted_formula": m.e_pred, "E_predicted_with_remainder": m.e_pred_remainder,
                             "residual": m.residual, "trunc_drift": m.trunc_drift})
            base = {m.alpha: m.residual for m in matched}
            pts = [(sum(a) * float(h), abs(r)) for a, r in sorted(base.items()) if sum(a) > 0]
            slope, err = _slope([p[0] for p in pts], [p[1] for p in pts])
            name = f"formula_residual eps={float(e)!r} hbar={float(h)!r}"
            scal += [{"experiment": name, "x": x, "y": y, "fitted_slope": slope, "stderr": err} for x, y in pts]
    return {
        "spectrum.csv": csv_bytes(SPECTRUM_COLUMNS, rows),
        "scaling.csv": csv_bytes(SCALING_COLUMNS, scal),
    }, n_conf


def _excision_case(args):
    K, cfg = args
    return excision_report(K, cfg.gamma, cfg.tau, cfg.l, K_big=max(cfg.K_big, K), n_samples=cfg.n_samples,
                           seed=cfg.seed)


def diophantine_artifacts(cfg: RunConfig, jobs: int = 1) -> dict:
    """``diophantine.csv``, ``zones.csv`` and ``excision.csv`` (seeded, deterministic)."""
    chk = check_diophantine(cfg.frame.omega, cfg.gamma, cfg.tau, cfg.K_max, keep_rows=True)
    dio = [{"k": k, "divisor": d, "margin": m} for k, d, m in chk.rows]
    zones = []
    if cfg.n_samples > 0:
        for k in lattice_vectors(cfg.l, cfg.K_max):
            if k < tuple(-c for c in k):
                continue
            for a in cfg.zone_alpha:
                z = zone_measure(k, a, cfg.n_samples, cfg.seed)
                zones.append({"k": k, "alpha": float(a), "measure": z.mc_estimate, "stderr": z.stderr,
                              "bound": z.bound})
    exc = []
    if cfg.n_samples > 0:
        for rep in _pool_map(_excision_case, [(K, cfg) for K in cfg.excision_K], jobs):
            exc.append({"K": rep.K, "bound": rep.total_excised_bound, "mc_estimate": rep.mc_estimate,
                        "stderr": rep.stderr})
    summary = {"passed": chk.passed, "worst_k": list(chk.worst_k) if chk.worst_k else None,
               "worst_margin": chk.worst_margin, "gamma": cfg.gamma, "tau": cfg.tau, "K_max": cfg.K_max,
               "seed": cfg.seed}
    return {
        "diophantine.csv": csv_bytes(DIOPHANTINE_COLUMNS, dio),
        "zones.csv": csv_bytes(ZONE_COLUMNS, zones),
        "excision.csv": csv_bytes(EXCISION_COLUMNS, exc),
        "diophantine.json": json_bytes(summary),
    }


def _lemma_case(args):
    i, g, gp, cfg = args
    rho, sigma = float(cfg.rho), float(cfg.sigma)
    rows = verify_lemma_estimates(g, gp, rho, sigma, rho / 2, sigma / 4, sigma / 4, cfg.gamma, cfg.tau,
                                  omega=cfg.frame.omega)
    return [dict(r.params, lemma_id=r.lemma_id, example=i, measured=r.measured, bound=r.bound, ratio=r.ratio,
                 quad_error=r.quad_error) for r in rows]


def lemma_artifacts(cfg: RunConfig, jobs: int = 1) -> dict:
    """``lemmas.csv``: measured/bound ratios on seeded Gaussian-class examples."""
    ex = gaussian_examples(cfg.n_examples, cfg.seed, omega=cfg.frame.omega)
    out = _pool_map(_lemma_case, [(i, g, gp, cfg) for i, (g, gp) in enumerate(ex)], jobs)
    rows = [r for part in out for r in part]
    return {"lemmas.csv": csv_bytes(LEMMA_COLUMNS, rows)}


def diagonal_scaling_artifacts(cfg: RunConfig, jobs: int = 1) -> dict:
    """``scaling.csv`` for the diagonal-element and anti-Wick remainder scaling experiments."""
    f = cfg.perturbation() if cfg.q0 is not None else PolySymbol.from_expression("x1**4" if cfg.l > 1 else "x**4",
                                                                                  cfg.frame, cfg.D)
    rows = []
    hbs = cfg.hbar_q
    if hbs and cfg.alphas:
        alphas = [(a,) + (0,) * (cfg.l - 1) for a in cfg.alphas]
        res = prop_a1_scaling(f, hbs, alphas)
        for hb in hbs:
            s, e, _ = res.per_hbar[float(hb)]
            name = f"diagonal_element hbar={float(hb)!r}"
            rows += [{"experiment": name, "x": r.x, "y": abs(r.element), "fitted_slope": s, "stderr": e}
                     for r in res.rows if r.hbar == float(hb)]
        rems = _pool_map(_antiwick_case, [(f, float(hb), cfg.N) for hb in hbs], jobs)
        s, e = _slope([float(h) for h in hbs], rems)
        rows += [{"experiment": "antiwick_remainder", "x": float(h), "y": r, "fitted_slope": s, "stderr": e}
                 for h, r in zip(hbs, rems)]
    return {"scaling.csv": csv_bytes(SCALING_COLUMNS, rows)}


def _antiwick_case(args):
    f, hb, N = args
    return antiwick_remainder_norm(f, hb, N)


# ---------------------------------------------------------------------- execution
def emit_reports(artifacts: dict, outdir) -> Path:
    """Write every artifact atomically, then a ``MANIFEST`` of ``sha256  name`` lines."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(artifacts):
        data = artifacts[name]
        _atomic_write(out / name, data)
        lines.append(f"{hashlib.sha256(data).hexdigest()}  {name}\n")
    _atomic_write(out / "MANIFEST", "".join(lines).encode())
    return out


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


PIPELINES = {
    "normal-form": normal_form_artifacts,
    "diophantine": diophantine_artifacts,
    "verify-lemmas": lemma_artifacts,
    "prop-a1": diagonal_scaling_artifacts,
}


def execute(cfg: RunConfig, outdir=None, jobs: int = 1) -> int:
    """Run the configured command and write its artifacts; returns the exit code.

    Solver failures raise before anything is written; see the module docstring
    for the mapping of exceptions to exit codes applied by :func:`main`.
    """
    outdir = outdir or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    code = EXIT_OK
    if cfg.command == "spectrum":
        arts, n_conf = spectrum_artifacts(cfg, jobs)
        if n_conf:
            code = EXIT_AMBIGUOUS
    else:
        arts = PIPELINES[cfg.command](cfg, jobs)
    arts["config.json"] = json_bytes(cfg.to_dict())
    emit_reports(arts, outdir)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qkam", description="Normal forms, spectra and estimate checks for "
                                                          "perturbed harmonic oscillators.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} pipeline")
        sp.add_argument("config", help="YAML run configuration")
        sp.add_argument("-o", "--output-dir", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
        sp.add_argument("--seed", type=int, help="override the RNG seed")
        sp.add_argument("-j", "--jobs", type=int, default=1, help="worker processes for independent runs")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("qkam: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(["seed: must be an integer >= 0"])
            cfg = cfg.replace(seed=args.seed)
        outdir = args.output_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir
        return execute(cfg, outdir, args.jobs)
    except (ConfigError, InvalidPerturbation, LocalityViolation) as exc:
        print(f"qkam: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GammaExhausted as exc:
        print(f"qkam: {exc}", file=sys.stderr)
        return EXIT_GAMMA
    except ZeroDivisor as exc:
        print(f"qkam: {exc}", file=sys.stderr)
        return EXIT_ZERO_DIVISOR
    except TruncationOverflow as exc:
        print(f"qkam: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW
    except AmbiguousMatch as exc:
        print(f"qkam: {exc}", file=sys.stderr)
        return EXIT_AMBIGUOUS
    except OSError as exc:
        print(f"qkam: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
