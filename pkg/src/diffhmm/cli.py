"""Command-line driver.

    diffhmm certify     --config run.yaml --out DIR
    diffhmm approximate --config run.yaml --out DIR
    diffhmm spectrum    --config run.yaml --out DIR
    diffhmm simulate    --config run.yaml --out DIR --seed 7 --threads 0

Exit codes: 0 all checks passed, 1 some criterion unmet, 2 config error,
3 numerical failure.  Every output file is a function of (config, seed)
only, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import yaml

from .analysis import alpha_grid, approximate, spectrum
from .config import ConfigError, RunConfig, load_config
from .diffusion import SimulationError, certify_dv3, sde_endpoints
from .hmm import build_hmm_generator, finite_rank_approx, hmm_mc, hmm_resolvent, hmm_semigroup_coeffs, write_generator
from .jump import jump_generator, jump_law_mc, jump_semigroup
from .resolvent import discretize_generator, resolvent_direct

EXIT_OK, EXIT_UNMET, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


def write_summary(path: Path, command: str, cfg: RunConfig, body: dict) -> None:
    doc = {"command": command, "config": cfg.to_dict(), **body}
    path.write_text(yaml.safe_dump(_clean(doc), sort_keys=True, default_flow_style=None))


def _coords(grid, i):
    return [float(c) for c in grid.points[i]]


# ---------------------------------------------------------------- certify


def _certificate(cfg: RunConfig, grid, model):
    ly = cfg.lyapunov
    V = cfg.field(ly.V)
    W = cfg.field(ly.W)
    C = np.flatnonzero(np.linalg.norm(grid.points, axis=1) <= ly.C_radius + 1e-12)
    if C.size == 0:
        raise ConfigError("lyapunov.C_radius: C contains no grid node")
    return certify_dv3(model, V, W, ly.delta, ly.b, C, grid, sup_V_on_C=ly.sup_V_on_C)


def cmd_certify(cfg: RunConfig, out: Path, args) -> int:
    grid = cfg.build_grid()
    model = cfg.diffusion_model()
    cert = _certificate(cfg, grid, model)
    inC = np.zeros(grid.n_nodes, dtype=bool)
    inC[cert.C] = True
    cols = [f"x{k}" for k in range(grid.dim)]
    write_csv(
        out / "certificate.csv",
        ["node", *cols, "V", "W", "in_C", "slack"],
        ([i, *grid.points[i], cert.V[i], cert.W[i], inC[i], cert.slack[i]] for i in range(grid.n_nodes)),
    )
    body = {
        "certificate": {
            "passed": cert.passed,
            "worst_slack": cert.worst_slack,
            "worst_node": cert.worst_node,
            "worst_point": _coords(grid, cert.worst_node),
            "tol": cert.tol,
            "delta": cert.delta,
            "b": cert.b,
            "b_prime": cert.b_prime,
        }
    }
    write_summary(out / "summary.yaml", "certify", cfg, body)
    if not cert.passed:
        print(
            f"drift condition fails: slack {cert.worst_slack:.6g} > tol {cert.tol:.3g} "
            f"at node {cert.worst_node} {_coords(grid, cert.worst_node)}",
            file=sys.stderr,
        )
        return EXIT_UNMET
    return EXIT_OK


# ------------------------------------------------------------ approximate


def cmd_approximate(cfg: RunConfig, out: Path, args) -> int:
    grid = cfg.build_grid()
    model = cfg.diffusion_model()
    cert = _certificate(cfg, grid, model)
    ap = cfg.approximation
    alphas = alpha_grid(ap.alpha_delta)
    Dh = discretize_generator(model, grid)
    g = cfg.test_function(grid)
    rep = approximate(model, grid, ap.kappa, ap.cells_per_axis, alphas, g, ap.times, ap.epsilon, cert.b_prime, Dh=Dh)

    write_csv(
        out / "resolvent_gaps.csv",
        ["alpha", "gap", "target", "bound_valid", "passed"],
        ([a, rep.resolvent_gaps[a], ap.epsilon, rep.resolvent_valid[a], rep.resolvent_gaps[a] <= ap.epsilon + 1e-9] for a in alphas),
    )
    s = rep.semigroup
    budget = ap.epsilon * s.budget_scale
    write_csv(
        out / "semigroup_gaps.csv",
        ["t", "gap", "jump_gap", "hmm_gap", "budget", "passed"],
        ([t, s.gaps[k], s.jump_gaps[k], s.hmm_gaps[k], budget, s.gaps[k] <= budget + 1e-9] for k, t in enumerate(s.times)),
    )
    pi, varpi = rep.objects["pi"], rep.objects["varpi"]
    write_csv(
        out / "invariant.csv",
        ["node", *[f"x{k}" for k in range(grid.dim)], "pi", "varpi"],
        ([i, *grid.points[i], pi[i], varpi[i]] for i in range(grid.n_nodes)),
    )
    write_generator(rep.objects["gen"], out / "generator.json")

    invalid = [a for a in alphas if not rep.resolvent_valid[a]]
    if invalid:
        print(
            f"note: the HMM resolvent norm bound needs alpha > (1+b_v)*eps0 = {rep.threshold:.6g}; "
            f"not met for alpha in {invalid} (T_alpha still computed)",
            file=sys.stderr,
        )
    body = {
        "certificate": {"passed": cert.passed, "b_prime": cert.b_prime, "worst_slack": cert.worst_slack},
        "constants": {
            "delta": cfg.lyapunov.delta,
            "b": cfg.lyapunov.b,
            "b_prime": cert.b_prime,
            "kappa": ap.kappa,
            "n_cells": rep.n_cells,
            "epsilon": ap.epsilon,
            "generator_gap": rep.generator_gap,
            "validity_threshold": rep.threshold,
        },
        "criteria": {
            "resolvent": {"passed": rep.resolvent_passed, "max_gap": max(rep.resolvent_gaps.values())},
            "semigroup": {"passed": rep.semigroup_passed, "max_gap": float(np.max(s.gaps)), "budget": budget},
            "invariant": {"passed": rep.measure_passed, "gap": rep.measure_gap},
        },
        "passed": bool(cert.passed and rep.passed),
    }
    write_summary(out / "summary.yaml", "approximate", cfg, body)
    return EXIT_OK if (cert.passed and rep.passed) else EXIT_UNMET


# --------------------------------------------------------------- spectrum


def _write_spectrum(path: Path, lam) -> None:
    write_csv(path, ["index", "real", "imag", "modulus"], ([i, z.real, z.imag, abs(z)] for i, z in enumerate(lam)))


def cmd_spectrum(cfg: RunConfig, out: Path, args) -> int:
    grid = cfg.build_grid()
    model = cfg.diffusion_model()
    ap = cfg.approximation
    Dh = discretize_generator(model, grid)
    R1 = resolvent_direct(Dh, 1.0)
    Dk = jump_generator(resolvent_direct(Dh, ap.kappa), ap.kappa)
    gen = build_hmm_generator(finite_rank_approx(Dk, None, ap.cells_per_axis, grid), ap.kappa, grid, Dk)
    T1 = hmm_resolvent(gen, 1.0, 0.0, eps0=0.0)
    specs = {
        "Dh": spectrum(Dh, "Dh", descending=False),
        "R1": spectrum(R1, "R1"),
        "E": spectrum(gen, "E", descending=False),
        "T1": spectrum(T1, "T1"),
    }
    for name, rep in specs.items():
        _write_spectrum(out / f"spectrum_{name}.csv", rep.eigenvalues)
    _write_spectrum(out / "spectrum_E_reduced.csv", specs["E"].reduced)
    body = {
        "spectra": {
            name: {"size": int(rep.eigenvalues.size), "leading": [float(z.real) for z in rep.eigenvalues[:5]]}
            for name, rep in specs.items()
        },
        "hidden_states": gen.N,
    }
    write_summary(out / "summary.yaml", "spectrum", cfg, body)
    return EXIT_OK


# --------------------------------------------------------------- simulate


def _z(mc, exact, n):
    se = np.maximum(np.sqrt(np.clip(exact * (1 - exact), 0, None) / n), 1.0 / n)
    return (mc - exact) / se


def cmd_simulate(cfg: RunConfig, out: Path, args) -> int:
    grid = cfg.build_grid()
    model = cfg.diffusion_model()
    sm, ap = cfg.simulation, cfg.approximation
    seed = sm.seed if args.seed is None else args.seed
    n, T = sm.n_paths, sm.T
    Dh = discretize_generator(model, grid)
    i0 = int(grid.nearest_node(np.asarray(sm.x0)))

    # diffusion law at T
    ends = sde_endpoints(model, sm.x0, sm.dt, n, seed, T=T, box=grid, threads=args.threads)
    mc = np.bincount(np.atleast_1d(grid.nearest_node(ends)), minlength=grid.n_nodes) / n
    exact = sla.expm(T * Dh.entries)[i0]
    z = _z(mc, exact, n)
    cols = [f"x{k}" for k in range(grid.dim)]
    write_csv(out / "sde_law.csv", ["node", *cols, "mc", "matrix", "z"], ([i, *grid.points[i], mc[i], exact[i], z[i]] for i in range(grid.n_nodes)))

    # jump process
    Dk = jump_generator(resolvent_direct(Dh, ap.kappa), ap.kappa)
    pos, counts = jump_law_mc(Dk, ap.kappa, i0, T, n, seed, threads=args.threads)
    jmc = np.bincount(pos, minlength=grid.n_nodes) / n
    jex = jump_semigroup(Dk, T).entries[i0]
    jz = _z(jmc, jex, n)
    write_csv(out / "jump_law.csv", ["node", *cols, "mc", "matrix", "z"], ([i, *grid.points[i], jmc[i], jex[i], jz[i]] for i in range(grid.n_nodes)))

    # hidden Markov model
    gen = build_hmm_generator(finite_rank_approx(Dk, None, ap.cells_per_axis, grid), ap.kappa, grid, Dk)
    h0 = int(gen.cells.labels()[i0])
    if h0 == 0:
        raise ConfigError("simulation.x0: the start point lies outside every cell")
    hidden, obs, events = hmm_mc(gen, h0, T, n, seed, threads=args.threads)
    p0 = np.zeros(gen.N)
    p0[h0 - 1] = 1.0
    hex_ = hmm_semigroup_coeffs(gen, p0, T)
    hmc = np.bincount(hidden - 1, minlength=gen.N)[: gen.N] / n
    hz = _z(hmc, hex_, n)
    write_csv(out / "hmm_hidden.csv", ["state", "mc", "ode", "z"], ([k + 1, hmc[k], hex_[k], hz[k]] for k in range(gen.N)))

    cmean = float(counts.mean())
    cse = math.sqrt(ap.kappa * T / n)
    stats = [
        ["jump_count_mean", cmean, ap.kappa * T, cse, (cmean - ap.kappa * T) / cse],
        ["hmm_event_mean", float(events.mean()), ap.kappa * T, cse, (events.mean() - ap.kappa * T) / cse],
        ["sde_max_abs_z", float(np.max(np.abs(z))), 0.0, 1.0, float(np.max(np.abs(z)))],
        ["jump_max_abs_z", float(np.max(np.abs(jz))), 0.0, 1.0, float(np.max(np.abs(jz)))],
        ["hmm_max_abs_z", float(np.max(np.abs(hz))), 0.0, 1.0, float(np.max(np.abs(hz)))],
    ]
    write_csv(out / "statistics.csv", ["quantity", "mc", "reference", "stderr", "z"], stats)
    body = {
        "seed": seed,
        "n_paths": n,
        "T": T,
        "x0_node": i0,
        "statistics": {row[0]: {"mc": row[1], "reference": row[2], "z": row[4]} for row in stats},
    }
    write_summary(out / "summary.yaml", "simulate", cfg, body)
    return EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "approximate": cmd_approximate,
    "spectrum": cmd_spectrum,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffhmm", description="HMM approximation of diffusions in weighted norms")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="YAML run configuration")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: config's output key)")
    p.add_argument("--seed", type=int, default=None, help="override simulation.seed")
    p.add_argument("--threads", type=int, default=1, help="Monte Carlo worker threads; 0 = all CPUs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = args.out if args.out is not None else Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, SimulationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
