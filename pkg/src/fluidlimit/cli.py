"""Command line front end.

Usage: ``fluidlimit SUBCOMMAND --config run.yaml [--out DIR] [--jobs N] [--seed S]``

Every subcommand writes ``<subcommand>.csv`` and ``summary.json`` into the
output directory. Exit status is 0 on success, 1 when a checked inequality
fails, 2 for configuration errors and 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds, coupling, ctmc, fluid, hypergraph, martingale, models
from . import rng as _rng
from .config import ConfigError, CoupleSection, DiagnoseSection, RunConfig, load
from .errors import FluidLimitError, InvalidModelError, PreconditionError

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SUBCOMMANDS = ("simulate", "fluid", "bound", "compare", "couple", "core", "diagnose")
PILOT_REPLICAS = 16
PILOT_SAFETY = 1.25

# Seed stream indices, so subcommands never share random numbers.
STREAM_MAIN, STREAM_PILOT, STREAM_OBSERVABLES, STREAM_PEEL = 0, 1, 2, 3


# --- output helpers ---------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def write_summary(path: Path, cfg: RunConfig, command: str, body: dict):
    doc = {"command": command, "model": cfg.model_name, "seed": cfg.seed, "version": __version__, **body}
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


# --- shared pieces ------------------------------------------------------------------


def _fluid_path(cfg: RunConfig, model: models.Model) -> fluid.FluidPath:
    return fluid.integrate(model.fluid, cfg.t0, cfg.h)


def _lipschitz(model: models.Model) -> tuple:
    if model.fluid.lipschitz_K is not None:
        return model.fluid.lipschitz_K, model.fluid.approximate_K
    if model.fluid.box is not None and model.fluid.box.bounded:
        return fluid.estimate_lipschitz(model.fluid), True
    raise InvalidModelError("model has no Lipschitz constant and no bounded box to estimate one on")


def _jump_envelope(cfg: RunConfig, model: models.Model) -> tuple:
    """(Q, J, exact): total-rate bound and coordinate jump bound.

    The plain epidemic has Q = (1 + lam) N and J = 1/N. Other models use
    the largest values seen on pilot runs, with Q inflated by a safety
    factor; the result is then flagged as not exact.
    """
    if cfg.model_name == "epidemic":
        pr = models.EpidemicParams(**{**models.REGISTRY["epidemic"].params, **cfg.params})
        return (1 + pr.lam) * pr.N, 1.0 / pr.N, True
    spec = model.spec
    Q, J = 0.0, 0.0
    seed = _rng.derive_seed(cfg.seed, STREAM_PILOT)
    for tr in ctmc.iter_replicas(spec, model.init, cfg.t0, seed, PILOT_REPLICAS, max_events=cfg.max_events):
        incs, rates = ctmc.coordinate_increments(spec, tr.states)
        Q = max(Q, float(rates.sum(axis=1).max()))
        live = np.transpose(rates > 0)  # (C, k)
        sizes = np.abs(incs).max(axis=2)
        if live.any():
            J = max(J, float(sizes[live].max()))
    if not (Q > 0 and J > 0):
        raise InvalidModelError("pilot runs saw no jumps; give A explicitly")
    return PILOT_SAFETY * Q, J, False


def _budget(cfg: RunConfig, model: models.Model):
    K, K_approx = _lipschitz(model)
    info = {"K": K, "K_estimated": K_approx}
    if cfg.A == "auto":
        Q, J, exact = _jump_envelope(cfg, model)
        adm = bounds.admissible_A(Q, J, cfg.eps, cfg.t0, K)
        A = adm.A
        info.update({"A_mode": "auto", "Q": Q, "J": J, "envelope_exact": exact, "A_residual": adm.residual})
    else:
        A = float(cfg.A)
        info["A_mode"] = "explicit"
    maker = bounds.budget_exp if cfg.theorem == "EXP" else bounds.budget_l2
    return maker(cfg.eps, cfg.t0, K, A, model.fluid.dim), info


def _coord_paths(cfg, model, jobs, count=None, stream=STREAM_MAIN):
    seed = _rng.derive_seed(cfg.seed, stream)
    count = cfg.replicas if count is None else count
    return ctmc.iter_replicas(model.spec, model.init, cfg.t0, seed, count, jobs=jobs, max_events=cfg.max_events)


# --- subcommands ---------------------------------------------------------------------


def cmd_simulate(cfg, out: Path, jobs: int) -> int:
    model = cfg.build_model()
    d = model.spec.coord_dim
    header = ["replica", "time"] + [f"coord_{i + 1}" for i in range(d)]
    n_jumps = []

    def rows():
        for r, tr in enumerate(_coord_paths(cfg, model, jobs)):
            path = ctmc.project(tr, model.spec)
            n_jumps.append(tr.n_jumps)
            for t, x in zip(path.times, path.values):
                yield [r, t, *x]
            yield [r, tr.horizon, *path.values[-1]]

    write_csv(out / "simulate.csv", header, rows())
    write_summary(out / "summary.json", cfg, "simulate", {"replicas": cfg.replicas, "t0": cfg.t0, "jumps": n_jumps})
    return EXIT_OK


def cmd_fluid(cfg, out: Path, jobs: int) -> int:
    model = cfg.build_model()
    path = _fluid_path(cfg, model)
    d = model.fluid.dim
    write_csv(out / "fluid.csv", ["time"] + [f"x_{i + 1}" for i in range(d)], ([t, *x] for t, x in zip(path.times, path.values)))
    body = {"t0": cfg.t0, "h": cfg.h, "exit_time": path.exit_time, "terminal": path.values[-1]}
    if math.isfinite(path.exit_time):
        try:
            win = fluid.exit_window(model.fluid, path, cfg.eps)
            body["exit_window"] = {"zeta": win.zeta, "zeta_minus": win.zeta_minus, "zeta_plus": win.zeta_plus, "rho": win.rho}
        except FluidLimitError as err:
            body["exit_window"] = {"error": str(err)}
    write_summary(out / "summary.json", cfg, "fluid", body)
    return EXIT_OK


def cmd_bound(cfg, out: Path, jobs: int) -> int:
    model = cfg.build_model()
    budget, info = _budget(cfg, model)
    body = {"budget": budget.as_dict(), **info}
    if cfg.model_name == "epidemic":
        pr = models.EpidemicParams(**{**models.REGISTRY["epidemic"].params, **cfg.params})
        body["epidemic_C"] = models.epidemic_C(pr.lam, cfg.t0)
        body["epidemic_bound"] = models.epidemic_bound(pr.N, pr.lam, cfg.eps, cfg.t0)
    write_csv(out / "bound.csv", ["key", "value"], sorted(budget.as_dict().items()))
    write_summary(out / "summary.json", cfg, "bound", body)
    return EXIT_OK


def cmd_compare(cfg, out: Path, jobs: int) -> int:
    model = cfg.build_model()
    budget, info = _budget(cfg, model)
    fpath = _fluid_path(cfg, model)
    norm = budget.norm
    rows, devs, omega_fail = [], [], np.zeros(3, dtype=np.int64)
    for r, tr in enumerate(_coord_paths(cfg, model, jobs)):
        dev = bounds.sup_deviation(ctmc.project(tr, model.spec), fpath, cfg.t0, norm)
        om = bounds.omega_report(tr, model.spec, model.fluid, budget, cfg.theorem)
        flags = (om.omega0, om.omega1, om.omega2)
        omega_fail += [not f for f in flags]
        devs.append(dev)
        rows.append([r, dev, dev > cfg.eps, *flags])
    write_csv(out / "compare.csv", ["replica", "sup_deviation", "exceeds", "omega0", "omega1", "omega2"], rows)
    n = len(devs)
    count = sum(1 for v in devs if v > cfg.eps)
    frac = count / n
    slack = 3 * math.sqrt(budget.bound * (1 - budget.bound) / n)
    holds = frac <= budget.bound + slack
    body = {
        "budget": budget.as_dict(),
        **info,
        "replicas": n,
        "exceed_count": count,
        "exceed_fraction": frac,
        "wilson_upper": bounds.wilson_interval(count, n)[1],
        "omega_failure_fraction": (omega_fail / n).tolist(),
        "bound_holds": holds,
    }
    write_summary(out / "summary.json", cfg, "compare", body)
    return EXIT_OK if holds else EXIT_ASSERT


def cmd_couple(cfg, out: Path, jobs: int) -> int:
    if cfg.model_name != "epidemic":
        raise ConfigError("couple: only the epidemic model has a label map (epidemic_individuals)")
    sec = cfg.couple or CoupleSection()
    pr = models.EpidemicParams(**{**models.REGISTRY["epidemic"].params, **cfg.params})
    spec, mod, init = coupling.make_epidemic_individuals(pr.N, pr.lam, pr.p, sec.k, eps=cfg.eps)
    model = models.make_epidemic(pr)
    fpath = _fluid_path(cfg, model)
    budget, info = _budget(cfg, model)
    kappa = mod.kappa if sec.kappa is None else sec.kappa
    seed = _rng.derive_seed(cfg.seed, STREAM_MAIN)
    runs = coupling.simulate_coupled_replicas(spec, mod, init, fpath, cfg.t0, seed, cfg.replicas, max_events=cfg.max_events)
    write_csv(
        out / "couple.csv",
        ["replica", "decouple_time", "decoupled", "tube_exit_time"],
        ([r, c.decouple_time, c.decoupled, c.tau] for r, c in enumerate(runs)),
    )
    n = len(runs)
    frac = sum(c.decoupled for c in runs) / n
    bound = coupling.decoupling_bound(sec.G, kappa, cfg.t0, model.fluid.dim, budget.delta, budget.A)
    holds = frac <= bound + 3 * math.sqrt(bound * (1 - bound) / n)
    body = {
        "budget": budget.as_dict(),
        **info,
        "G": sec.G,
        "kappa": kappa,
        "k": sec.k,
        "decoupled_fraction": frac,
        "decoupling_bound": bound,
        "bound_holds": holds,
    }
    write_summary(out / "summary.json", cfg, "couple", body)
    return EXIT_OK if holds else EXIT_ASSERT


def cmd_core(cfg, out: Path, jobs: int) -> int:
    if cfg.core is None:
        raise ConfigError("core: missing 'core' section (k, N, p, q)")
    sec = cfg.core
    try:
        freq = hypergraph.FrequencyVectors(sec.p, sec.q)
        freq.counts(sec.N)
    except InvalidModelError as err:
        raise ConfigError(f"core: {err}") from None
    fp = hypergraph.g_star(freq, sec.k)
    pred = hypergraph.limiting_frequencies(freq, sec.k, fp.g_star)
    gen_seeds = _rng.replica_seeds(_rng.derive_seed(cfg.seed, STREAM_MAIN), cfg.replicas)
    peel_seeds = _rng.replica_seeds(_rng.derive_seed(cfg.seed, STREAM_PEEL), cfg.replicas)
    empirical, retries, diffs = [], [], []
    for gs, ps in zip(gen_seeds, peel_seeds):
        inst, tries = hypergraph.generate(freq, sec.N, int(gs))
        res = hypergraph.peel_chain(inst, sec.k, int(ps), record=False)
        emp = hypergraph.empirical_core_frequencies(res.core, inst, sec.k)
        empirical.append(emp)
        retries.append(tries)
        diffs.append(emp.max_difference(pred))
    keys = [("vertex", d, d2) for (d, d2) in sorted(pred.vertex)] + [("edge", w, "") for w in sorted(pred.edge)]
    extra_v = sorted({k for e in empirical for k in e.vertex} - set(pred.vertex))
    extra_e = sorted({k for e in empirical for k in e.edge} - set(pred.edge))
    keys += [("vertex", d, d2) for d, d2 in extra_v] + [("edge", w, "") for w in extra_e]

    def lookup(f, key):
        return f.vertex.get((key[1], key[2]), 0.0) if key[0] == "vertex" else f.edge.get(key[1], 0.0)

    rows = []
    for key in keys:
        vals = np.array([lookup(e, key) for e in empirical])
        p = lookup(pred, key)
        rows.append([key[0], key[1], key[2], p, vals.mean(), np.abs(vals - p).max()])
    write_csv(out / "core.csv", ["kind", "d_or_w", "orig_degree", "predicted", "empirical_mean", "max_abs_diff"], rows)
    body = {
        "k": sec.k,
        "N": sec.N,
        "g_star": fp.g_star,
        "crossing_holds": fp.crossing_holds,
        "fixed_point_residual": fp.residual,
        "replicas": cfg.replicas,
        "generation_retries": retries,
        "max_abs_diff": diffs,
    }
    write_summary(out / "summary.json", cfg, "core", body)
    return EXIT_OK


def cmd_diagnose(cfg, out: Path, jobs: int) -> int:
    model = cfg.build_model()
    sec = cfg.diagnose or DiagnoseSection()
    trajs = list(_coord_paths(cfg, model, jobs))
    g = _rng.generator(_rng.derive_seed(cfg.seed, STREAM_OBSERVABLES))
    rows, all_hold = [], True
    for i in range(sec.observables):
        w = g.normal(size=model.spec.coord_dim)
        f = martingale.linear_observable(w, model.spec.coordinates)
        paths = [martingale.compensate(tr, model.spec, f) for tr in trajs]
        mz = martingale.mean_zero_check(paths, cfg.t0)
        try:
            db = martingale.doob_check(paths, cfg.t0)
        except PreconditionError:
            db = martingale.doob_check(paths, cfg.t0, min_replicas=1)
        ep = [martingale.compensate(tr, model.spec, f, theta=sec.theta) for tr in trajs]
        ex = martingale.exp_check(ep, cfg.t0, sec.B, sec.A)
        ok = mz.holds and db.holds and ex.holds
        all_hold &= ok
        rows.append(
            [i, mz.mean, mz.se, mz.holds, db.sup_m2, db.four_alpha, db.holds, ex.mean_Z, ex.se_Z,
             ex.exceed_fraction, ex.exceed_bound, ex.excluded, ex.holds]
        )
    header = ["observable", "mean_M", "se_M", "mean_zero_holds", "E_sup_M2", "four_E_int_alpha", "doob_holds",
              "mean_Z", "se_Z", "exceed_fraction", "exceed_bound", "excluded", "exp_holds"]
    write_csv(out / "diagnose.csv", header, rows)
    body = {"replicas": len(trajs), "t0": cfg.t0, "theta": sec.theta, "A": sec.A, "B": sec.B,
            "all_hold": all_hold, "doob_replicas_below_minimum": len(trajs) < martingale.MIN_DOOB_REPLICAS}
    write_summary(out / "summary.json", cfg, "diagnose", body)
    return EXIT_OK if all_hold else EXIT_ASSERT


COMMANDS = {
    "simulate": cmd_simulate,
    "fluid": cmd_fluid,
    "bound": cmd_bound,
    "compare": cmd_compare,
    "couple": cmd_couple,
    "core": cmd_core,
    "diagnose": cmd_diagnose,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluidlimit", description="Markov chain fluid limits with explicit error bounds.")
    p.add_argument("--version", action="version", version=f"fluidlimit {__version__}")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for replica batches")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    return p


def run(command: str, cfg: RunConfig, out, jobs: int = 1) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[command](cfg, out, max(1, jobs))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load(args.config, seed_override=args.seed)
        out = args.out or cfg.out
        if out is None:
            raise ConfigError("no output directory: pass --out or set 'out' in the config")
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return run(args.command, cfg, out, args.jobs)
    except (ConfigError, InvalidModelError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FluidLimitError, ArithmeticError, OSError) as err:
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
