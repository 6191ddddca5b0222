"""Command-line entry point: ``holonomy <command> --config FILE [--out-dir DIR] [--seed N] [--jobs N] [--tol k=v]``."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import export
from .config import ConfigError, ExperimentConfig, build_data, load_config
from .model import ConfigurationError, GridFunction, check_assumptions

DEFAULT_TOLERANCES = {"profile": None, "lp": 1e-7, "monotone": 1e-3, "uniform": 1e-2}


class Run:
    """Shared state of one command invocation."""

    def __init__(self, command: str, config: str, out_dir: str, seed: int, jobs: int, tol: tuple[str, ...]):
        self.command = command
        try:
            self.cfg: ExperimentConfig = load_config(config)
        except (ConfigurationError, OSError) as exc:
            raise click.ClickException(str(exc)) from None
        self.out = Path(out_dir)
        self.seed = seed
        self.jobs = max(1, jobs)
        self.rng = np.random.default_rng(seed)
        self.tol = dict(DEFAULT_TOLERANCES)
        self.tol.update({k: v for k, v in self.cfg.section("tolerances").items()})
        for item in tol:
            key, _, val = item.partition("=")
            if key not in DEFAULT_TOLERANCES or not val:
                raise click.BadParameter(f"expected one of {sorted(DEFAULT_TOLERANCES)}=value, got {item!r}",
                                         param_hint="--tol")
            self.tol[key] = float(val)
        self.artifacts: list[Path] = []
        self.lines: list[str] = []

    def say(self, line: str = "") -> None:
        click.echo(line)
        self.lines.append(line)

    def csv(self, name: str, header, rows) -> None:
        self.artifacts.append(export.write_csv(self.out / name, header, rows))

    def grid_csv(self, name: str, gf: GridFunction) -> None:
        self.artifacts.append(export.write_grid_function(self.out / name, gf))

    def finish(self, extra: dict | None = None) -> None:
        self.artifacts.append(export._atomic_write(self.out / "report.txt", "\n".join(self.lines) + "\n"))
        export.write_manifest(self.out, self.command, self.cfg.text, self.seed, self.tol, self.artifacts, extra)

    def map(self, fn, items):
        """Order-preserving map bounded by --jobs."""
        if self.jobs == 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, items))

    def measure(self, key: str, default="uniform"):
        from .measures import project_measure, solve_mather_lp

        nu = self.cfg.measure(key, default)
        if nu == "mather":
            lp = solve_mather_lp(self.cfg.model, self.cfg.grid, self.cfg.vlat, self.cfg.discretization().eta)
            return project_measure(lp.measure)
        return nu


def common(fn):
    fn = click.option("--tol", multiple=True, help="Tolerance override, e.g. --tol profile=1e-5.")(fn)
    fn = click.option("--jobs", default=1, show_default=True, help="Parallel horizon/seed workers.")(fn)
    fn = click.option("--seed", default=0, show_default=True, help="Seed for random initial data.")(fn)
    fn = click.option("--out-dir", default="out", show_default=True, type=click.Path(file_okay=False))(fn)
    fn = click.option("--config", "config", required=True, type=click.Path(exists=True, dir_okay=False))(fn)
    return fn


def guarded(fn):
    """Module errors become a nonzero exit with a message."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ConfigurationError, ValueError, RuntimeError, ArithmeticError) as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from None
    return wrapper


@click.group()
def main():
    """Weak KAM / holonomic-measure experiments on the torus."""


@main.command()
@click.option("--config", "config", required=True, type=click.Path(exists=True, dir_okay=False))
def check(config):
    """Sampled audit of the model assumptions; exit 0 iff valid."""
    try:
        cfg = load_config(config)
    except ConfigurationError as exc:
        raise click.ClickException(str(exc)) from None
    report = check_assumptions(cfg.model, cfg.grid)
    click.echo(report.summary())
    raise SystemExit(0 if report.valid else 1)


@main.command()
@common
@guarded
def solve(config, out_dir, seed, jobs, tol):
    """Cauchy problem; one CSV per stored snapshot."""
    from .pde import solve_cauchy

    run = Run("solve", config, out_dir, seed, jobs, tol)
    traj = solve_cauchy(run.cfg.model, run.cfg.initial_data(run.rng), run.cfg.solve_config())
    for i, t in enumerate(traj.times):
        run.grid_csv(f"snapshot_{i:04d}.csv", traj.fields[i])
    run.csv("times.csv", ["index", "time"], enumerate(traj.times))
    run.say(f"steps stored: {len(traj.times)}, final time {traj.times[-1]:.6g}")
    run.say(f"final sup norm {traj.final.sup_norm():.10g}, mean {traj.final.values.mean():.10g}")
    run.finish()


@main.command()
@common
@guarded
def profile(config, out_dir, seed, jobs, tol):
    """Large-time profile u_inf and ergodic constant c."""
    from .pde import large_time_profile

    run = Run("profile", config, out_dir, seed, jobs, tol)
    res = large_time_profile(run.cfg.model, run.cfg.initial_data(run.rng), run.cfg.solve_config(),
                             run.tol["profile"])
    run.grid_csv("u_inf.csv", res.u_inf)
    export.write_convergence_log(run.out / "convergence.csv", res.log)
    run.artifacts.append(run.out / "convergence.csv")
    run.say(f"c = {res.c:.12g}")
    run.say(f"T_reached = {res.T_reached:.6g}")
    run.finish({"c": res.c})


@main.command()
@common
@guarded
def mather(config, out_dir, seed, jobs, tol):
    """Stationary Mather LP: value, projected measure, constraint system."""
    from .measures import build_stationary_constraints, project_measure, solve_mather_lp

    run = Run("mather", config, out_dir, seed, jobs, tol)
    eta = run.cfg.discretization().eta
    lp = solve_mather_lp(run.cfg.model, run.cfg.grid, run.cfg.vlat, eta)
    nu = project_measure(lp.measure)
    run.say(f"Mather LP value = {lp.value:.12g}  (c_h = {0.0 - lp.value:.12g})")
    run.say(f"duality gap = {lp.solution.duality_gap:.3e}, solver {lp.solution.solver}")
    run.say("projected support: " + ", ".join(str(int(i)) for i in np.nonzero(nu.weights > 1e-9)[0]))
    run.grid_csv("projected_measure.csv", GridFunction(run.cfg.grid, nu.weights.reshape(run.cfg.grid.shape)))
    occ = run.out / "occupation.csv"
    run.artifacts.append(export.write_occupation(occ, lp.measure, tol=1e-12))
    system = build_stationary_constraints(run.cfg.model, run.cfg.grid, run.cfg.vlat, eta)
    run.artifacts.extend(export.write_constraint_system(run.out / "stationary", system))
    run.finish({"value": lp.value})


def _horizons(run: Run, default=(1, 2, 4, 8, 16, 32, 64)) -> list[float]:
    return [float(t) for t in run.cfg.section("experiment").get("horizons", default)]


@main.command()
@common
@guarded
def potential(config, out_dir, seed, jobs, tol):
    """h_t over the horizon schedule, d = min h_t and the tail-window barrier h."""
    from .measures import ht_value, peierls_barrier

    run = Run("potential", config, out_dir, seed, jobs, tol)
    model, disc = run.cfg.model, run.cfg.discretization()
    nu0, nu1 = run.measure("nu0"), run.measure("nu1")
    hs = _horizons(run)
    solves = run.map(lambda t: ht_value(model, disc, nu0, nu1, t), hs)
    table = [(t, s.value if s.feasible else math.inf) for t, s in zip(hs, solves)]
    run.csv("ht.csv", ["t", "h_t", "duality_gap"],
            [(t, v, s.solution.duality_gap if s.feasible else math.nan) for (t, v), s in zip(table, solves)])
    d = min(v for _, v in table)
    tail = int(run.cfg.section("experiment").get("tail", 5))
    h = peierls_barrier(model, disc, nu0, nu1, hs, min(tail, len(hs)), table).h
    for t, v in table:
        run.say(f"h_t  t={t:<8g} {v:.12g}")
    run.say(f"d = {d:.12g}")
    run.say(f"h (min over last {min(tail, len(hs))} horizons) = {h:.12g}")
    run.finish({"d": d, "h": h})


@main.command()
@common
@guarded
def barrier(config, out_dir, seed, jobs, tol):
    """Superquadratic supersolution search; compactness smoke test when experiment.K is set."""
    from .pde import check_superquadratic_barrier, compactness_smoke

    run = Run("barrier", config, out_dir, seed, jobs, tol)
    model = run.cfg.model
    exp = run.cfg.section("experiment")
    C = float(exp.get("barrier_C", model.C0))
    res = check_superquadratic_barrier(model.m, C, run.cfg.grid.dim)
    run.say(f"m = {model.m:g}, C = {C:g}: lambda = {res.lam:g}, min margin = {res.min_margin:.6g}")
    if "K" in exp:
        scales = tuple(float(s) for s in exp.get("scales", (1, 10, 100, 1000)))
        rep = compactness_smoke(model, int(exp["K"]), run.cfg.solve_config(T_final=0.5), run.cfg.grid,
                                scales, seed)
        run.csv("compactness.csv", ["scale", "sup_norm_half"], zip(rep.scales, rep.sup_norms))
        run.say(rep.summary())
    run.finish({"lambda": res.lam, "margin": res.min_margin})


@main.command()
@common
@guarded
def duality(config, out_dir, seed, jobs, tol):
    """Inequality chain m <= d <= h for the configured measure pair."""
    from .duality import dual_value_d, generate_solution_family, stationary_from_duals
    from .measures import mane_potential, peierls_barrier, solve_mather_lp

    run = Run("duality", config, out_dir, seed, jobs, tol)
    model, disc, grid = run.cfg.model, run.cfg.discretization(), run.cfg.grid
    exp = run.cfg.section("experiment")
    seeds = [build_data(s, grid, run.rng) for s in exp.get("seeds", [{"kind": "zero"}, {"kind": "sin"}])]
    scfg = run.cfg.solve_config()
    if scfg.scheme == "lattice" and scfg.dt is None:
        scfg = replace(scfg, dt=disc.time_step(model))
    fam = generate_solution_family(model, seeds, scfg, "stationary", run.tol["profile"])
    lp = solve_mather_lp(model, grid, run.cfg.vlat, disc.eta)
    fam.add(stationary_from_duals(lp), "Mather LP multipliers")
    nu0, nu1 = run.measure("nu0"), run.measure("nu1")
    hs = _horizons(run)
    mp = mane_potential(model, disc, nu0, nu1, hs)
    tail = min(int(exp.get("tail", 5)), len(hs))
    h = peierls_barrier(model, disc, nu0, nu1, hs, tail, mp.table).h
    m_val = dual_value_d(fam, nu0, nu1)
    run.csv("ht.csv", ["t", "h_t"], mp.table)
    run.say(f"family size {len(fam)} ({', '.join(fam.provenance)})")
    run.say(f"m = {m_val:.12g}")
    run.say(f"d = {mp.d:.12g}")
    run.say(f"h = {h:.12g}")
    ok = m_val <= mp.d + 1e-6 and mp.d <= h + 1e-6
    run.say(f"chain m <= d <= h: {'holds' if ok else 'VIOLATED'}")
    run.finish({"m": m_val, "d": mp.d, "h": h, "chain": ok})


@main.command("verify-rep")
@common
@guarded
def verify_rep(config, out_dir, seed, jobs, tol):
    """<u(t), nu> from the PDE against the free-source LP."""
    from .profile import verify_representation

    run = Run("verify-rep", config, out_dir, seed, jobs, tol)
    t = float(run.cfg.section("experiment").get("t", 1.0))
    solver = run.cfg.section("lp").get("solver", "backward")
    nu = run.measure("nu1")
    cmp = verify_representation(run.cfg.model, run.cfg.initial_data(run.rng), nu, t, run.cfg.solve_config(),
                                run.cfg.discretization(), solver)
    run.csv("representation.csv", ["t", "pde", "lp", "gap"], [(t, cmp.lhs, cmp.rhs, cmp.gap)])
    run.say(f"t = {t:g}: PDE {cmp.lhs:.10g}, LP {cmp.rhs:.10g}, gap {cmp.gap:.3e}")
    run.finish({"gap": cmp.gap})


@main.command("verify-profile")
@common
@guarded
def verify_profile_cmd(config, out_dir, seed, jobs, tol):
    """<u_inf, nu> against min over horizons of the free-source LP; gap table."""
    from .profile import verify_profile

    run = Run("verify-profile", config, out_dir, seed, jobs, tol)
    nu = run.measure("nu1", "mather")
    solver = run.cfg.section("lp").get("solver", "backward")
    cmp = verify_profile(run.cfg.model, run.cfg.initial_data(run.rng), nu, _horizons(run, (1, 2, 4, 8)),
                         run.cfg.solve_config(), run.cfg.discretization(), run.tol["profile"], solver)
    run.csv("profile_rhs.csv", ["t", "free_source_value"], cmp.detail["table"])
    run.csv("profile_gap.csv", ["lhs", "rhs", "gap", "budget"],
            [(cmp.lhs, cmp.rhs, cmp.gap, cmp.detail["budget"])])
    run.say(f"<u_inf, nu> = {cmp.lhs:.10g}")
    run.say(f"min_t LP   = {cmp.rhs:.10g} (t* = {cmp.detail['t_star']})")
    run.say(f"gap {cmp.gap:.3e}, budget h + dq + dt + 1/t_max = {cmp.detail['budget']:.3e}")
    run.finish({"gap": cmp.gap})


@main.command()
@common
@guarded
def appendix(config, out_dir, seed, jobs, tol):
    """Mollification residual scan (scalar diffusion) or the regularized-subsolution audit (matrix diffusion)."""
    from .approx import appendix_b_subsolution_audit, subsolution_residual_scan
    from .pde import solve_cauchy

    run = Run("appendix", config, out_dir, seed, jobs, tol)
    model = run.cfg.model
    scfg = run.cfg.solve_config(store_every_step=True)
    if scfg.lf_dissipation == "auto":
        raise ConfigError("appendix runs need a fixed solve.lf_dissipation")
    traj = solve_cauchy(model, run.cfg.initial_data(run.rng), scfg)
    exp = run.cfg.section("experiment")
    if model.diffusion.is_matrix:
        eps, eta = float(exp.get("eps", 0.1)), float(exp.get("eta", 0.02))
        alpha = float(exp.get("alpha", 2 * run.cfg.grid.h))
        rows = []
        for label, delta in (("0.9 delta0", None), ("2 delta0", "double")):
            if delta == "double":
                delta = 2 * rows[0][1]
            rep = appendix_b_subsolution_audit(model, traj, eps, eta, alpha, delta=delta)
            rows.append((label, rep.delta, rep.delta0, rep.max_residual, rep.kappa, rep.omega_eps,
                         rep.discretization_slack, rep.passed))
            run.say(f"{label}: residual {rep.max_residual:.6g} vs kappa {rep.kappa:.6g} + slack "
                    f"{rep.discretization_slack:.3g} -> {'pass' if rep.passed else 'fail'}")
        run.csv("appendix_b.csv", ["case", "delta", "delta0", "max_residual", "kappa", "omega_eps", "slack",
                                   "passed"], rows)
    else:
        alphas = [float(a) for a in exp.get("alphas", [2.0**-k for k in range(3, 8)])]
        scan = subsolution_residual_scan(model, traj, alphas)
        run.csv("residual_scan.csv", ["alpha", "residual"], zip(scan.alphas, scan.residuals))
        for a, r in zip(scan.alphas, scan.residuals):
            run.say(f"alpha {a:<10g} r {r:.6e}")
        if scan.undefined:
            run.say(f"exponent undefined: residuals within 10x the scheme floor {scan.floor:.3e}")
        else:
            run.say(f"fitted exponent {scan.exponent:.4f} (floor {scan.floor:.3e})")
    run.finish()


if __name__ == "__main__":
    main()
