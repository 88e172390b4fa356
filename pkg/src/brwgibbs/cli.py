"""Command-line front end: every campaign and sampler as a subcommand.

Each run writes CSV/JSON files into ``--out``. CSV files start with ``#``
comment lines naming the statement being checked, the config hash and the
seed. ``summary.json`` holds the resolved config, results and gate verdicts.
With ``--gates`` the exit status is 0 iff every gate of the run passes.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
from scipy import stats

from . import harness, limits, rwalk, spine
from .brw import martingales, simulate
from .config import RunConfig, load_sections, load_thresholds, resolve
from .functionals import Constant, parse_functional
from .limits import ConstantsTable
from .montecarlo import McEstimate, map_replicas, replica_rng, z_score
from .offspring import law_from_config

STATEMENTS = {
    "simulate": "genealogical tree of the branching random walk in the boundary case",
    "martingales": "additive martingale has mean one and derivative martingale has mean zero",
    "many-to-one": "many-to-one identity: sums over generation n equal spine-walk expectations weighted by e^{S_n}",
    "overlap": "overlap of two Gibbs-sampled individuals is 0 or 1 in the limit, with split probability 1/beta",
    "laplace-profile": "Laplace tail of the rescaled Gibbs mass is flat in x at level C_beta E[F(e)^{1/beta}]",
    "annealed-compare": "Gibbs average of a path functional converges to sum_k p_k F(e_k) with Poisson-Dirichlet weights",
    "excursion-sample": "normalized Brownian excursion as the Bessel-3 bridge from 0 to 0",
    "meander-sample": "Brownian meander with Rayleigh endpoint",
    "pd-sample": "Poisson-Dirichlet(1/beta, 0) weights with mean overlap 1 - 1/beta",
    "renewal": "renewal functions of strict ladder heights, equal to x + 1 for the simple walk",
    "survival-scaling": "probability that a centred walk stays nonnegative for n steps decays like C/sqrt(n)",
    "htransform": "walk conditioned to stay nonnegative via the h-transform by the renewal function",
    "ballot": "ballot bound: n^{3/2} P(end in a window above barriers) stays bounded",
    "imhof": "meander of length t equals the Bessel-3 process weighted by sqrt(pi/2) sqrt(t)/R(t)",
    "gamma-identity": "excursion split at lam equals a weighted meander followed by a Bessel-3 bridge to 0",
}

# per-command defaults; RunConfig fields listed here override its own defaults
COMMANDS: dict[str, dict] = {
    "simulate": {"n": 10},
    "martingales": {"n": 10, "beta": 2.0, "replicas": 10_000},
    "many-to-one": {"n": 10, "replicas": 100_000, "g": "positive", "width": 0.5, "tilt": 1.0},
    "overlap": {"n": 20, "beta": 2.0, "replicas": 2000, "t_grid": "0.25,0.375,0.5,0.625,0.75",
                "pairs": 0, "limit_replicas": 10_000},
    "laplace-profile": {"n": 20, "beta": 2.0, "replicas": 1000, "functional": "const:1", "x_points": 7,
                        "margin": harness.DEFAULT_MARGIN, "x_grid": "", "theta": 2.0, "compare": "max",
                        "limit_replicas": 100_000},
    "annealed-compare": {"beta": 2.0, "replicas": 1000, "n_list": "8,12,16,20", "functionals": "eval:0.5",
                         "bootstrap": 500, "excursion_replicas": 20_000},
    "excursion-sample": {"count": 10, "check_replicas": 100_000, "lam": 0.5},
    "meander-sample": {"count": 10, "check_replicas": 100_000},
    "pd-sample": {"beta": 2.0, "replicas": 10_000, "tail_eps": 1e-4, "write_draws": 20, "atoms": 16},
    "renewal": {"step": "lattice", "replicas": 10_000, "x_grid": "0,1,2,3,5,10,20,40", "horizon": 4096,
                "dp_length": 40},
    "survival-scaling": {"step": "gaussian", "replicas": 1_000_000, "n_list": "256,1024,4096"},
    "htransform": {"step": "lattice", "N": 6, "x0": 0.0, "replicas": 1_000_000, "harmonic_N": 12,
                   "renewal_replicas": 4000, "write_paths": 5},
    "ballot": {"step": "gaussian", "replicas": 1_000_000, "n_list": "64,256,1024", "x": 1.0, "y": 0.0,
               "a": 0.0, "b": 2.0, "lam": 0.5},
    "imhof": {"replicas": 20_000, "t": 0.5, "functionals": "const:1,eval:0.25,max"},
    "gamma-identity": {"replicas": 20_000, "lam": 0.5, "pairs": "const:1/const:1;max/avg;eval:0.25/max"},
}

COMMON_FLAGS = ("seed", "law", "q", "workers", "out", "gates", "grid_points", "m")


class ConfigError(ValueError):
    pass


@dataclass
class Gate:
    name: str
    passed: bool
    detail: dict

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), **self.detail}


class Output:
    """Writes files into the run directory with the common header."""

    def __init__(self, cfg: RunConfig):
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.header = [f"statement: {STATEMENTS[cfg.command]}", f"command: {cfg.command}",
                       f"config_hash: {cfg.config_hash()}", f"seed: {cfg.seed}"]
        self.files: list[str] = []

    def write(self, name: str, text: str):
        with open(self.dir / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.files.append(name)

    def csv(self, name: str, body: str):
        self.write(name, "".join(f"# {h}\n" for h in self.header) + body)

    def json(self, name: str, obj):
        self.write(name, harness.to_json(obj))


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _functionals(text) -> list:
    items = text if isinstance(text, (list, tuple)) else str(text).split(",")
    return [parse_functional(s) for s in items if s.strip()]


def _g(v: float) -> str:
    return f"{v:.17g}"


def _est(e: McEstimate) -> dict:
    return e.as_dict()


# ---------------------------------------------------------------- tree campaigns

def run_simulate(cfg, out, th):
    law = law_from_config(cfg.law, cfg.q)
    tree = simulate(law, cfg.n, cfg.seed)
    out.csv("tree.csv", tree.to_csv())
    sizes = [tree.generation_size(g) for g in range(cfg.n + 1)]
    return {"nodes": tree.size, "generation_sizes": sizes, "law": law.describe()}, []


def _martingale_row(r, law, n, beta, seed):
    m = martingales(simulate(law, n, replica_rng(seed, r)), n, beta)
    return m.W_n_1, m.Z_n, m.W_n_beta


def run_martingales(cfg, out, th):
    law = law_from_config(cfg.law, cfg.q)
    rows = np.array(map_replicas(partial(_martingale_row, law=law, n=cfg.n, beta=cfg.beta, seed=cfg.seed),
                                 range(cfg.replicas), cfg.workers))
    body = ["replica,W_n_1,Z_n,W_n_beta"]
    body += [f"{r},{_g(a)},{_g(b)},{_g(c)}" for r, (a, b, c) in enumerate(rows)]
    out.csv("martingales.csv", "\n".join(body) + "\n")
    w, z, wb = (McEstimate.from_samples(rows[:, j]) for j in range(3))
    k = th["martingale"]["k_se"]
    gates = [Gate("additive_mean_one", w.within(1.0, k), {"estimate": _est(w), "target": 1.0, "k_se": k}),
             Gate("derivative_mean_zero", z.within(0.0, k), {"estimate": _est(z), "target": 0.0, "k_se": k})]
    return {"W_n_1": w, "Z_n": z, "W_n_beta": wb, "W_n_beta_exact_mean": spine.partition_function_mean(
        law, cfg.n, cfg.beta)}, gates


def run_many_to_one(cfg, out, th):
    law = law_from_config(cfg.law, cfg.q)
    p = cfg.params
    g = {"positive": spine.smooth_positive(p["width"]), "one": spine.one, "last": spine.last}.get(p["g"])
    if g is None:
        raise ConfigError(f"unknown test function {p['g']!r}; expected positive, one or last")
    lhs, rhs = spine.many_to_one_check(law, cfg.n, g, cfg.replicas, cfg.seed, p["tilt"], cfg.workers)
    z = z_score(lhs, rhs)
    out.csv("many_to_one.csv", "side,estimate,se\n" + f"tree,{_g(lhs.mean)},{_g(lhs.se)}\n"
            + f"walk,{_g(rhs.mean)},{_g(rhs.se)}\n")
    k = th["many_to_one"]["k_se"]
    gates = [Gate("sides_agree", abs(z) <= k, {"z": z, "k_se": k})]
    res = {"tree": lhs, "walk": rhs, "z": z}
    if p["g"] == "one":
        exact = law.mean_offspring ** cfg.n
        res["exact"] = exact
        zw = z_score(rhs, exact)
        gates.append(Gate("walk_side_exact", abs(zw) <= k, {"z": zw, "exact": exact}))
    return res, gates


def run_overlap(cfg, out, th):
    law = law_from_config(cfg.law, cfg.q)
    p = cfg.params
    t_grid = np.array(_floats(p["t_grid"]))
    pairs = int(p["pairs"]) or None
    rep = harness.overlap_step_report(law, cfg.n, cfg.beta, t_grid, cfg.replicas, cfg.seed,
                                      int(p["limit_replicas"]), pairs, cfg.workers)
    out.csv("overlap.csv", rep.to_csv())
    out.csv("mrca_histogram.csv", rep.histogram_csv())
    o = th["overlap"]
    inner = (t_grid >= 0.25 - 1e-12) & (t_grid <= 0.75 + 1e-12)
    means = rep.means
    spread = float(means[inner].max() - means[inner].min()) if inner.any() else 0.0
    mid = int(np.argmin(np.abs(t_grid - 0.5)))
    target = 1.0 / cfg.beta
    gates = [Gate("flat", spread <= o["flatness"], {"spread": spread, "max": o["flatness"]}),
             Gate("level", abs(means[mid] - target) <= o["level_tol"],
                  {"t": float(t_grid[mid]), "value": float(means[mid]), "target": target, "tol": o["level_tol"]}),
             Gate("limit", rep.limit.within(target, th["pd"]["k_se"], th["pd"]["tail_eps"]),
                  {"limit": _est(rep.limit), "target": target})]
    return {"split_prob": rep.split_prob, "limit": rep.limit, "spread": spread,
            "streams_used": rep.streams_used}, gates


def run_laplace_profile(cfg, out, th):
    law = law_from_config(cfg.law, cfg.q)
    p = cfg.params
    F = parse_functional(p["functional"])
    xg = (np.array(_floats(p["x_grid"])) if p.get("x_grid")
          else harness.default_x_grid(cfg.n, int(p["x_points"]), float(p["margin"])))
    cmp_F = parse_functional(p["compare"]) if p["compare"] else None
    fs = [F, Constant(1.0)] + ([cmp_F] if cmp_F is not None else [])
    log_w, _ = harness.log_tilde_mu_samples(law, cfg.n, cfg.beta, fs, cfg.replicas, cfg.seed, cfg.workers)
    prof = harness.profile_from_samples(log_w[:, 0], cfg.beta, cfg.n, xg, F.describe())
    one = harness.profile_from_samples(log_w[:, 1], cfg.beta, cfg.n, xg, "const:1")
    body = prof.to_csv()
    if F.describe() != "const:1":
        body += "".join(one.to_csv().splitlines(True)[1:])
    res = {"x_grid": xg, "profile": prof.values, "spread": prof.spread(), "C_beta": one.plateau(),
           "C_beta_spread": one.spread()}
    gates = []
    k = th["plateau"]["k_se"]
    if p["theta"]:
        theta = float(p["theta"])
        tc = harness.theta_scaling_check(law, cfg.n, cfg.beta, theta, xg, cfg.replicas, cfg.seed,
                                         log_w_one=log_w[:, 1])
        res["theta"] = {**tc.as_dict(), "theta": theta,
                        "finite_x_factor": harness.finite_x_theta_factor(theta, cfg.beta, xg)}
        gates.append(Gate("theta_scaling", abs(tc.z) <= k, {"z": tc.z, "ratio": _est(tc.ratio),
                                                             "target": tc.target.mean, "k_se": k}))
    if cmp_F is not None:
        pc = harness.functional_plateau_check(law, cfg.n, cfg.beta, cmp_F, xg, cfg.replicas, cfg.seed,
                                              int(p["limit_replicas"]), log_w=log_w[:, [2, 1]])
        cp = harness.profile_from_samples(log_w[:, 2], cfg.beta, cfg.n, xg, cmp_F.describe())
        body += "".join(cp.to_csv().splitlines(True)[1:])
        res["compare"] = {**pc.as_dict(), "functional": cmp_F.describe()}
        gates.append(Gate("functional_plateau", abs(pc.z) <= k, {"z": pc.z, "ratio": _est(pc.ratio),
                                                                  "target": _est(pc.target), "k_se": k}))
    out.csv("profile.csv", body)
    c = one.plateau()
    cb = {f"{cfg.beta:g}": {"mean": c.mean, "se": c.se, "c_star": limits.c_star_beta(c.mean, cfg.beta)
                           if c.mean > 0 else None,
                           "spread": one.spread(), "reliable": one.spread() <= th["c_beta_max_spread"]}}
    out.json("constants.json", {"C_beta": cb})
    return res, gates


def run_annealed_compare(cfg, out, th):
    law = law_from_config(cfg.law, cfg.q)
    p = cfg.params
    n_list = _ints(p["n_list"])
    fs = _functionals(p["functionals"])
    rep = harness.annealed_functional_compare(law, n_list, cfg.beta, fs, cfg.replicas, cfg.seed, cfg.m,
                                              int(p["bootstrap"]), int(p["excursion_replicas"]), cfg.workers)
    out.csv("annealed.csv", rep.to_csv())
    k = th["annealed"]["k_se"]
    gates, trends = [], {}
    for F in fs:
        name = F.describe()
        rows = [r for r in rep.rows if r.functional == name]
        last = rows[-1]
        gates.append(Gate(f"first_moment[{name}]", abs(last.z_first_moment) <= k,
                          {"n": last.n, "z": last.z_first_moment, "k_se": k}))
        if isinstance(F, Constant):
            continue
        rho, dec = rep.trend(name)
        trends[name] = {"spearman": rho, "ks": [r.ks for r in rows]}
        gates.append(Gate(f"ks_decreases[{name}]", dec, {"ks_first": rows[0].ks, "ks_last": last.ks,
                                                          "spearman": rho}))
    return {"rows": [r.__dict__ for r in rep.rows], "trends": trends}, gates


# ---------------------------------------------------------------- limit objects

def _paths_csv(path, count: int) -> str:
    lines = ["path,t,value"]
    for i in range(count):
        lines += [f"{i},{_g(t)},{_g(v)}" for t, v in zip(path.grid, path.values[i])]
    return "\n".join(lines) + "\n"


def run_excursion_sample(cfg, out, th):
    p = cfg.params
    count = int(p["count"])
    res, gates = {}, []
    if count:
        out.csv("excursions.csv", _paths_csv(limits.sample_excursion(cfg.m, replica_rng(cfg.seed, 0), count),
                                             count))
    if p["check_replicas"]:
        lam = float(p["lam"])
        path = limits.sample_excursion(cfg.m, replica_rng(cfg.seed, 1), int(p["check_replicas"]),
                                       grid=[0.0, lam, 1.0])
        ks = float(stats.kstest(path.values[:, 1], limits.excursion_marginal(lam).cdf).statistic)
        res["marginal"] = {"lam": lam, "ks": ks, "mean": McEstimate.from_samples(path.values[:, 1])}
        gates.append(Gate("marginal_ks", ks < th["limits"]["ks_max"], {"ks": ks, "max": th["limits"]["ks_max"]}))
    return res, gates


def run_meander_sample(cfg, out, th):
    p = cfg.params
    count = int(p["count"])
    res, gates = {}, []
    if count:
        out.csv("meanders.csv", _paths_csv(limits.sample_meander(cfg.m, replica_rng(cfg.seed, 0), count), count))
    if p["check_replicas"]:
        path = limits.sample_meander(cfg.m, replica_rng(cfg.seed, 1), int(p["check_replicas"]), grid=[0.0, 1.0])
        ks = float(stats.kstest(path.values[:, -1], limits.RAYLEIGH.cdf).statistic)
        res["endpoint"] = {"ks": ks, "mean": McEstimate.from_samples(path.values[:, -1])}
        gates.append(Gate("endpoint_ks", ks < th["limits"]["ks_max"], {"ks": ks, "max": th["limits"]["ks_max"]}))
    return res, gates


def run_pd_sample(cfg, out, th):
    p = cfg.params
    rng = replica_rng(cfg.seed, 0)
    eps = float(p["tail_eps"])
    draws = [limits.sample_poisson_dirichlet(cfg.beta, eps, rng) for _ in range(cfg.replicas)]
    lines = ["draw,rank,weight,tail_bound"]
    for i, d in enumerate(draws[: int(p["write_draws"])]):
        lines += [f"{i},{k + 1},{_g(w)},{_g(d.tail_bound)}" for k, w in enumerate(d.weights[: int(p["atoms"])])]
    out.csv("pd_weights.csv", "\n".join(lines) + "\n")
    mom = McEstimate.from_samples([d.overlap for d in draws])
    target = 1.0 - 1.0 / cfg.beta
    k = th["pd"]["k_se"]
    converged = sum(d.converged for d in draws) / len(draws)
    gates = [Gate("overlap_moment", mom.within(target, k, eps), {"estimate": _est(mom), "target": target,
                                                                  "k_se": k, "slack": eps})]
    return {"overlap_moment": mom, "target": target, "converged_fraction": converged}, gates


# ---------------------------------------------------------------- random walks

def _step(name: str):
    try:
        return rwalk.step_from_name(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_renewal(cfg, out, th):
    p = cfg.params
    step = _step(p["step"])
    xg = np.array(_floats(p["x_grid"]))
    table = rwalk.renewal_estimate(step, xg, cfg.replicas, int(p["horizon"]), cfg.seed)
    out.csv("renewal.csv", table.to_csv())
    k = th["renewal"]["k_se"]
    res = {"x_grid": xg, "v_minus": table.v_minus, "v_plus": table.v_plus, "slope": table.slope,
           "unfinished_fraction": table.unfinished_fraction}
    gates = [Gate("v_minus_at_zero", xg[0] != 0 or table.v_minus[0].mean == 1.0, {"value": table.v_minus[0].mean})]
    if step.kind == "lattice":
        xs = [int(x) for x in xg if float(x).is_integer()]
        dp = {x: rwalk.lattice_record_dp(x, int(p["dp_length"])) for x in xs}
        res["dp"] = {str(x): {"records": float(r), "unreached": float(u)} for x, (r, u) in dp.items()}
        gates.append(Gate("dp_exact", all(r + u == x + 1 for x, (r, u) in dp.items()), {}))
        ok = all(e.within(math.floor(x) + 1.0, k) for x, e in zip(xg, table.v_minus))
        gates.append(Gate("mc_matches_x_plus_one", ok, {"k_se": k}))
    else:
        idx = {float(x): i for i, x in enumerate(xg)}
        if 20.0 in idx and 40.0 in idx:
            r20 = table.v_minus[idx[20.0]].mean / 20.0
            r40 = table.v_minus[idx[40.0]].mean / 40.0
            rel = abs(r20 / r40 - 1.0)
            gates.append(Gate("linear_growth", rel <= th["renewal"]["ratio_tol"], {"ratio_20": r20, "ratio_40": r40}))
    return res, gates


def run_survival_scaling(cfg, out, th):
    p = cfg.params
    step = _step(p["step"])
    sc = rwalk.survival_scaling(step, _ints(p["n_list"]), cfg.replicas, cfg.seed)
    out.csv("survival.csv", sc.to_csv())
    tol = th["survival"]["plateau_rel_spread"]
    k = th["survival"]["symmetry_k_se"]
    last = len(sc.n_list) - 1
    table = ConstantsTable(sc.c_plus[last], sc.c_minus[last], math.sqrt(step.variance))
    out.write("constants.json", table.to_json())
    sym = [z_score(a, b) for a, b in zip(sc.c_plus, sc.c_minus)]
    gates = [Gate("plateau_plus", sc.spread("plus") <= tol, {"spread": sc.spread("plus"), "max": tol}),
             Gate("plateau_minus", sc.spread("minus") <= tol, {"spread": sc.spread("minus"), "max": tol}),
             Gate("symmetry", all(abs(z) <= k for z in sym), {"z": sym, "k_se": k})]
    return {"c_plus": sc.c_plus, "c_minus": sc.c_minus, "spread_plus": sc.spread("plus"),
            "spread_minus": sc.spread("minus")}, gates


def run_htransform(cfg, out, th):
    p = cfg.params
    step = _step(p["step"])
    N, x0 = int(p["N"]), float(p["x0"])
    rng = replica_rng(cfg.seed, 0)
    h = th["htransform"]
    res, gates = {}, []
    if step.kind == "lattice":
        table = rwalk.RenewalTable.lattice_exact(np.arange(0, 2 * N + int(x0) + 2))
        paths = rwalk.h_transform_sample(step, table, x0, N, rng, size=cfg.replicas)
        exact = rwalk.lattice_conditioned_law(N, int(x0))
        tv = rwalk.total_variation(paths, exact)
        keys, counts = np.unique(np.rint(paths).astype(np.int64), axis=0, return_counts=True)
        emp = {tuple(k.tolist()): c / cfg.replicas for k, c in zip(keys, counts)}
        lines = ["path,empirical,exact"]
        for path in sorted(exact):
            lines.append(f"{' '.join(map(str, path))},{_g(emp.get(path, 0.0))},{_g(float(exact[path]))}")
        out.csv("htransform.csv", "\n".join(lines) + "\n")
        res["tv"] = tv
        gates.append(Gate("tv_exact_law", tv < h["tv_max"], {"tv": tv, "max": h["tv_max"]}))
        hn = int(p["harmonic_N"])
        harm = {}
        for x in range(4):
            harm[str(x)] = all(a == b for a, b in (rwalk.harmonicity_lattice_exact(x, k) for k in range(1, hn + 1)))
        res["harmonic"] = harm
        gates.append(Gate("harmonic_exact", all(harm.values()), {"N_max": hn}))
    else:
        xg = np.array([0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0])
        table = rwalk.renewal_estimate(step, xg, int(p["renewal_replicas"]), 4096, cfg.seed)
        paths = rwalk.h_transform_sample(step, table, x0, N, rng, size=cfg.replicas)
        end = paths[:, -1] / math.sqrt(step.variance * N)
        ks = float(stats.kstest(end, stats.maxwell().cdf).statistic)
        out.csv("htransform.csv", "sample,endpoint\n" + "".join(f"{i},{_g(v)}\n" for i, v in enumerate(end)))
        res["endpoint_ks"] = ks
        gates.append(Gate("bessel_endpoint_ks", ks < h["ks_max"], {"ks": ks, "max": h["ks_max"]}))
    res["nonnegative"] = bool(np.all(paths >= 0))
    gates.append(Gate("nonnegative", res["nonnegative"], {}))
    k = int(p["write_paths"])
    if k:
        lines = ["path,k,value"] + [f"{i},{j},{_g(v)}" for i in range(min(k, paths.shape[0]))
                                    for j, v in enumerate(paths[i])]
        out.csv("htransform_paths.csv", "\n".join(lines) + "\n")
    return res, gates


def run_ballot(cfg, out, th):
    p = cfg.params
    step = _step(p["step"])
    n_list = _ints(p["n_list"])
    est = rwalk.ballot_check(step, n_list, float(p["x"]), float(p["y"]), float(p["a"]), float(p["b"]),
                             float(p["lam"]), cfg.replicas, cfg.seed)
    out.csv("ballot.csv", "n,estimate,se\n" + "".join(f"{n},{_g(e.mean)},{_g(e.se)}\n" for n, e in zip(n_list, est)))
    means = np.array([e.mean for e in est])
    ratio = float(means.max() / means.min()) if means.min() > 0 else math.inf
    mx = th["ballot_ratio_max"]
    return {"estimates": est, "ratio": ratio}, [Gate("bounded", ratio < mx, {"ratio": ratio, "max": mx})]


# ---------------------------------------------------------------- identities

def run_imhof(cfg, out, th):
    p = cfg.params
    t = float(p["t"])
    k = th["limits"]["k_se"]
    rows, gates, res = ["functional,lhs,lhs_se,rhs,rhs_se,z"], [], {}
    for j, F in enumerate(_functionals(p["functionals"])):
        a, b, z = limits.imhof_check(F, t, cfg.replicas, replica_rng(cfg.seed, j), cfg.m)
        rows.append(f"{F.describe()},{_g(a.mean)},{_g(a.se)},{_g(b.mean)},{_g(b.se)},{_g(z)}")
        res[F.describe()] = {"meander": a, "bessel": b, "z": z}
        gates.append(Gate(f"z[{F.describe()}]", abs(z) < k, {"z": z, "k_se": k}))
    out.csv("imhof.csv", "\n".join(rows) + "\n")
    return res, gates


def run_gamma_identity(cfg, out, th):
    p = cfg.params
    lam = float(p["lam"])
    k = th["limits"]["k_se"]
    rows, gates, res = ["g1,g2,lhs,lhs_se,rhs,rhs_se,z"], [], {}
    for j, pair in enumerate(s for s in str(p["pairs"]).split(";") if s.strip()):
        try:
            t1, t2 = pair.split("/")
        except ValueError:
            raise ConfigError(f"pair {pair!r} must look like g1/g2") from None
        g1, g2 = parse_functional(t1), parse_functional(t2)
        a, b, z = limits.gamma_identity_check(g1, g2, lam, cfg.replicas, replica_rng(cfg.seed, j), cfg.m)
        name = f"{g1.describe()}/{g2.describe()}"
        rows.append(f"{g1.describe()},{g2.describe()},{_g(a.mean)},{_g(a.se)},{_g(b.mean)},{_g(b.se)},{_g(z)}")
        res[name] = {"excursion": a, "spliced": b, "z": z}
        gates.append(Gate(f"z[{name}]", abs(z) < k, {"z": z, "k_se": k}))
    out.csv("gamma_identity.csv", "\n".join(rows) + "\n")
    return res, gates


HANDLERS = {
    "simulate": run_simulate, "martingales": run_martingales, "many-to-one": run_many_to_one,
    "overlap": run_overlap, "laplace-profile": run_laplace_profile, "annealed-compare": run_annealed_compare,
    "excursion-sample": run_excursion_sample, "meander-sample": run_meander_sample, "pd-sample": run_pd_sample,
    "renewal": run_renewal, "survival-scaling": run_survival_scaling, "htransform": run_htransform,
    "ballot": run_ballot, "imhof": run_imhof, "gamma-identity": run_gamma_identity,
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brwgibbs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    base = RunConfig(command="")
    for name, defaults in COMMANDS.items():
        sp = sub.add_parser(name, help=STATEMENTS[name])
        sp.add_argument("--config", help="JSON file with a section per command")
        sp.add_argument("--seed", type=int, help="master seed (required, here or in the config)")
        sp.add_argument("--law", choices=["binary_gaussian", "bernoulli_binary"])
        sp.add_argument("--q", type=float, help="extinction probability of the Bernoulli law")
        sp.add_argument("--workers", type=int, help="worker processes; results do not depend on it")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--gates", action="store_const", const=True, help="evaluate gates and set the exit status")
        sp.add_argument("--grid-points", type=int, dest="grid_points")
        sp.add_argument("--m", type=int, help="steps of sampled limit paths")
        for key, val in defaults.items():
            if key in COMMON_FLAGS:
                continue
            typ = type(val) if not isinstance(val, bool) else int
            sp.add_argument(_flag(key), dest=key, type=typ, help=f"default {val}")
        for key in ("n", "beta", "replicas"):
            if key not in defaults:
                sp.add_argument(_flag(key), dest=key, type=type(getattr(base, key)))
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    try:
        sections = load_sections(args.pop("config"))
        cfg = resolve(command, COMMANDS[command], sections, args)
        if cfg.seed is None:
            raise ConfigError("--seed is required")
        if cfg.replicas < 1 or cfg.n < 0 or cfg.workers < 1:
            raise ConfigError("replicas and workers must be positive and n nonnegative")
        out = Output(cfg)
        results, gates = HANDLERS[command](cfg, out, load_thresholds())
    except (ValueError, OSError, KeyError) as exc:
        print(f"brwgibbs {command}: error: {exc}", file=sys.stderr)
        return 2
    summary = {"command": command, "statement": STATEMENTS[command], "config_hash": cfg.config_hash(),
               "seed": cfg.seed, "config": cfg.canonical(), "results": results,
               "files": sorted(out.files + ["summary.json"])}
    if cfg.gates:
        summary["gates"] = [g.as_dict() for g in gates]
        summary["all_passed"] = all(g.passed for g in gates)
    out.json("summary.json", summary)
    for g in gates if cfg.gates else []:
        print(f"{'PASS' if g.passed else 'FAIL'} {command} {g.name}")
    return 0 if not cfg.gates or all(g.passed for g in gates) else 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
