"""One runnable check per subcommand.

Every runner takes a fully defaulted :class:`ExperimentConfig` and returns
an :class:`ExperimentResult` (a report plus CSV-ready series).  Simulation
work is split into replica blocks through :func:`replica_map`; each block
task is a module-level function of (config, replica indices) so blocks can
run in worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import colehopf as ch
from . import sde1d
from . import stochastic_analysis as sa
from .errors import ParameterError
from .harness import ExperimentConfig, replica_generators, replica_map
from .plotting import Series
from .report import StatReport
from .spde import (
    SPDEConfig,
    NoiseStream,
    Trajectory,
    drift_integrand,
    iterate_trajectory,
    pair_series,
    residual_from_series,
    white_noise_ensemble,
    _left_riemann,
)
from .torus_field import (
    TWO_PI,
    Mollifier,
    SpectralField,
    dealiased_size,
    grid_points,
    laplacian,
    pair_coeffs,
    renorm_constant,
    sample_white_noise,
    to_grid,
)


@dataclass
class ExperimentResult:
    report: StatReport
    series: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    trajectory: Trajectory | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    run: Callable
    defaults: dict
    claim: str
    anchor: str


def _mollifier(cfg: ExperimentConfig) -> Mollifier:
    return Mollifier(inner=cfg.mollifier_inner, outer=cfg.mollifier_outer)


def _test_function(name: str, K: int) -> SpectralField:
    """Named test functions: sin, cos, one_plus_cos, sin2 (= sin 4πx)."""
    table = {
        "sin": {1: -0.5j},
        "cos": {1: 0.5},
        "one_plus_cos": {0: 1.0, 1: 0.5},
        "sin2": {2: -0.5j},
    }
    if name not in table:
        raise ParameterError(f"unknown test function {name!r}; choose from {', '.join(table)}")
    return SpectralField.from_modes(table[name], K)


def _dirichlet_norm(phi: SpectralField) -> float:
    """2 ||∂x φ||²."""
    c = phi.coeffs * (TWO_PI * 1j * np.arange(phi.K + 1))
    return 2.0 * float(pair_coeffs(c, c))


# ----------------------------------------------------------------------------
# streaming helpers
# ----------------------------------------------------------------------------

def _stream(cfg: ExperimentConfig, indices, per_chunk, *, K=None, dt=None, T=None, scheme="expeuler",
            mean_zero=False, sign=1.0, stream=0, chunk_steps=256, noise_scale=math.sqrt(2.0), u0=None):
    """Run a replica block and collect pointwise series ``(n_times, block)``.

    ``per_chunk(traj_chunk)`` returns a dict of arrays with time on axis 0;
    chunks share boundary states, which are kept once.
    """
    K = K or cfg.K
    dt = dt or cfg.dt
    T = T or cfg.T
    rngs = replica_generators(cfg.seed, indices, stream)
    if u0 is None:
        u0 = white_noise_ensemble(K, rngs, mean_zero)
    else:
        u0 = u0(rngs)
    conf = SPDEConfig(K, dt, T, scheme=scheme, noise_scale=noise_scale)
    stepper = conf.stepper(sign)
    parts, times = {}, []
    for i, chunk in enumerate(iterate_trajectory(u0, stepper, conf.n_steps, NoiseStream(rngs, K, dt),
                                                 chunk_steps=chunk_steps)):
        skip = 0 if i == 0 else 1
        times.append(chunk.times[skip:])
        for name, v in per_chunk(chunk).items():
            parts.setdefault(name, []).append(np.array(np.asarray(v)[skip:]))   # copy: drop the chunk
    return np.concatenate(times), {k: np.concatenate(v) for k, v in parts.items()}


def _join_blocks(results):
    """Reduce block results (times, dict) by concatenating along the replica axis."""
    times = results[0][0]
    keys = results[0][1].keys()
    return times, {k: np.concatenate([r[1][k] for r in results], axis=1) for k in keys}


def _map(cfg, task, block_size=None):
    return replica_map(cfg, task, _join_blocks, block_size=block_size or cfg.param("block_size"))


# ----------------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------------

def _task_simulate(cfg, idx):
    scheme = cfg.param("scheme", "expeuler")
    phi = _test_function(cfg.param("phi", "cos"), cfg.K)

    def per_chunk(c):
        return {"mean": c.coeffs[..., 0].real, "energy": pair_coeffs(c.coeffs, c.coeffs),
                "u_phi": pair_series(c, phi)}

    final = {}
    every = cfg.param("dump_stride") or max(1, int(round(cfg.T / cfg.dt)) // 100)

    def grab(c):
        final["coeffs"] = c.coeffs[-1].copy()
        steps = np.rint(c.times / cfg.dt).astype(int)
        keep = (steps % every == 0) & (steps > final.get("last", -1))
        final["last"] = steps[-1]
        final.setdefault("dump", []).append(c.coeffs[keep])
        final.setdefault("dump_t", []).append(c.times[keep])
        return per_chunk(c)

    def she_start(rngs):
        return ch.she_initial(white_noise_ensemble(cfg.K, rngs, mean_zero=True))
    u0 = she_start if scheme == "she" else None
    times, out = _stream(cfg, idx, grab, scheme=scheme, u0=u0, noise_scale=cfg.param("noise_scale", math.sqrt(2.0)))
    out["final"] = final["coeffs"][None]
    out["dump"] = np.concatenate(final["dump"])
    return times, out


def run_simulate(cfg: ExperimentConfig) -> ExperimentResult:
    times, out = _map(cfg, _task_simulate)
    scheme = cfg.param("scheme", "expeuler")
    rep = StatReport("simulate")
    drift = np.max(np.abs(out["mean"] - out["mean"][0]))
    if scheme == "she":
        rep.add("positivity maintained (steps completed)", float(len(times) - 1), math.nan,
                float(round(cfg.T / cfg.dt)), "abs", 0.0)
    else:
        rep.add("max |mean(t) - mean(0)|", float(drift), math.nan, 1e-12, "le")
    K = cfg.K
    modes = K + (0 if scheme == "she" else 1)
    rep.add("energy per mode at T (ensemble mean)", float(np.mean(out["energy"][-1]) / (2 * K + 1)),
            math.nan, math.nan, "info")
    rep.metadata.update(scheme=scheme, modes=modes)
    every = max(1, len(times) // 2000)
    series = {"series": Series({"t": times[::every], "energy_mean": out["energy"][::every].mean(axis=1),
                                "u_phi_replica0": out["u_phi"][::every, 0], "mean_replica0": out["mean"][::every, 0]},
                               "t", ("energy_mean",), title="ensemble mean of ∫u² over time")}
    final = SpectralField(out["final"][0, 0])
    every = cfg.param("dump_stride") or max(1, int(round(cfg.T / cfg.dt)) // 100)
    steps = np.rint(times / cfg.dt).astype(int)
    traj = Trajectory(times[steps % every == 0], out["dump"], None, scheme == "she", every)
    return ExperimentResult(rep, series, {"final_field": final}, traj)


# ----------------------------------------------------------------------------
# invariance
# ----------------------------------------------------------------------------

def _task_invariance(cfg, idx):
    sample_steps = [int(round(t / cfg.dt)) for t in cfg.param("sample_times")]
    captured = {}

    def per_chunk(c):
        steps = np.rint(c.times / cfg.dt).astype(int)
        for j, s in enumerate(steps):
            if s in sample_steps:
                captured[s] = c.coeffs[j].copy()
        return {"mean": c.coeffs[:, :, 0].real}

    times, out = _stream(cfg, idx, per_chunk, chunk_steps=1000)
    out = {"fields": np.stack([captured[s] for s in sample_steps]), "mean": out["mean"][[0, -1]]}
    return times[[0, -1]], out


def run_invariance(cfg: ExperimentConfig) -> ExperimentResult:
    _, out = _map(cfg, _task_invariance)
    rep = StatReport("invariance-test")
    cols = {}
    for t, fields in zip(cfg.param("sample_times"), out["fields"]):
        sub = sa.stationarity_test(fields, mean_zero=False, label=f"t={t:g}")
        rep.extend(sub)
        cols[f"z_t={t:g}"] = sub.metadata["z_scores"]
    rep.add("max |mean(T) - mean(0)|", float(np.max(np.abs(out["mean"][-1] - out["mean"][0]))),
            math.nan, 1e-12, "le")
    d = len(next(iter(cols.values())))
    cols = {"real_mode": np.arange(d), **cols}
    series = {"zscores": Series(cols, "real_mode", tuple(k for k in cols if k != "real_mode"), kind="scatter",
                                title="per-mode second-moment z-scores", ylabel="z")}
    return ExperimentResult(rep, series)


# ----------------------------------------------------------------------------
# martingale QV and time reversal
# ----------------------------------------------------------------------------

def _task_residual(cfg, idx):
    phi = _test_function(cfg.param("phi", "sin"), cfg.K)
    lap = laplacian(phi)

    def per_chunk(c):
        return {"u_phi": pair_series(c, phi), "u_lap": pair_series(c, lap), "drift": drift_integrand(c, phi)}

    return _stream(cfg, idx, per_chunk, chunk_steps=500)


def _qv_stats(rep, M, dt, target, label):
    qv = sa.realized_qv(M, dt, levels=4)
    rep.add(f"{label} realized QV / T", qv.estimate, qv.stderr, target, "rel", 0.05)
    rep.add(f"{label} QV / T extrapolated to mesh 0", qv.extra["limit"], math.nan, target, "info")
    return qv


def run_qv(cfg: ExperimentConfig) -> ExperimentResult:
    times, out = _map(cfg, _task_residual)
    phi = _test_function(cfg.param("phi", "sin"), cfg.K)
    target = _dirichlet_norm(phi)
    M = residual_from_series(out["u_phi"], out["u_lap"], out["drift"], times)
    rep = StatReport("qv-test")
    qv = _qv_stats(rep, M, cfg.dt, target, "M(φ)")
    mT, seT = float(M[-1].mean()), float(M[-1].std(ddof=1) / math.sqrt(M.shape[1]))
    rep.add("E[M_T(φ)]", mT, seT, 0.0, "info")
    series = {"qv_levels": Series({"mesh": qv.levels, "qv_per_time": qv.values, "stderr": qv.value_stderr},
                                  "mesh", ("qv_per_time",), errors={"qv_per_time": "stderr"}, logx=True,
                                  title="realized QV / T by dyadic level",
                                  reference={"2‖∂φ‖²": (qv.levels, np.full(len(qv.levels), target))})}
    return ExperimentResult(rep, series)


def run_reverse(cfg: ExperimentConfig) -> ExperimentResult:
    times, out = _map(cfg, _task_residual)
    phi = _test_function(cfg.param("phi", "sin"), cfg.K)
    target = _dirichlet_norm(phi)
    rev = {k: v[::-1] for k, v in out.items()}
    M_rev = residual_from_series(rev["u_phi"], rev["u_lap"], rev["drift"], times, drift_sign=-1.0)
    M_wrong = residual_from_series(rev["u_phi"], rev["u_lap"], rev["drift"], times, drift_sign=+1.0)
    M_fwd = residual_from_series(out["u_phi"], out["u_lap"], out["drift"], times)
    rep = StatReport("reverse-test")
    qv = _qv_stats(rep, M_rev, cfg.dt, target, "reversed M(φ)")
    T = times[-1] - times[0]
    R = M_rev.shape[1]
    for label, M, rule in (("reversed, flipped drift sign", M_rev, "z"),
                           ("reversed, forward drift sign", M_wrong, "info"),
                           ("forward", M_fwd, "info")):
        v = float(M[-1].var(ddof=1)) / (target * T)
        se = v * math.sqrt(2.0 / (R - 1))
        rep.add(f"Var[M_T] / (2‖∂φ‖² T), {label}", v, se, 1.0, rule, 3.0)
    series = {"qv_levels": Series({"mesh": qv.levels, "qv_per_time": qv.values, "stderr": qv.value_stderr},
                                  "mesh", ("qv_per_time",), errors={"qv_per_time": "stderr"}, logx=True,
                                  title="reversed residual: realized QV / T")}
    return ExperimentResult(rep, series)


# ----------------------------------------------------------------------------
# energy estimate and Hölder regularity
# ----------------------------------------------------------------------------

def _task_energy(cfg, idx):
    phi = _test_function(cfg.param("phi", "sin"), cfg.K)
    m = _mollifier(cfg)

    def per_chunk(c):
        return {f"N{N}": drift_integrand(c, phi, m.with_scale(N)) for N in cfg.levels}

    return _stream(cfg, idx, per_chunk, chunk_steps=500)


def run_energy(cfg: ExperimentConfig) -> ExperimentResult:
    times, out = _map(cfg, _task_energy)
    functionals = {N: _left_riemann(out[f"N{N}"], times) for N in cfg.levels}
    res = sa.energy_scaling(functionals, cfg.dt, cfg.param("windows"), min_replicas=cfg.param("min_replicas", 100))
    rep = StatReport("energy-test")
    lv, tm = res.slopes["level"], res.slopes["time"]
    rep.add("slope of log E[(I_N - I_M)²] in log(M∧N)", lv.slope, lv.stderr, (-1.2, -0.8), "range")
    rep.add("slope of log E[(I_N - I_M)²] in log(t-s)", tm.slope, tm.stderr, (0.8, 1.2), "range")
    cols = {"N": res.levels[:, 0], "M": res.levels[:, 1], "window": res.levels[:, 2],
            "mean_sq_diff": res.values, "stderr": res.value_stderr}
    series = {"energy": Series(cols, "window", ("mean_sq_diff",), group="N", logx=True, logy=True,
                               errors={"mean_sq_diff": "stderr"}, title="E[(I_N − I_2N)²] over windows")}
    return ExperimentResult(rep, series)


def _task_holder(cfg, idx):
    phi = _test_function(cfg.param("phi", "sin"), cfg.K)
    lap = laplacian(phi)

    def per_chunk(c):
        return {"u_phi": pair_series(c, phi), "u_lap": pair_series(c, lap), "drift": drift_integrand(c, phi)}

    return _stream(cfg, idx, per_chunk, chunk_steps=1000)


def run_holder(cfg: ExperimentConfig) -> ExperimentResult:
    times, out = _map(cfg, _task_holder)
    D = _left_riemann(out["drift"], times)
    M = residual_from_series(out["u_phi"], out["u_lap"], out["drift"], times)
    window = tuple(cfg.param("lag_range"))
    p_list = tuple(cfg.param("p_list", (2, 4)))
    hd = sa.holder_exponent(D, cfg.dt, p_list, window, n_lags=cfg.param("n_lags", 12))
    hm = sa.holder_exponent(M, cfg.dt, p_list, window, n_lags=cfg.param("n_lags", 12))
    rep = StatReport("holder-test")
    rep.add("pooled Hölder exponent, drift functional", hd.estimate, hd.stderr, (0.65, 0.85), "range")
    rep.add("pooled Hölder exponent, martingale part", hm.estimate, hm.stderr, (0.45, 0.55), "range")
    for p in p_list:
        rep.add(f"drift functional exponent, p={p}", hd.extra["alpha"][p], hd.extra["alpha_stderr"][p],
                math.nan, "info")
    rep.metadata["lag_window"] = window
    cols = {"lag": hd.levels}
    for i, p in enumerate(p_list):
        cols[f"S{p}_drift"] = hd.values[i]
        cols[f"S{p}_martingale"] = hm.values[i]
    series = {"structure": Series(cols, "lag", tuple(k for k in cols if k != "lag"), logx=True, logy=True,
                                  title="structure functions E|X(t+h) − X(t)|^p")}
    return ExperimentResult(rep, series)


# ----------------------------------------------------------------------------
# renormalization
# ----------------------------------------------------------------------------

def _gaussian_test(K_psi: int, width: float, K: int) -> SpectralField:
    return SpectralField.from_modes({k: math.exp(-k * k / width) for k in range(K_psi + 1)}, K)


def run_renorm(cfg: ExperimentConfig) -> ExperimentResult:
    m = _mollifier(cfg)
    K = cfg.K
    levels = list(cfg.levels)
    rng = replica_generators(cfg.seed, [0])[0]
    rep = StatReport("renorm-test")

    # c_N: Monte Carlo pointwise variance vs the summation oracle
    samples = cfg.param("cN_samples", 400)
    u = sample_white_noise(K, rng, size=samples).coeffs
    M = dealiased_size(K)
    mc, mc_se, oracle, line = [], [], [], []
    for N in levels:
        v = to_grid(u * m.with_scale(N).multipliers(K), M)
        per = np.mean(v * v, axis=-1)
        mc.append(per.mean())
        mc_se.append(per.std(ddof=1) / math.sqrt(samples))
        consts = renorm_constant(m.with_scale(N), K)
        oracle.append(consts.torus)
        line.append(consts.line)
    slope_mc = sa.fit_line(levels, mc).slope
    slope_oracle = sa.fit_line(levels, oracle).slope
    rep.add("c_N growth slope (Monte Carlo)", slope_mc, math.nan, slope_oracle, "rel", 0.10)
    rep.add("c_N growth slope (line normalization ∫ρ̂²)", m.profile_l2(), math.nan, slope_oracle, "info")

    # second-chaos variance
    phi = _test_function(cfg.param("phi", "cos"), K)
    var = [sa.second_chaos_variance(phi, m, N, K).estimate for N in levels]
    rep.add("smallest successive increase of Var[((ρ^N*u)² - c_N)(φ)]", float(np.min(np.diff(var))),
            math.nan, 0.0, "ge", note="strict increase required")
    rep.add("variance growth slope in N", sa.fit_line(levels, var).slope, math.nan, math.nan, "info")
    N_mc = cfg.param("mc_level", 16)
    chk = sa.second_chaos_variance(phi, m, N_mc, K, rng, cfg.param("mc_samples", 4000))
    rep.add(f"Monte Carlo variance at N={N_mc}", chk.extra["mc"], chk.extra["mc_stderr"], chk.estimate, "z", 3.0)

    # pairing with a second-chaos functional
    K_psi = cfg.param("psi_band", 12)
    psi = _gaussian_test(K_psi, cfg.param("psi_width", 8.0), K_psi)
    phi2 = SpectralField.from_modes({1: 0.5, 2: 0.25 - 0.1j}, K_psi)
    kernel = sa.ChaosKernel.wick_square(psi)
    shapes = (m, Mollifier(inner=cfg.param("alt_inner", 0.25), outer=cfg.param("alt_outer", 1.0)))
    pc = sa.pairing_convergence(phi2, kernel, cfg.param("pairing_levels"), shapes)
    rep.extend(pc)
    x = grid_points(4096)
    direct = 2.0 * np.mean(psi.evaluate(x) ** 2 * phi2.evaluate(x))
    rep.add("limit pairing vs 2∫ψ²φ", rep["limit pairing"].estimate, math.nan, float(direct), "abs", 1e-10)

    series = {
        "cN": Series({"N": levels, "mc": mc, "stderr": mc_se, "torus": oracle, "line": line}, "N",
                     ("mc", "torus", "line"), errors={"mc": "stderr"}, title="renormalization constant c_N"),
        "variance": Series({"N": levels, "variance": var}, "N", ("variance",), logx=True, logy=True,
                           title="Var[((ρ^N∗u)² − c_N)(φ)]"),
        "pairing": Series({"N": pc.metadata["levels"], **{f"shape{i}": s for i, s in pc.metadata["sequences"].items()}},
                          "N", tuple(f"shape{i}" for i in pc.metadata["sequences"]), logx=True,
                          title="Wick pairing by level"),
    }
    return ExperimentResult(rep, series)


# ----------------------------------------------------------------------------
# Cole-Hopf corrections
# ----------------------------------------------------------------------------

def _calibrations(cfg) -> dict:
    """K^L for every smoothing scale, with its Monte Carlo cross-check (seeded)."""
    m = _mollifier(cfg)
    return {L: ch.K_calibrate(m, L, cfg.K, replica_generators(cfg.seed, [int(L)], stream=3)[0],
                              samples=cfg.param("K_samples", 2000)) for L in cfg.L_levels}


def _K_values(cfg, cals=None) -> dict:
    m = _mollifier(cfg)
    if cfg.param("K_source", "analytic") == "mc":
        cals = cals or _calibrations(cfg)
        return {L: cals[L].monte_carlo for L in cfg.L_levels}
    if cfg.param("K_source", "analytic") != "analytic":
        raise ParameterError("K_source must be 'analytic' or 'mc'")
    return {L: ch.K_analytic(m, L, cfg.K) for L in cfg.L_levels}


def _task_colehopf(cfg, idx):
    m = _mollifier(cfg)
    phi = _test_function(cfg.param("phi", "one_plus_cos"), cfg.K)
    K_vals = _K_values(cfg)

    def per_chunk(c):
        out = {}
        for L in cfg.L_levels:
            out[f"R{L}"] = ch.R_integrand(c.coeffs, L, phi, K_vals[L], m)
            out[f"Q{L}"] = ch.Q_integrand(c.coeffs, L, m)
        return out

    return _stream(cfg, idx, per_chunk, mean_zero=True, chunk_steps=250)


def _task_q_coupled(cfg, idx):
    """QV of Q^L at dt and dt/2 along one Brownian path per replica."""
    K, L, T = cfg.param("q_K"), cfg.param("q_L"), cfg.param("q_T")
    dt_c = cfg.param("q_dt")
    dt_f = dt_c / 2
    m = _mollifier(cfg)
    rngs = replica_generators(cfg.seed, idx, stream=1)
    u0 = white_noise_ensemble(K, rngs, mean_zero=True).coeffs
    fine = SPDEConfig(K, dt_f, T).stepper()
    coarse = SPDEConfig(K, dt_c, T).stepper()
    noise = NoiseStream(rngs, K, dt_f)
    cf, cc = u0.copy(), u0.copy()
    qv_f = np.zeros(len(idx))
    qv_c = np.zeros(len(idx))
    q_sum = np.zeros(len(idx))
    n_coarse = int(round(T / dt_c))
    done = 0
    while done < n_coarse:
        n = min(256, n_coarse - done)
        xi = noise.draw(2 * n).xi
        for j in range(n):
            for a in range(2):
                q = ch.Q_integrand(cf, L, m)
                qv_f += (q * dt_f) ** 2
                q_sum += q * dt_f
                cf = fine.step(cf, xi[2 * j + a])
            q = ch.Q_integrand(cc, L, m)
            qv_c += (q * dt_c) ** 2
            cc = coarse.step(cc, (xi[2 * j] + xi[2 * j + 1]) / math.sqrt(2.0))
        done += n
    return np.zeros(1), {"qv_fine": qv_f[None], "qv_coarse": qv_c[None], "q_mean": (q_sum / T)[None]}


def _task_she_extract(cfg, idx):
    K, dt, T = cfg.param("she_K"), cfg.param("she_dt"), cfg.param("she_T")

    def initial(rngs):
        return ch.she_initial(white_noise_ensemble(K, rngs, mean_zero=True))

    final = {}

    def per_chunk(c):
        final["phi"] = c.coeffs[-1].copy()
        return {}

    _stream(cfg, idx, per_chunk, K=K, dt=dt, T=T, scheme="she", u0=initial, stream=2)
    u = ch.colehopf_extract(SpectralField(final["phi"]))
    return np.zeros(1), {"u": u.coeffs[None], "proj": np.array([[ch.log_projection_error(final["phi"])]])}


def run_colehopf(cfg: ExperimentConfig) -> ExperimentResult:
    m = _mollifier(cfg)
    times, out = _map(cfg, _task_colehopf)
    rep = StatReport("colehopf-test")
    L_levels = list(cfg.L_levels)
    R = out[f"R{L_levels[0]}"].shape[1]
    rows = {"L": [], "t": [], "mean_R": [], "var_R": [], "mean_Q": [], "qv_Q": []}
    var_T = []
    cals = _calibrations(cfg)
    K_used = _K_values(cfg, cals)
    for L in L_levels:
        Rser = _left_riemann(out[f"R{L}"], times)
        Qser = _left_riemann(out[f"Q{L}"], times)
        RT = Rser[-1]
        tstat = float(RT.mean() / (RT.std(ddof=1) / math.sqrt(R)))
        rep.add(f"L={L}: |t-statistic| of mean R^L_T(φ)", abs(tstat), math.nan, 3.0, "le")
        var_T.append(float(RT.var(ddof=1)))
        rep.add(f"L={L}: Var[R^L_T(φ)]", var_T[-1], var_T[-1] * math.sqrt(2.0 / (R - 1)), math.nan, "info")
        cal = cals[L]
        rep.add(f"L={L}: K^L Monte Carlo vs analytic", cal.monte_carlo, cal.stderr, cal.analytic, "z", 3.0)
        rep.add(f"L={L}: K^L used", K_used[L], math.nan, math.nan, "info")
        consts = renorm_constant(m.with_scale(L), cfg.K)
        qmean = out[f"Q{L}"].mean(axis=0)
        rep.add(f"L={L}: mean Q^L increment per unit time", float(qmean.mean()),
                float(qmean.std(ddof=1) / math.sqrt(R)), consts.line - consts.torus + 2.0, "info",
                note="mean-free start: c^R - c^T + 2")
        every = max(1, len(times) // 200)
        inc = np.diff(Qser, axis=0)
        qv_running = np.concatenate([[0.0], np.cumsum(np.mean(inc ** 2, axis=1))])
        for j in range(0, len(times), every):
            rows["L"].append(L)
            rows["t"].append(times[j])
            rows["mean_R"].append(Rser[j].mean())
            rows["var_R"].append(Rser[j].var(ddof=1))
            rows["mean_Q"].append(Qser[j].mean())
            rows["qv_Q"].append(qv_running[j])
    ratios = np.array(var_T[1:]) / np.array(var_T[:-1])
    rep.add("largest ratio Var[R^L_T] (next L) / Var[R^L_T]", float(ratios.max()), math.nan, 1.0, "le",
            note="strict decrease")

    # Q^L at two step sizes along the same noise
    qcfg = cfg if cfg.param("q_replicas") is None else _with_replicas(cfg, cfg.param("q_replicas"))
    _, qo = _map(qcfg, _task_q_coupled)
    qf, qc = qo["qv_fine"][0], qo["qv_coarse"][0]
    ratio = float(qc.mean() / qf.mean())
    resid = (qc - ratio * qf) / qf.mean()
    rep.add(f"QV(Q^L) at dt / QV(Q^L) at dt/2 (L={cfg.param('q_L')})", ratio,
            float(resid.std(ddof=1) / math.sqrt(len(qf))), 2.0, "ge")
    rep.add("QV(Q^L) at dt/2", float(qf.mean()), float(qf.std(ddof=1) / math.sqrt(len(qf))), math.nan, "info")

    # Cole-Hopf extraction from the stochastic heat equation
    if cfg.param("she_K"):
        scfg = _with_replicas(cfg, cfg.param("she_replicas", cfg.replicas))
        _, so = _map(scfg, _task_she_extract)
        u = so["u"][0]
        low = cfg.param("she_modes", 8)
        st = sa.stationarity_test(u[:, : low + 1], mean_zero=True, label="SHE-extracted low modes")
        for s in st.statistics:
            s.rule = "info" if s.rule != "info" else s.rule
        rep.extend(st)
        rep.add("log φ band-projection error (max)", float(so["proj"].max()), math.nan, math.nan, "info")

    series = {"corrections": Series(rows, "t", ("var_R",), group="L", logy=True,
                                    title="Var[R^L_t(φ)] by smoothing scale")}
    return ExperimentResult(rep, series)


def _with_replicas(cfg: ExperimentConfig, n: int) -> ExperimentConfig:
    from dataclasses import replace
    return replace(cfg, replicas=int(n))


# ----------------------------------------------------------------------------
# exponential moment
# ----------------------------------------------------------------------------

def _task_exp(cfg, idx):
    steps = [int(round(t / cfg.dt)) for t in cfg.param("sample_times")]
    captured = {}

    def per_chunk(c):
        for j, s in enumerate(np.rint(c.times / cfg.dt).astype(int)):
            if s in steps:
                captured[s] = c.coeffs[j].copy()
        return {}

    _stream(cfg, idx, per_chunk, mean_zero=True, chunk_steps=1000)
    return np.zeros(1), {"fields": np.stack([captured[s] for s in steps])}


def run_exp_moment(cfg: ExperimentConfig) -> ExperimentResult:
    _, out = _map(cfg, _task_exp)
    x = np.arange(cfg.param("n_x", 8)) / cfg.param("n_x", 8)
    res = ch.exp_moment_check(out["fields"], x)
    rep = StatReport("exp-moment")
    rep.add("sup over x, t of E[exp(2h)]", res.sup, res.sup_stderr, res.predicted, "z", 3.0)
    for j, t in enumerate(cfg.param("sample_times")):
        row, se = res.moments[j], res.stderr[j]
        rep.add(f"t={t:g}: (max/min over x) - 1, in standard errors",
                float((row.max() / row.min() - 1.0) / (se.mean() / row.mean())), math.nan, math.nan, "info")
    rep.add("Var h (band sum)", ch.theta_variance(cfg.K), math.nan, math.nan, "info")
    cols = {"x": x}
    for j, t in enumerate(cfg.param("sample_times")):
        cols[f"t={t:g}"] = res.moments[j]
        cols[f"se_t={t:g}"] = res.stderr[j]
    series = {"moments": Series(cols, "x", tuple(f"t={t:g}" for t in cfg.param("sample_times")),
                                errors={f"t={t:g}": f"se_t={t:g}" for t in cfg.param("sample_times")},
                                reference={"exp(2 Var h)": (x, np.full(len(x), res.predicted))},
                                title="E[exp(2h(x))]")}
    return ExperimentResult(rep, series)


# ----------------------------------------------------------------------------
# chaos action (OU)
# ----------------------------------------------------------------------------

def _chaos_kernels(K_band: int) -> dict:
    return {
        "n1_mode1": sa.ChaosKernel.mode(1, K_band),
        "n1_mode2": sa.ChaosKernel.mode(2, K_band),
        "n2_wick_mode1": sa.ChaosKernel.wick_mode(1, K_band),
        "null_band": sa.ChaosKernel.mode(K_band, K_band),
    }


def _task_chaos(cfg, idx):
    kernels = _chaos_kernels(cfg.K + 2)

    def per_chunk(c):
        return {name: k.restrict(cfg.K).evaluate(c.coeffs) for name, k in kernels.items()}

    return _stream(cfg, idx, per_chunk, scheme="ou", chunk_steps=1000)


def run_chaos(cfg: ExperimentConfig) -> ExperimentResult:
    times, out = _map(cfg, _task_chaos)
    kernels = _chaos_kernels(cfg.K + 2)
    rep = StatReport("chaos-test")
    series = {}
    dt = float(times[1] - times[0])
    for name, k in kernels.items():
        k = k.restrict(cfg.K)
        F = out[name]
        if not np.any(np.abs(k.g) > 0):
            rep.add(f"{name}: max |F| (kernel outside the band)", float(np.max(np.abs(F))), math.nan, 0.0, "abs", 0.0)
            continue
        lam = float(k.rates().min())
        hmax = max(2, int(math.log(1 / 0.05) / lam / dt))
        lags = np.unique(np.linspace(0, hmax, 16).astype(int))
        C, se = sa.autocorrelation(F, lags)
        reg = sa.fit_line(lags * dt, np.log(np.maximum(C, 1e-300)))
        rep.add(f"{name}: fitted decay rate", -reg.slope, reg.stderr, lam, "rel", 0.10)
        series[name] = Series({"lag": lags * dt, "correlation": C, "stderr": se,
                               "predicted": k.variance() * np.exp(-lam * lags * dt)},
                              "lag", ("correlation", "predicted"), errors={"correlation": "stderr"}, logy=True,
                              title=f"OU time correlation, {name}")
    return ExperimentResult(rep, series)


# ----------------------------------------------------------------------------
# Kipnis-Varadhan bound and martingale trick
# ----------------------------------------------------------------------------

def _task_kv(cfg, idx):
    kv_kernel = sa.ChaosKernel.wick_mode(1, cfg.K)
    mt_kernel = sa.ChaosKernel.mode(cfg.param("mt_mode"), cfg.K).laplacian()

    def per_chunk(c):
        return {"F": kv_kernel.evaluate(c.coeffs), "LF": mt_kernel.evaluate(c.coeffs)}

    return _stream(cfg, idx, per_chunk, chunk_steps=1000)


def run_kv(cfg: ExperimentConfig) -> ExperimentResult:
    times, out = _map(cfg, _task_kv)
    T_list = list(cfg.param("T_list"))
    rep = StatReport("kv-test")
    kv = sa.kv_bound_check(sa.ChaosKernel.wick_mode(1, cfg.K), out["F"], T_list, times=times)
    rep.extend(kv)
    mt_kernel = sa.ChaosKernel.mode(cfg.param("mt_mode"), cfg.K)
    lhs = {}
    for p in cfg.param("p_list", (2, 4)):
        mt = sa.martingale_trick_check(mt_kernel, out["LF"], p, T_list, times=times)
        rep.extend(mt)
        lhs[f"lhs_p{p}"] = mt.metadata["lhs"]
    rep.add("‖F‖²₋₁ (Wick square of mode 1)", kv.metadata["kv_norm"], math.nan, 1 / (8 * math.pi ** 2), "rel", 1e-12)
    series = {"martingale_trick": Series({"T": T_list, **lhs}, "T", tuple(lhs), logx=True, logy=True,
                                         title="E[sup|∫L_S F ds|^p] vs T"),
              "kv": Series({"T": T_list, "constant": kv.metadata["constants"]}, "T", ("constant",), logx=True,
                           title="KV constant by horizon")}
    return ExperimentResult(rep, series)


# ----------------------------------------------------------------------------
# one-dimensional diffusion
# ----------------------------------------------------------------------------

def run_sde1d(cfg: ExperimentConfig) -> ExperimentResult:
    rep = StatReport("sde1d")
    gen = lambda stream: replica_generators(cfg.seed, [0], stream)[0]  # noqa: E731
    ou = sde1d.invariant_density_check(sde1d.DriftSpec.ou(), None, T=cfg.param("ou_T"), dt=cfg.param("ou_dt"),
                                       rng=gen(10), replicas=cfg.param("ou_replicas"), burn_in=cfg.param("ou_burn"),
                                       thin=cfg.param("ou_thin"))
    rep.extend(ou, prefix="OU: ")
    potential = cfg.param("potential", "cosine")
    if potential == "cosine":
        drift = sde1d.DriftSpec.cosine(1.0)
    elif potential == "zero":
        drift = sde1d.DriftSpec.zero()
    else:
        drift = sde1d.DriftSpec.brownian_bridge(cfg.seed)
    level = None if potential != "bridge" else cfg.param("density_level", 64)
    dens = sde1d.invariant_density_check(drift, level, T=cfg.param("torus_T"), dt=cfg.param("torus_dt"),
                                         rng=gen(11), replicas=cfg.param("torus_replicas"), burn_in=1.0, thin=0.25)
    rep.extend(dens, prefix=f"{potential} potential: ")
    bridge = sde1d.DriftSpec.brownian_bridge(cfg.seed)
    levels = list(cfg.levels)
    cauchy = sde1d.drift_functional_cauchy(bridge, levels, cfg.dt, cfg.T, cfg.replicas, gen(12))
    rep.extend(cauchy, prefix="rough drift: ")
    frozen = sde1d.frozen_drift_values(bridge, levels, 0.3, cfg.T)
    rep.add("frozen path: spread of T b_n(x0) across levels", float(np.ptp(frozen)), math.nan, math.nan, "info")
    mat, err = cauchy.metadata["matrix"], cauchy.metadata["stderr"]
    ii, jj = np.meshgrid(np.arange(len(levels)), np.arange(len(levels)), indexing="ij")
    series = {
        "cauchy_matrix": Series({"n": np.array(levels)[ii.ravel()], "m": np.array(levels)[jj.ravel()],
                                 "mean_sq_diff": mat.ravel(), "stderr": err.ravel()}, "m", ("mean_sq_diff",),
                                group="n", logx=True, title="E[(I_n(T) − I_m(T))²]"),
        "frozen": Series({"n": levels, "T_b_n_x0": frozen}, "n", ("T_b_n_x0",), logx=True,
                         title="drift functional with the diffusion frozen"),
    }
    return ExperimentResult(rep, series)


# ----------------------------------------------------------------------------
# registry
# ----------------------------------------------------------------------------

REGISTRY = {
    "simulate": ExperimentSpec(
        "simulate", run_simulate,
        dict(K=64, dt=1e-5, T=0.02, replicas=4, scheme="expeuler", phi="cos"),
        "The Galerkin Burgers dynamics keep the spatial mean fixed along every path.",
        "d ∫u_t dx = 0"),
    "invariance-test": ExperimentSpec(
        "invariance-test", run_invariance,
        dict(K=64, dt=1e-5, T=0.5, replicas=200, sample_times=(0.1, 0.5)),
        "Started from spatial white noise, the solution keeps the white-noise law at later times.",
        "law(u_t) = white noise, t ≥ 0"),
    "qv-test": ExperimentSpec(
        "qv-test", run_qv,
        dict(K=32, dt=1e-4, T=1.0, replicas=100, phi="sin"),
        "The residual after removing the linear and quadratic drifts is a martingale with linear QV.",
        "⟨M(φ)⟩_t = 2‖∂ₓφ‖² t"),
    "reverse-test": ExperimentSpec(
        "reverse-test", run_reverse,
        dict(K=32, dt=1e-4, T=1.0, replicas=100, phi="sin"),
        "Run backwards in time, a stationary solution solves Burgers with the sign of the quadratic drift flipped.",
        "dû = Δû dt − ∂ₓû² dt + √2 d∂ₓŴ"),
    "energy-test": ExperimentSpec(
        "energy-test", run_energy,
        dict(K=128, dt=2e-6, T=0.064, replicas=100, levels=(8, 16, 32, 64), phi="sin",
             windows=(0.004, 0.008, 0.016, 0.032), block_size=50),
        "Differences of smoothed quadratic drifts shrink like window length over smoothing level.",
        "E[(I_N − I_M)²] ≲ (t − s)/(M ∧ N) ‖∂ₓφ‖²"),
    "holder-test": ExperimentSpec(
        "holder-test", run_holder,
        dict(K=128, dt=2e-6, T=0.5, replicas=8, phi="sin", lag_range=(5e-5, 2e-3), p_list=(2, 4), n_lags=12),
        "The drift functional is smoother in time than the martingale: exponent 3/4 against 1/2.",
        "∫₀^t u_s²(−∂ₓφ) ds ∈ C^{3/4−ε}"),
    "renorm-test": ExperimentSpec(
        "renorm-test", run_renorm,
        dict(K=256, levels=(8, 16, 32, 64), phi="cos", pairing_levels=(8, 16, 32, 64, 128, 256),
             cN_samples=400, mc_level=16, mc_samples=4000),
        "The centred smoothed square diverges in variance, yet its pairing with a second-chaos functional converges to a mollifier-free limit.",
        "Var[((ρ^N∗u)² − c_N)(φ)] ∝ N;  E[((ρ^N∗u)² − c_N)(φ) F] → E[u^{⋄2}(φ) F]"),
    "colehopf-test": ExperimentSpec(
        "colehopf-test", run_colehopf,
        dict(K=128, dt=5e-6, T=0.05, replicas=100, L_levels=(4, 8, 16, 32), phi="one_plus_cos",
             K_source="analytic", K_samples=2000, q_K=32, q_L=8, q_dt=1e-4, q_T=1.0,
             she_K=32, she_dt=1e-4, she_T=0.1, she_modes=8, block_size=50),
        "Both Cole-Hopf correction terms vanish as the smoothing is removed: R^L in mean square, Q^L in QV.",
        "R^L(φ) → 0,  ⟨Q^L⟩ → 0"),
    "exp-moment": ExperimentSpec(
        "exp-moment", run_exp_moment,
        dict(K=64, dt=1e-5, T=0.1, replicas=400, sample_times=(0.0, 0.05, 0.1), n_x=8, block_size=200),
        "Exponential moments of the antiderivative stay bounded, and equal the lognormal value in stationarity.",
        "sup_{x,t} E[exp(2 u_t(Θ_x))] < ∞"),
    "chaos-test": ExperimentSpec(
        "chaos-test", run_chaos,
        dict(K=4, dt=1e-3, T=4.0, replicas=2000),
        "The OU generator acts on the n-th chaos as the Laplacian on kernels, so correlations decay at rate (2π)²Σk².",
        "L_S W_n(f_n) = W_n(Δf_n)"),
    "kv-test": ExperimentSpec(
        "kv-test", run_kv,
        dict(K=16, dt=1e-4, T=2.0, replicas=200, T_list=(0.25, 0.5, 1.0), p_list=(2, 4),
             mt_mode=3),
        "Additive functionals are controlled by the H^{-1} norm, and L_S-images by the energy form at rate T^{p/2}.",
        "E[sup|∫F|²] ≲ T‖F‖²₋₁;  E[sup|∫L_S F|^p] ≲ T^{p/2} E[ℰ(F)^{p/2}]"),
    "sde1d": ExperimentSpec(
        "sde1d", run_sde1d,
        dict(dt=1e-5, T=1.0, replicas=200, levels=(4, 8, 16, 32, 64), potential="cosine",
             ou_T=20.0, ou_dt=1e-3, ou_replicas=2000, ou_burn=5.0, ou_thin=2.0,
             torus_T=100.0, torus_dt=1e-3, torus_replicas=100),
        "A diffusion with drift B′ has invariant density e^B/Z, and rough-drift functionals converge only through time averaging.",
        "dx = b(x) dt + √2 dw,  μ = e^B/Z"),
}
