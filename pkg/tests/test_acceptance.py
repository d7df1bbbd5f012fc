"""Desk-scale acceptance criteria.

Desk scale is L = 2 pi, N = 32, nu = 0.05, delta = 1 and dt = 1e-3 unless a
criterion says otherwise.  Every tolerance and runtime budget is pinned in
the tables below.  Each test prints one PASS/FAIL line, and the lines are
repeated in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from snsmem import checks, cli
from snsmem.attractor import (convergence_bound_check, deterministic_attractor, sample_ball,
                              semicontinuity_sweep, separation_growth, shift_velocity, stationary_z)
from snsmem.config import build_initial, build_sim_config, load_config, steady_vortex
from snsmem.diagnostics import absorbing_radius, absorbing_set_check, linear_decay_check, tail_energy
from snsmem.memory import steady_history
from snsmem.solver import energy_H, integrate, integrate_split, make_state
from snsmem.spaces import SpectralField
from snsmem.stochastic import choose_sigma, sample_wiener

pytestmark = pytest.mark.acceptance

TOL = {
    "divergence": 1e-12, "leray": 1e-14,
    "cancellation": 1e-10, "skew": 1e-10, "convolution": 1e-12,
    "decay_ratio": 1.02, "residual": 1e-8,
    "split_ratio": 1.02, "consistency_T1": 1e-6, "consistency_T5": 1e-5,
    "quadrature": 1e-3, "transport": 1e-3,
    "ou_decay": 1e-12, "ou_n_se": 3.0, "ou_halving": 1e-6,
    "radius_eps0": 1e-6,
    "tail_fraction": 0.01,
    "slope_lo": 1.7, "slope_hi": 2.3,
    "sweep_noise": 0.10,
}
BUDGET = {1: 30, 2: 60, 3: 120, 4: 180, 5: 120, 6: 60, 7: 300, 8: 180, 9: 120, 10: 300, 11: 1200, 12: 120}
CENTER = (math.pi, math.pi)


def report(k: int, name: str, ok: bool, seconds: float, detail: str) -> None:
    within = seconds <= BUDGET[k]
    line = (f"{'PASS' if ok and within else 'FAIL'} criterion {k:2d} {name}: {detail}; "
            f"{seconds:.1f} s (budget {BUDGET[k]} s)")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert within, line


def _by_name(results):
    return {r.name: r for r in results}


def test_criterion_01_divergence_and_projection():
    t0 = time.perf_counter()
    r = _by_name(checks.check_divergence(10**4))
    div, ler = r["divergence"].value, r["leray_idempotence"].value
    ok = div <= TOL["divergence"] and ler <= TOL["leray"]
    report(1, "divergence and projection", ok, time.perf_counter() - t0,
           f"max|k.v|/|v|_V = {div:.2e} after 1e4 steps, idempotence {ler:.2e}")


def test_criterion_02_trilinear_identities():
    t0 = time.perf_counter()
    r = _by_name(checks.check_trilinear(100))
    c, s, d = r["cancellation"].value, r["skew_symmetry"].value, r["direct_convolution"].value
    ok = c <= TOL["cancellation"] and s <= TOL["skew"] and d <= TOL["convolution"]
    report(2, "trilinear identities", ok, time.perf_counter() - t0,
           f"b(u,v,v) {c:.2e}, skew {s:.2e} over 100 triples, direct convolution at N=16 {d:.2e}")


def test_criterion_03_unforced_decay():
    t0 = time.perf_counter()
    r = _by_name(checks.check_energy_decay(5.0))
    ratio, res = r["energy_decay"].value, r["dissipation_residual"].value
    ok = ratio <= TOL["decay_ratio"] and res <= TOL["residual"]
    report(3, "unforced decay", ok, time.perf_counter() - t0,
           f"max E/(e^(-2 d0 t) E0) = {ratio:.4f} on [0,5], max residual/scale = {res:.2e}")


def test_criterion_04_linear_split():
    t0 = time.perf_counter()
    cfg = load_config({"integration": {"dt": 1e-3}})
    sim = build_sim_config(cfg, epsilon=1.0)
    st = checks._random_state(sim, 31)
    path = sample_wiener(5, 0.0, 5.0, sim.dt)
    sp = integrate_split(st, path, sim.with_(sample_every=100, s_nodes=sim.s_nodes), t_end=5.0)
    ratio = linear_decay_check(sp, sim.ledger.delta0)
    c1 = float(sp.consistency[np.argmin(np.abs(sp.full.t - 1.0))])
    c5 = float(sp.consistency[-1])
    ok = ratio <= TOL["split_ratio"] and c1 <= TOL["consistency_T1"] and c5 <= TOL["consistency_T5"]
    report(4, "linear split", ok, time.perf_counter() - t0,
           f"worst linear ratio {ratio:.4f} (forced, eps=1), consistency {c1:.1e} at T=1, {c5:.1e} at T=5")


def test_criterion_05_memory_oracles():
    t0 = time.perf_counter()
    r = _by_name(checks.check_memory(1000))
    q, s = r["memory_quadrature"].value, r["memory_transport"].value
    ok = q <= TOL["quadrature"] and s <= TOL["transport"] and r["memory_quadrature"].detail["nodes"] == 64
    report(5, "memory oracles", ok, time.perf_counter() - t0,
           f"quadrature vs exact reduction {q:.2e} (64 ages), transport vs brute force {s:.2e} after 1e3 steps")


def test_criterion_06_ou_statistics():
    t0 = time.perf_counter()
    r = _by_name(checks.check_ou(10**5))
    dec, nv, n4 = r["ou_noise_free"].value, r["ou_variance"].value, r["ou_fourth_moment"].value
    half = r["ou_truncation_halving"]
    ok = dec <= TOL["ou_decay"] and nv <= TOL["ou_n_se"] and n4 <= TOL["ou_n_se"] and half.value <= TOL["ou_halving"]
    report(6, "OU statistics", ok, time.perf_counter() - t0,
           f"decay {dec:.1e}, variance {nv:.2f} SE, fourth moment {n4:.2f} SE, "
           f"truncation ratio {half.detail['ratio']:.8f}")


def test_criterion_07_absorbing_radius():
    t0 = time.perf_counter()
    cfg = load_config({"integration": {"dt": 1e-3}})
    sim = build_sim_config(cfg, epsilon=1.0)
    led = sim.ledger
    # r1 at eps = 0 and along eps on one fixed path, sigma held at its eps = 1 value
    fixed = sample_wiener(3, -1.0, 0.0, 0.01)
    r0 = absorbing_radius(fixed, led, 0.0).r1
    r1s = [absorbing_radius(fixed, led, e).r1 for e in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert led.sigma == choose_sigma(led, 1.0)
    monotone = bool(np.all(np.diff(r1s) > 0))
    # 16 members whose H-radius is 10x the steady-state scale
    u = steady_vortex(cfg)
    scale = math.sqrt(float(energy_H(make_state(sim, u, steady_history(u, sim.s_nodes, sim.kernel)))))
    T, every = 5.0, 250
    path = sample_wiener(6, 0.0, T, sim.dt)
    cloud = sample_ball(sim, 16, 10.0 * scale, seed=2)
    st = shift_velocity(cloud.state, sim, stationary_z(path, sim, 0.0), -1.0)
    m, h = st.eta.modes, st.eta.modes.gather(sim.h.coef)
    ts, E = [], []

    def physical_energy(t, v, eta, z):
        uu = v + sim.epsilon * z * h
        eM = np.tensordot(m.inner(eta, eta, 1), st.eta.weights, axes=([-1], [0]))
        ts.append(t)
        E.append(m.inner(uu, uu, 0) + eM)

    integrate(st, path, sim.with_(sample_every=every, s_nodes=sim.s_nodes), t_end=T, callback=physical_energy)
    r2 = np.array([absorbing_radius(path.shifted(t), led, 1.0).r2 for t in ts])
    rep = absorbing_set_check(np.array(ts), np.array(E), r2)
    ok = abs(r0 - 1.0 / led.delta0) <= TOL["radius_eps0"] and monotone and rep["finite"] and rep["n_members"] == 16
    report(7, "absorbing radius", ok, time.perf_counter() - t0,
           f"|r1 - 1/d0| = {abs(r0 - 1 / led.delta0):.1e} at eps=0, r1 monotone over 5 eps = {monotone}, "
           f"C = {rep['C']:.3g}, T_absorb = {rep['T_absorb']:.2f} (16 members, radius {10 * scale:.1f})")


def test_criterion_08_far_field():
    t0 = time.perf_counter()
    cfg = load_config({"integration": {"dt": 1e-3}})
    sim = build_sim_config(cfg, epsilon=0.5)
    path = sample_wiener(4, 0.0, 5.0, sim.dt)
    # physical rest: the transformed velocity starts at -eps z(0) h
    st = make_state(sim, SpectralField.zeros(sim.grid))
    st = shift_velocity(st, sim, stationary_z(path, sim, 0.0), -1.0)
    tr = integrate(st, path, sim.with_(sample_every=1000, s_nodes=sim.s_nodes), t_end=5.0)
    phi = shift_velocity(tr.final, sim, tr.z_final, 1.0)
    L = sim.grid.L
    tails = [float(tail_energy(phi, R, CENTER)) for R in (L / 8, L / 4, 3 * L / 8)]
    total = float(energy_H(phi))
    ok = tails[0] >= tails[1] >= tails[2] and tails[1] <= TOL["tail_fraction"] * total
    report(8, "far field", ok, time.perf_counter() - t0,
           f"tails {tails[0]:.3g} >= {tails[1]:.3g} >= {tails[2]:.3g}, tail(L/4)/total = {tails[1] / total:.4f}")


def test_criterion_09_continuous_dependence():
    t0 = time.perf_counter()
    cfg = load_config({"integration": {"dt": 1e-3}})
    sim = build_sim_config(cfg, epsilon=0.5)
    st = checks._random_state(sim, 9, energy=4.0)
    path = sample_wiener(8, 0.0, 2.0, sim.dt)
    sep = separation_growth(sim, st, path, 2.0, d0=1e-6)
    same = checks.check_determinism(1000)[0]
    ok = sep["finite"] and sep["bound_ok"] and same.value == 0.0
    report(9, "continuous dependence", ok, time.perf_counter() - t0,
           f"d0 = 1e-6 -> {sep['d'][-1]:.3e} at t=2, fitted C = {sep['C']:.3g}, "
           f"bit-identical rerun = {same.value == 0.0}")


def test_criterion_10_small_noise_scaling():
    t0 = time.perf_counter()
    cfg = load_config({"integration": {"dt": 1e-3}, "experiment": {"initial": {"kind": "steady"}}})
    sim0 = build_sim_config(cfg, epsilon=0.0)
    init = build_initial(cfg, sim0)
    res = convergence_bound_check([0.4, 0.2, 0.1, 0.05], 0, lambda e: build_sim_config(cfg, epsilon=e), init, 1.0)
    ok = TOL["slope_lo"] <= res["slope"] <= TOL["slope_hi"]
    report(10, "eps^2 scaling", ok, time.perf_counter() - t0,
           f"log-log slope {res['slope']:.3f} over eps in (0.4, 0.2, 0.1, 0.05) at T=1")


def test_criterion_11_upper_semicontinuity(tmp_path):
    t0 = time.perf_counter()
    # dt = 0.01 with 32 ages; the cloud is a unit ball around the steady vortex
    cfg = load_config({"integration": {"dt": 0.01, "n_nodes": 32}, "experiment": {"initial": {"kind": "steady"}}})
    sim0 = build_sim_config(cfg, epsilon=0.0)
    init = sample_ball(sim0, 32, 1.0, seed=0, center=build_initial(cfg, sim0))
    ref = deterministic_attractor(sim0, init, 40.0, 4.0)
    rep = semicontinuity_sweep([1.0, 0.5, 0.2, 0.1], [0, 1, 2, 3], lambda e: build_sim_config(cfg, epsilon=e),
                               init, [12.0, 16.0], ref)
    rep.write(tmp_path / "sweep")
    mean = rep.mean
    nonincreasing = all(b <= a * (1 + TOL["sweep_noise"]) for a, b in zip(mean, mean[1:]))
    ok = nonincreasing and mean[-1] < mean[0]
    conv = sum(sum(v) for v in rep.converged.values())
    report(11, "upper semicontinuity", ok, time.perf_counter() - t0,
           "mean dist " + ", ".join(f"{e:g}: {d:.3g}" for e, d in zip(rep.epsilons, mean))
           + f"; {conv}/16 estimates converged, reference converged = {rep.reference_converged}")


def test_criterion_12_reproducible_simulate(tmp_path):
    t0 = time.perf_counter()
    raw = {"integration": {"dt": 1e-3, "t_end": 1.0, "checkpoint_every": 500},
           "noise": {"epsilon": 0.5, "seed": 11}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(raw))
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    files = sorted(ma["outputs"])
    same_files = all((a / n).read_bytes() == (b / n).read_bytes() for n in files)
    ma.pop("wall_clock")
    mb.pop("wall_clock")
    ok = same_files and ma == mb and len(files) == 9
    report(12, "reproducibility", ok, time.perf_counter() - t0,
           f"{len(files)} outputs byte-identical on rerun from the manifest = {same_files}, "
           f"manifests equal apart from wall_clock = {ma == mb}")
