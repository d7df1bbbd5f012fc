"""Pullback ensembles, attractor proxies and the small-noise sweep.

Clouds hold *physical* states ``phi = (u, eta)`` with ``u = v + eps y``; the
change to the transformed variable ``v`` happens only inside
:func:`pullback_ensemble`, at the two ends of the pullback interval.
Members are stacked along a leading array axis and integrated together on
one noise path.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .memory import HistoryState, steady_history
from .solver import BlowUpError, SimConfig, SimState, integrate, make_state, zero_history
from .spaces import ModeSet, SpectralField, random_field
from .stochastic import NoisePath, default_truncation, ou_pullback, sample_wiener


@dataclass
class PointCloud:
    """Ensemble of physical states stacked on axis 0 of ``state``."""

    state: SimState
    label: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.state.batch_shape) != 1 or self.state.batch_shape[0] < 1:
            raise ValueError("a cloud needs a single, nonempty member axis")

    def __len__(self):
        return self.state.batch_shape[0]

    def member(self, i: int) -> SimState:
        return self.state.member(i)

    def select(self, keep) -> "PointCloud":
        keep = np.asarray(keep)
        st = SimState(self.state.t, SpectralField(self.state.grid, self.state.v.coef[keep]),
                      self.state.eta.replace(self.state.eta.values[keep]))
        return PointCloud(st, dict(self.label))

    def norms(self) -> np.ndarray:
        m = self.state.eta.modes
        v = m.gather(self.state.v.coef)
        e = m.inner(v, v, 0) + np.tensordot(m.inner(self.state.eta.values, self.state.eta.values, 1),
                                            self.state.eta.weights, axes=([-1], [0]))
        return np.sqrt(e)

    def scale(self) -> float:
        return float(np.max(self.norms()))

    def diameter(self) -> float:
        return float(max(np.max(_distances_to(self, i)) for i in range(len(self))))

    def save(self, directory, stem: str = "cloud") -> dict:
        """Write one checkpoint pair per member and a JSON manifest referencing them."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        members = []
        for i in range(len(self)):
            m = self.member(i)
            names = {"v": f"{stem}_m{i:03d}.v.bin", "eta": f"{stem}_m{i:03d}.eta.bin"}
            (directory / names["v"]).write_bytes(m.v.to_bytes())
            (directory / names["eta"]).write_bytes(m.eta.to_bytes())
            members.append(names)
        manifest = {"label": self.label, "t": self.state.t, "members": members}
        (directory / f"{stem}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return manifest


def load_cloud(path) -> PointCloud:
    """Inverse of :meth:`PointCloud.save` (``path`` is the JSON manifest)."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    vs, etas = [], []
    for names in manifest["members"]:
        vs.append(SpectralField.from_bytes((path.parent / names["v"]).read_bytes()))
        etas.append(HistoryState.from_bytes((path.parent / names["eta"]).read_bytes()))
    grid = vs[0].grid
    st = SimState(float(manifest["t"]), SpectralField(grid, np.stack([v.coef for v in vs])),
                  etas[0].replace(np.stack([e.values for e in etas])))
    return PointCloud(st, manifest["label"])


def _distances_to(cloud: PointCloud, i: int, other: PointCloud | None = None) -> np.ndarray:
    """H-distances from member ``i`` of ``cloud`` to every member of ``other``."""
    other = cloud if other is None else other
    m = cloud.state.eta.modes
    va = m.gather(cloud.state.v.coef[i])
    vb = m.gather(other.state.v.coef)
    dv = vb - va
    de = other.state.eta.values - cloud.state.eta.values[i]
    e = m.inner(dv, dv, 0) + np.tensordot(m.inner(de, de, 1), cloud.state.eta.weights, axes=([-1], [0]))
    return np.sqrt(np.maximum(e, 0.0))


def hausdorff_semidist(A: PointCloud, B: PointCloud) -> float:
    """``sup_{a in A} inf_{b in B} ||a - b||_H`` by brute force."""
    if not np.array_equal(A.state.eta.s_nodes, B.state.eta.s_nodes) or A.state.grid != B.state.grid:
        raise ValueError("clouds must share the grid and the age nodes")
    return float(max(np.min(_distances_to(A, i, B)) for i in range(len(A))))


def hausdorff(A: PointCloud, B: PointCloud) -> float:
    return max(hausdorff_semidist(A, B), hausdorff_semidist(B, A))


def sample_ball(config: SimConfig, n: int, radius: float, seed: int = 0,
                center: SimState | None = None) -> PointCloud:
    """``n`` physical states with H-norms spread over ``[radius/2, radius]``.

    Each member is a random velocity (spectral slope 2) plus a history of a
    constant random past velocity, with a random split of the energy.
    """
    rng = np.random.default_rng(seed)
    grid = config.grid
    base = zero_history(config)
    vs, etas = [], []
    for i in range(n):
        s1, s2 = (int(x) for x in rng.integers(0, 2**31, size=2))
        u = random_field(grid, s1, 2.0).truncate()
        w = random_field(grid, s2, 2.0).truncate()
        eta = steady_history(w, config.s_nodes, config.kernel, order=config.quad_order)
        frac = rng.uniform(0.2, 0.8)
        r = radius * rng.uniform(0.5, 1.0)
        a = r * math.sqrt(frac) / u.norm_H()
        e_norm = math.sqrt(float(np.tensordot(eta.modes.inner(eta.values, eta.values, 1), eta.weights, 1)))
        b = r * math.sqrt(1.0 - frac) / e_norm
        vs.append(u.coef * a)
        etas.append(eta.values * b)
    v = np.stack(vs)
    vals = np.stack(etas)
    if center is not None:
        v = v + center.v.coef
        vals = vals + center.eta.values
    st = SimState(0.0, SpectralField(grid, v), base.replace(vals))
    return PointCloud(st, {"radius": radius, "cloud_seed": seed, "n": n})


def shift_velocity(state: SimState, config: SimConfig, z: float, sign: float) -> SimState:
    """``v = u - eps h z`` (``sign=-1``) or back (``sign=+1``); the history is unchanged."""
    if config.epsilon == 0.0 or z == 0.0:
        return state
    v = SpectralField(state.grid, state.v.coef + sign * config.epsilon * z * config.h.coef)
    return SimState(state.t, v, state.eta)


def stationary_z(path: NoisePath | None, config: SimConfig, t: float) -> float:
    """The stationary OU value ``z(theta_t omega)`` used by the solver (0 without noise)."""
    if config.epsilon == 0.0 or path is None:
        return 0.0
    sigma = config.sigma_value
    T = config.T_trunc if config.T_trunc is not None else default_truncation(sigma, config.dt)
    z, _ = ou_pullback(path, sigma, -t, -t + T)
    return z


def pullback_ensemble(cloud: PointCloud, seed: int, T: float, config: SimConfig,
                      path: NoisePath | None = None) -> PointCloud:
    """Evolve every member from time ``-T`` to ``0`` on the same path.

    Members that blow up are dropped and the label records their indices.
    """
    if T < 0:
        raise ValueError("pullback time must be nonnegative")
    n = int(round(T / config.dt))
    label = dict(cloud.label, seed=seed, T=n * config.dt, epsilon=config.epsilon)
    if n == 0:
        return PointCloud(SimState(0.0, cloud.state.v, cloud.state.eta), label)
    if path is None and config.epsilon:
        path = sample_wiener(seed, -n * config.dt, 0.0, config.dt)
    t0 = -n * config.dt
    psi0 = shift_velocity(SimState(t0, cloud.state.v, cloud.state.eta), config, stationary_z(path, config, t0), -1.0)
    cfg = config.with_(sample_every=n, s_nodes=config.s_nodes)
    try:
        tr = integrate(psi0, path, cfg, t_end=0.0)
        final, z_end, dropped = tr.final, tr.z_final, []
    except BlowUpError:
        keep, finals, z_end = [], [], 0.0
        for i in range(len(cloud)):
            try:
                tr = integrate(psi0.member(i), path, cfg, t_end=0.0)
                finals.append(tr.final)
                z_end = tr.z_final
                keep.append(i)
            except BlowUpError:
                pass
        if not keep:
            raise
        dropped = sorted(set(range(len(cloud))) - set(keep))
        final = SimState(0.0, SpectralField(cloud.state.grid, np.stack([f.v.coef for f in finals])),
                         cloud.state.eta.replace(np.stack([f.eta.values for f in finals])))
    label["dropped"] = dropped
    phi = shift_velocity(final, config, z_end, 1.0)
    return PointCloud(phi, label)


@dataclass
class AttractorEstimate:
    cloud: PointCloud
    horizons: list
    distances: list
    scales: list
    converged: bool
    tol: float


def attractor_estimate(seed: int, config: SimConfig, horizons, initial: PointCloud,
                       tol: float = 1e-3, floor: float = 1e-3) -> AttractorEstimate:
    """Pullback clouds at increasing horizons until consecutive clouds agree.

    Convergence: symmetric Hausdorff distance between consecutive horizons
    ``<= tol * max(cloud scale, floor * initial scale)``.  The floor keeps the
    test meaningful when the attractor is the origin.
    """
    horizons = sorted(float(h) for h in horizons)
    s0 = initial.scale()
    prev, dists, scales = None, [], []
    converged = False
    cloud = initial
    for T in horizons:
        cloud = pullback_ensemble(initial, seed, T, config)
        if prev is not None:
            sc = max(cloud.scale(), prev.scale(), floor * s0)
            d = hausdorff(cloud, prev)
            dists.append(d)
            scales.append(sc)
            if d <= tol * sc:
                converged = True
                break
        prev = cloud
    cloud.label["converged"] = converged
    return AttractorEstimate(cloud, horizons[: len(dists) + 1], dists, scales, converged, tol)


def deterministic_attractor(config: SimConfig, initial: PointCloud, T_max: float, check_every: float,
                            tol: float = 1e-3, floor: float = 1e-3) -> AttractorEstimate:
    """Long forward run of the cloud for the ``eps = 0`` system, checked at intervals."""
    cfg = config.with_(epsilon=0.0, s_nodes=config.s_nodes)
    s0 = initial.scale()
    state = SimState(0.0, initial.state.v, initial.state.eta)
    prev = PointCloud(state, dict(initial.label))
    dists, scales, horizons = [], [], [0.0]
    converged = False
    t = 0.0
    while t < T_max - 1e-12:
        t_next = min(t + check_every, T_max)
        state = integrate(state, None, cfg.with_(sample_every=10**9, s_nodes=cfg.s_nodes), t_end=t_next).final
        cur = PointCloud(state, dict(initial.label, epsilon=0.0, T=t_next))
        sc = max(cur.scale(), prev.scale(), floor * s0)
        d = hausdorff(cur, prev)
        dists.append(d)
        scales.append(sc)
        horizons.append(t_next)
        prev, t = cur, t_next
        if d <= tol * sc:
            converged = True
            break
    prev.label["converged"] = converged
    return AttractorEstimate(prev, horizons, dists, scales, converged, tol)


@dataclass
class SweepReport:
    epsilons: list
    seeds: list
    distances: dict
    mean: list
    max: list
    n_members: int
    horizons: list
    converged: dict
    reference_converged: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, stem) -> None:
        with open(f"{stem}.json", "w") as fh:
            fh.write(self.to_json())
        with open(f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epsilon", "mean_dist", "max_dist", "seeds"])
            for e, mu, mx in zip(self.epsilons, self.mean, self.max):
                w.writerow([repr(float(e)), repr(float(mu)), repr(float(mx)), " ".join(map(str, self.seeds))])


def semicontinuity_sweep(epsilons, seeds, config_for, initial: PointCloud, horizons,
                         reference: AttractorEstimate, tol: float = 1e-3) -> SweepReport:
    """``dist(A_eps(omega), A_0)`` for every ``eps`` and seed.

    Args:
        epsilons: descending noise amplitudes.
        seeds: noise seeds; each seed's path is reused for every ``eps``.
        config_for: callable ``eps -> SimConfig`` (sigma may depend on eps).
        initial: the bounded set pulled back from the past.
        horizons: pullback horizons for :func:`attractor_estimate`.
        reference: the deterministic attractor estimate ``A_0``.
    """
    eps = [float(e) for e in epsilons]
    if any(a < b for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilon list must be descending")
    dist, conv = {}, {}
    for e in eps:
        cfg = config_for(e)
        row, crow = [], []
        for s in seeds:
            if e == 0.0:
                est = reference
            else:
                est = attractor_estimate(int(s), cfg, horizons, initial, tol)
            row.append(hausdorff_semidist(est.cloud, reference.cloud))
            crow.append(bool(est.converged))
        dist[repr(e)] = row
        conv[repr(e)] = crow
    mean = [float(np.mean(dist[repr(e)])) for e in eps]
    mx = [float(np.max(dist[repr(e)])) for e in eps]
    return SweepReport(eps, [int(s) for s in seeds], dist, mean, mx, len(initial),
                       [float(h) for h in horizons], conv, bool(reference.converged))


def convergence_bound_check(epsilons, seed: int, config_for, initial: SimState, T: float,
                            separations=(1e-6,)) -> dict:
    """Empirical fit of the two-term small-noise bound.

    * eps-term: matched data ``phi0_eps = phi0``; the squared physical distance
      at ``T`` between the eps-run and the deterministic run is regressed on
      ``eps`` in log-log scale (slope near 2 expected).
    * Gronwall term: for each eps, a pair separated by ``d0`` in velocity is
      run on the same path and ``C = max_t (2/t) ln(d(t)/d0)`` is reported.
    """
    eps = [float(e) for e in epsilons]
    cfg0 = config_for(0.0)
    det = integrate(initial, None, cfg0.with_(sample_every=10**9, s_nodes=cfg0.s_nodes), t_end=T).final
    n = int(round(T / cfg0.dt))
    path = sample_wiener(seed, initial.t, T, cfg0.dt)
    d2, gron = [], {}
    for e in eps:
        cfg = config_for(e)
        phi0 = shift_velocity(initial, cfg, stationary_z(path, cfg, initial.t), -1.0)
        tr = integrate(phi0, path, cfg.with_(sample_every=n, s_nodes=cfg.s_nodes), t_end=T)
        phi = shift_velocity(tr.final, cfg, tr.z_final, 1.0)
        diff = phi - det
        d2.append(float(_energy(diff)))
        rates = []
        for d0 in separations:
            pert = random_field(cfg.grid, 12345, 2.0).truncate()
            pert = pert * (d0 / pert.norm_H())
            other = SimState(phi0.t, phi0.v + pert, phi0.eta)
            batch = SimState(phi0.t, SpectralField(cfg.grid, np.stack([phi0.v.coef, other.v.coef])),
                             phi0.eta.replace(np.stack([phi0.eta.values, other.eta.values])))
            tr = integrate(batch, path, cfg.with_(sample_every=max(1, n // 50), s_nodes=cfg.s_nodes),
                           t_end=T, store_states=True)
            ts, ds = [], []
            for st in tr.states[1:]:
                dd = st.member(1) - st.member(0)
                ts.append(st.t - initial.t)
                ds.append(math.sqrt(max(float(_energy(dd)), 0.0)))
            ds = np.array(ds)
            rates.append(float(np.max(2.0 * np.log(np.maximum(ds, 1e-300) / d0) / np.array(ts))))
        gron[repr(e)] = max(rates)
    x, y = np.log(eps), np.log(np.maximum(d2, 1e-300))
    slope = float(np.polyfit(x, y, 1)[0])
    C = np.array(list(gron.values()))
    spread = float((C.max() - C.min()) / max(abs(C).max(), 1e-300))
    return {"epsilons": eps, "sq_distance": d2, "slope": slope, "gronwall": gron,
            "gronwall_spread": spread, "T": T}


def _energy(state: SimState) -> float:
    m = state.eta.modes
    v = m.gather(state.v.coef)
    e_eta = m.inner(state.eta.values, state.eta.values, 1)
    return m.inner(v, v, 0) + np.tensordot(e_eta, state.eta.weights, axes=([-1], [0]))


def separation_growth(config: SimConfig, initial: SimState, path: NoisePath | None, T: float,
                      d0: float = 1e-6, seed: int = 99) -> dict:
    """Grow a ``d0`` perturbation and fit ``d(t) <= d0 e^{C t}``; reports ``C`` and the series."""
    pert = random_field(config.grid, seed, 2.0).truncate()
    pert = pert * (d0 / pert.norm_H())
    v = np.stack([initial.v.coef, (initial.v + pert).coef])
    eta = np.stack([initial.eta.values, initial.eta.values])
    batch = SimState(initial.t, SpectralField(config.grid, v), initial.eta.replace(eta))
    n = int(round((T - initial.t) / config.dt))
    tr = integrate(batch, path, config.with_(sample_every=max(1, n // 100), s_nodes=config.s_nodes),
                   t_end=T, store_states=True)
    ts, ds = [], []
    for st in tr.states:
        dd = st.member(1) - st.member(0)
        ts.append(st.t - initial.t)
        ds.append(math.sqrt(max(float(_energy(dd)), 0.0)))
    ts, ds = np.array(ts), np.array(ds)
    with np.errstate(divide="ignore"):
        rates = np.log(ds[1:] / ds[0]) / ts[1:]
    C = float(max(np.max(rates), 0.0))
    return {"t": ts, "d": ds, "C": C, "finite": bool(np.isfinite(C)),
            "bound_ok": bool(np.all(ds <= ds[0] * np.exp(C * ts) * (1 + 1e-9)))}
