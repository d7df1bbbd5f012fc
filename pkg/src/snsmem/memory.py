"""Fading-memory kernel, past-history variable and its transport.

The history ``eta(s) = int_0^s u(t - tau) dtau`` is sampled on a fixed,
geometrically spaced grid of ages ``s_1 < ... < s_m`` with a virtual node
``s_0 = 0`` where ``eta = 0``.  One set of kernel-weighted quadrature
weights is used both for the convolution ``int mu(s) A eta(s) ds`` and for
the weighted norm, so the energy cross terms between velocity and history
cancel exactly in the discrete balance.

Transport ``d_t eta = -d_s eta + u`` is advanced semi-Lagrangianly:
``eta_new(s) = eta_old(s - dt) + dt u`` with ``eta_new(s) = s u`` for
``s <= dt``.  Interpolation in ``s`` is linear, cubic Lagrange, or a
first-order upwind difference.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .spaces import ModeSet, SpectralField, SpectralGrid

SCHEMES = ("linear", "cubic", "upwind")
_HIST_MAGIC = b"SNSH"
_HIST_HEADER = struct.Struct("<4sIdII")


@dataclass(frozen=True)
class KernelSpec:
    """Memory kernel ``mu = -g'`` with Dafermos rate ``delta``.

    ``g`` is the relaxation function, ``mu`` and ``dmu`` its first two
    (negated) derivatives, and ``kappa = int_0^inf mu = g(0)``.
    """

    delta: float
    kappa: float
    g: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    mu: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    dmu: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    form: str = "exponential"

    def scaled(self, alpha: float) -> "KernelSpec":
        g, mu, dmu = self.g, self.mu, self.dmu
        return KernelSpec(self.delta, alpha * self.kappa,
                          lambda s: alpha * g(s), lambda s: alpha * mu(s),
                          lambda s: alpha * dmu(s), self.form)


def make_kernel(delta: float = 1.0) -> KernelSpec:
    """Exponential kernel ``g = delta e^{-delta s}`` (so ``int g = 1``)."""
    if not delta > 0:
        raise ValueError(f"kernel rate delta must be positive, got {delta}")
    d = float(delta)
    return KernelSpec(
        delta=d,
        kappa=d,
        g=lambda s: d * np.exp(-d * np.asarray(s, dtype=float)),
        mu=lambda s: d * d * np.exp(-d * np.asarray(s, dtype=float)),
        dmu=lambda s: -(d**3) * np.exp(-d * np.asarray(s, dtype=float)),
    )


def make_power_kernel(delta: float, p: float = 2.0) -> KernelSpec:
    """``mu = (1+s)^-p``: a slowly decaying kernel used as a Dafermos counter-example."""
    return KernelSpec(
        delta=float(delta),
        kappa=1.0 / (p - 1.0),
        g=lambda s: (1.0 + np.asarray(s, dtype=float)) ** (1.0 - p) / (p - 1.0),
        mu=lambda s: (1.0 + np.asarray(s, dtype=float)) ** (-p),
        dmu=lambda s: -p * (1.0 + np.asarray(s, dtype=float)) ** (-p - 1.0),
        form=f"power{p:g}",
    )


def check_dafermos(kernel: KernelSpec, s_nodes: np.ndarray) -> np.ndarray:
    """Margins ``mu'(s_j) + delta mu(s_j)``; admissible kernels give values <= 0."""
    s = np.asarray(s_nodes, dtype=float)
    return kernel.dmu(s) + kernel.delta * kernel.mu(s)


def dafermos_ok(kernel: KernelSpec, s_nodes: np.ndarray, rtol: float = 1e-14) -> bool:
    s = np.asarray(s_nodes, dtype=float)
    return bool(np.all(check_dafermos(kernel, s) <= rtol * kernel.mu(s)))


def geometric_nodes(s_min: float, delta: float, m: int = 64, span: float = 20.0) -> np.ndarray:
    """``s_j = s_min r^(j-1)`` with ``r`` chosen so that ``s_m = span / delta``."""
    if not (s_min > 0 and m >= 2):
        raise ValueError("need s_min > 0 and at least two nodes")
    s_max = span / delta
    if s_max <= s_min:
        raise ValueError("largest age must exceed the smallest")
    return np.geomspace(s_min, s_max, m)


# ---------------------------------------------------------------------------
# quadrature


def _panel_weights(kernel: KernelSpec, nodes: np.ndarray, n_gauss: int = 24) -> np.ndarray:
    """int_{nodes[0]}^{nodes[-1]} mu(s) l_i(s) ds for the Lagrange basis on ``nodes``."""
    x, gw = np.polynomial.legendre.leggauss(n_gauss)
    a, b = nodes[0], nodes[-1]
    s = 0.5 * (b - a) * (x + 1.0) + a
    wq = 0.5 * (b - a) * gw * kernel.mu(s)
    out = np.empty(len(nodes))
    for i, si in enumerate(nodes):
        others = np.delete(nodes, i)
        li = np.prod((s[:, None] - others) / (si - others), axis=1)
        out[i] = np.dot(wq, li)
    return out


def quadrature_weights(kernel: KernelSpec, s_nodes: np.ndarray, order: int = 2) -> np.ndarray:
    """Kernel-weighted product-integration weights on ``[0, inf)``.

    ``eta`` is interpolated piecewise (linear for ``order=1``, quadratic
    panels for ``order=2``) through the nodes and the virtual node
    ``(0, 0)``; the tail beyond ``s_m`` holds ``eta`` at its last value and
    contributes ``g(s_m)`` to the last weight.  Quadratic panels whose
    weights would turn negative fall back to linear ones, so the weighted
    norm stays positive definite.
    """
    s = np.concatenate([[0.0], np.asarray(s_nodes, dtype=float)])
    w = np.zeros_like(s)
    i = 0
    while i < len(s) - 1:
        if order >= 2 and i + 2 < len(s):
            pw = _panel_weights(kernel, s[i:i + 3])
            if np.all(pw > 0):
                w[i:i + 3] += pw
                i += 2
                continue
        w[i:i + 2] += _panel_weights(kernel, s[i:i + 2])
        i += 1
    w[-1] += float(kernel.g(s[-1]))
    return w[1:]


# ---------------------------------------------------------------------------
# transport stencils


def transport_stencil(s_nodes: np.ndarray, dt: float, scheme: str = "cubic"):
    """Interpolation taps giving ``eta(s_j - dt)`` from the node values.

    Returns ``(idx, w, a)``: ``eta_new[j] = sum_t w[j,t] eta[idx[j,t]] + a[j] u``.
    Rows with ``s_j <= dt`` have zero taps and ``a[j] = s_j``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown transport scheme {scheme!r}; choose from {SCHEMES}")
    if not dt > 0:
        raise ValueError("time step must be positive")
    s = np.concatenate([[0.0], np.asarray(s_nodes, dtype=float)])
    m = len(s) - 1
    ntap = 4
    idx = np.zeros((m, ntap), dtype=np.int64)
    w = np.zeros((m, ntap))
    a = np.full(m, float(dt))
    for j in range(1, m + 1):
        if s[j] <= dt:
            a[j - 1] = s[j]
            continue
        x = s[j] - dt
        lam = dt / (s[j] - s[j - 1])
        if scheme == "upwind" and lam <= 1.0:
            stencil, coef = [j, j - 1], [1.0 - lam, lam]
        else:
            # upwind beyond its CFL limit, and cubic stencils that cannot be
            # centred on the departure point, fall back to linear interpolation
            i = int(np.searchsorted(s, x, side="right")) - 1
            if scheme == "cubic" and 1 <= i <= m - 2:
                stencil = list(range(i - 1, i + 3))
            else:
                stencil = [i, i + 1]
            coef = []
            for p in stencil:
                others = [s[q] for q in stencil if q != p]
                coef.append(np.prod([(x - o) / (s[p] - o) for o in others]))
        for t, (p, c) in enumerate(zip(stencil, coef)):
            # extended index 0 is the virtual node where eta = 0
            if p > 0:
                idx[j - 1, t] = p - 1
                w[j - 1, t] = c
    return idx, w, a


@numba.njit(cache=True)
def _shift_kernel(eta, idx, w, kw, kval, qw, out, qout):
    B, m, C = eta.shape
    T = idx.shape[1]
    for b in range(B):
        for c in range(C):
            qout[b, c] = 0.0
        for j in range(m):
            kj = kw[j]
            for c in range(C):
                acc = kj * kval[b, c]
                for t in range(T):
                    acc += w[j, t] * eta[b, idx[j, t], c]
                out[b, j, c] = acc
                qout[b, c] += qw[j] * acc


@numba.njit(cache=True)
def _drive_kernel(out, a, drive):
    B, m, C = out.shape
    for b in range(B):
        for j in range(m):
            for c in range(C):
                out[b, j, c] += a[j] * drive[b, c]


def add_drive(values: np.ndarray, a: np.ndarray, drive: np.ndarray, n_axes: int) -> np.ndarray:
    """In place ``values[..., j, :] += a_j drive`` (``values`` must be C-contiguous)."""
    lead = values.shape[: values.ndim - n_axes - 1]
    m = values.shape[len(lead)]
    flat = values.reshape((int(np.prod(lead, dtype=int)), m, -1))
    _drive_kernel(flat, np.asarray(a, dtype=float), np.ascontiguousarray(drive).reshape(flat.shape[0], -1))
    return values


def shift_history(values: np.ndarray, idx, w, qw, n_axes: int, kw=None, kink_values=None):
    """Apply the transport taps along the node axis.

    Args:
        values: array ``(..., m, *field_shape)`` with ``n_axes`` field axes.
        kw, kink_values: optional weight per row on the kink value (see
            :class:`Transport`) and that value, shape ``(..., *field_shape)``.
    Returns:
        ``(shifted, q)`` where ``q = sum_j qw_j shifted_j``.
    """
    lead = values.shape[: values.ndim - n_axes - 1]
    m = values.shape[len(lead)]
    fshape = values.shape[len(lead) + 1:]
    flat = np.ascontiguousarray(values).reshape((int(np.prod(lead, dtype=int)), m, -1))
    if kw is None:
        kw = np.zeros(m)
        kval = np.zeros((flat.shape[0], flat.shape[2]), dtype=complex)
    else:
        kval = np.ascontiguousarray(np.broadcast_to(kink_values, lead + fshape), dtype=complex)
        kval = kval.reshape(flat.shape[0], flat.shape[2])
    out = np.empty_like(flat)
    q = np.empty((flat.shape[0], flat.shape[2]), dtype=complex)
    _shift_kernel(flat, idx, w, np.asarray(kw, dtype=float), kval, np.asarray(qw, dtype=float), out, q)
    return out.reshape(values.shape), q.reshape(lead + fshape)


# ---------------------------------------------------------------------------
# history state


@dataclass(frozen=True, eq=False)
class HistoryState:
    """Snapshot of ``eta`` at the ages ``s_nodes``.

    ``values`` has shape ``(..., m, 2, *modes.mode_shape)``; leading axes are
    ensemble members.
    """

    s_nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    modes: ModeSet

    @property
    def grid(self) -> SpectralGrid:
        return self.modes.grid

    @property
    def m(self) -> int:
        return len(self.s_nodes)

    @property
    def node_axis(self) -> int:
        return self.values.ndim - self.modes.n_axes - 1

    def field(self, j: int) -> SpectralField:
        return SpectralField(self.grid, self.modes.scatter(np.take(self.values, j, axis=self.node_axis)))

    def fields(self) -> list[SpectralField]:
        return [self.field(j) for j in range(self.m)]

    def replace(self, values: np.ndarray) -> "HistoryState":
        return HistoryState(self.s_nodes, self.weights, values, self.modes)

    def to_bytes(self) -> bytes:
        if self.node_axis != 0:
            raise ValueError("only single (unbatched) histories can be serialized")
        head = _HIST_HEADER.pack(_HIST_MAGIC, 1, self.grid.L, self.grid.N, self.m)
        body = np.ascontiguousarray(self.s_nodes, "<f8").tobytes()
        body += np.ascontiguousarray(self.weights, "<f8").tobytes()
        return head + body + b"".join(f.to_bytes() for f in self.fields())

    @classmethod
    def from_bytes(cls, blob: bytes, modes: str = "galerkin") -> "HistoryState":
        magic, _, L, N, m = _HIST_HEADER.unpack_from(blob)
        if magic != _HIST_MAGIC:
            raise ValueError("not a serialized history")
        off = _HIST_HEADER.size
        s = np.frombuffer(blob, "<f8", m, off).copy()
        w = np.frombuffer(blob, "<f8", m, off + 8 * m).copy()
        off += 16 * m
        ms = ModeSet(SpectralGrid(L, N), modes)
        size = (len(blob) - off) // m
        vals = [ms.gather(SpectralField.from_bytes(blob[off + j * size: off + (j + 1) * size]).coef)
                for j in range(m)]
        return cls(s, w, np.stack(vals), ms)


def init_history(past_velocity: Callable[[float], SpectralField] | None, s_nodes: np.ndarray,
                 kernel: KernelSpec, grid: SpectralGrid, modes: str = "galerkin",
                 substeps: int = 8, order: int = 2) -> HistoryState:
    """``eta(s_j) = int_0^{s_j} rho(sigma) d sigma`` by composite trapezoid.

    Each interval between consecutive ages is split into ``substeps``
    trapezoid panels.  ``past_velocity=None`` means ``rho = 0``.
    """
    ms = ModeSet(grid, modes)
    s = np.asarray(s_nodes, dtype=float)
    vals = np.zeros((len(s),) + ms.shape, dtype=complex)
    if past_velocity is not None:
        acc = np.zeros(ms.shape, dtype=complex)
        prev_s, prev_r = 0.0, ms.gather(past_velocity(0.0).coef)
        for j, sj in enumerate(s):
            for sig in np.linspace(prev_s, sj, substeps + 1)[1:]:
                r = ms.gather(past_velocity(float(sig)).coef)
                acc = acc + 0.5 * (sig - prev_s) * (prev_r + r)
                prev_s, prev_r = sig, r
            vals[j] = acc
    return HistoryState(s, quadrature_weights(kernel, s, order), vals, ms)


def steady_history(u: SpectralField, s_nodes: np.ndarray, kernel: KernelSpec,
                   modes: str = "galerkin", order: int = 2) -> HistoryState:
    """History of a velocity held at ``u`` for all past time: ``eta(s) = s u``."""
    ms = ModeSet(u.grid, modes)
    s = np.asarray(s_nodes, dtype=float)
    vals = s[:, None, None] * ms.gather(u.coef)[None] if ms.index is not None else \
        s[:, None, None, None] * ms.gather(u.coef)[None]
    return HistoryState(s, quadrature_weights(kernel, s, order), vals, ms)


def memory_convolution(history: HistoryState, kernel: KernelSpec | None = None) -> SpectralField:
    """``sum_j w_j A eta(s_j)``: the discrete ``int mu(s) A eta(s) ds``.

    ``kernel`` is accepted for symmetry with the continuous formula; the
    weights stored in ``history`` already encode it.
    """
    q = np.tensordot(history.weights, history.values, axes=([0], [history.node_axis]))
    return SpectralField(history.grid, history.modes.scatter(q * history.modes.k2))


def _lagrange(pts, x):
    out = []
    for p, sp in enumerate(pts):
        c = 1.0
        for q, sq in enumerate(pts):
            if q != p:
                c *= (x - sq) / (sp - sq)
        out.append(c)
    return out


class Transport:
    """Transport taps that respect the kink of the history at the elapsed age.

    A run that starts from a given history ``eta0`` has, at elapsed time
    ``tau``, ``eta(s) = int_0^s u`` for ``s < tau`` and
    ``eta(s) = U + eta0(s - tau)`` for ``s >= tau`` with ``U = eta(tau)``
    the running integral of the drive.  Each piece is smooth but their join
    is not, so stencils that straddle ``tau`` are replaced by stencils drawn
    from one side, with ``(tau, U)`` added as an extra point.  Away from the
    kink the taps are those of :func:`transport_stencil`.
    """

    def __init__(self, s_nodes: np.ndarray, dt: float, scheme: str = "cubic"):
        self.s = np.asarray(s_nodes, dtype=float)
        self.dt = float(dt)
        self.scheme = scheme
        self.idx, self.w, self.a = transport_stencil(self.s, dt, scheme)
        self.kw0 = np.zeros(len(self.s))
        ext = np.concatenate([[0.0], self.s])
        self.ext = ext
        taps = np.where(self.w != 0.0, self.idx + 1, -1)
        lo = np.array([ext[r[r >= 0]].min() if np.any(r >= 0) else np.inf for r in taps])
        # the virtual zero node at age 0 is a tap whenever a row interpolates from it
        first = np.array([np.searchsorted(ext, sj - dt, side="right") - 1 for sj in self.s])
        lo = np.where(first == 0, 0.0, lo)
        hi = np.array([ext[r[r >= 0]].max() if np.any(r >= 0) else -np.inf for r in taps])
        self.lo, self.hi = lo, hi
        self.active_rows = self.s > dt

    def at(self, tau: float):
        """``(idx, w, kw)`` for a step that starts at elapsed time ``tau``."""
        if self.scheme == "upwind" or tau <= 0.0 or tau >= self.s[-1]:
            return self.idx, self.w, self.kw0
        rows = np.nonzero(self.active_rows & (self.lo < tau) & (tau < self.hi))[0]
        if rows.size == 0:
            return self.idx, self.w, self.kw0
        idx, w, kw = self.idx.copy(), self.w.copy(), self.kw0.copy()
        ext = self.ext
        k_near = int(np.argmin(np.abs(self.s - tau)))
        on_node = abs(self.s[k_near] - tau) <= 1e-12 * max(tau, 1.0)
        kink = (float(self.s[k_near]), k_near) if on_node else (tau, -2)
        for j in rows:
            x = self.s[j] - self.dt
            # nearby points as (age, label): label -1 is the zero node, -2 the kink, else a node index
            ix = int(np.searchsorted(ext, x))
            window = range(max(ix - 4, 0), min(ix + 4, len(ext)))
            if x < tau:
                pts = [(ext[p], p - 1) for p in window if ext[p] < kink[0]]
            else:
                pts = [(ext[p], p - 1) for p in window if ext[p] > kink[0]]
            pts = sorted(pts + [kink])
            ages = [p[0] for p in pts]
            i = int(np.searchsorted(ages, x, side="right")) - 1
            i = min(max(i, 0), len(ages) - 2)
            if self.scheme == "cubic" and len(ages) >= 4:
                lo = min(max(i - 1, 0), len(ages) - 4)
                sel = pts[lo:lo + 4]
            else:
                sel = pts[i:i + 2]
            coef = _lagrange([p[0] for p in sel], x)
            idx[j], w[j] = 0, 0.0
            t = 0
            for (_, lab), c in zip(sel, coef):
                if lab >= 0:
                    idx[j, t], w[j, t] = lab, c
                    t += 1
                elif lab == -2:
                    kw[j] = c
        return idx, w, kw


def advance_history(history: HistoryState, u: SpectralField, dt: float,
                    scheme: str = "cubic") -> HistoryState:
    """One transport step ``eta_new(s) = eta_old(s - dt) + dt u`` (``s u`` for ``s <= dt``)."""
    idx, w, a = transport_stencil(history.s_nodes, dt, scheme)
    shifted, _ = shift_history(history.values, idx, w, history.weights, history.modes.n_axes)
    drive = history.modes.gather(u.coef)
    expand = (slice(None),) + (None,) * history.modes.n_axes
    lead = drive.ndim - history.modes.n_axes
    drive = np.expand_dims(drive, lead)
    return history.replace(shifted + a[expand] * drive)


def norm_M(history: HistoryState):
    """``||eta||_M = (sum_j w_j ||eta_j||_V^2)^(1/2)``."""
    e = history.modes.inner(history.values, history.values, 1)
    return np.sqrt(np.tensordot(e, history.weights, axes=([-1], [0])))


def norm_M1(history: HistoryState):
    """Same with the W-norm (|k|^4 weight) per node."""
    e = history.modes.inner(history.values, history.values, 2)
    return np.sqrt(np.tensordot(e, history.weights, axes=([-1], [0])))


def inner_M(a: HistoryState, b: HistoryState):
    e = a.modes.inner(a.values, b.values, 1)
    return np.tensordot(e, a.weights, axes=([-1], [0]))


# ---------------------------------------------------------------------------
# oracles


def exact_memory_oracle(u_record: np.ndarray, kernel: KernelSpec, dt: float,
                        m0: np.ndarray | None = None) -> np.ndarray:
    """Exponential-kernel reduction ``dm/dt = -delta m + kappa u``.

    Exact integrating-factor steps with ``u`` taken piecewise linear between
    samples.  ``u_record`` has time as its first axis; returns ``m`` at the
    same sample times (``m[0] = m0``).  For the exponential kernel the memory
    convolution equals ``A m``.
    """
    if kernel.form != "exponential":
        raise ValueError("the closed-form reduction needs the exponential kernel")
    d, kap = kernel.delta, kernel.kappa
    u = np.asarray(u_record)
    m = np.zeros_like(u)
    if m0 is not None:
        m[0] = m0
    e = np.exp(-d * dt)
    # int_0^dt e^{-d(dt-t)} (1 - t/dt) dt  and  int_0^dt e^{-d(dt-t)} t/dt dt
    c1 = (1.0 - e) / d
    b = (dt - c1) / (d * dt)
    a0 = c1 - b
    for n in range(len(u) - 1):
        m[n + 1] = e * m[n] + kap * (a0 * u[n] + b * u[n + 1])
    return m


def brute_force_history(u_record: np.ndarray, dt: float, s_nodes: np.ndarray,
                        past: np.ndarray | None = None) -> np.ndarray:
    """``eta^t(s_j) = int_0^{s_j} u(t - tau) d tau`` from the full velocity record.

    ``u_record[n]`` is the velocity at time ``n dt`` (the last row is "now").
    Velocity before the record is ``past`` (default zero).  The record is
    treated as piecewise linear and integrated exactly (trapezoid), then
    the cumulative integral is interpolated linearly to each age.
    """
    u = np.asarray(u_record)
    rev = u[::-1]
    n = len(rev)
    cum = np.zeros_like(rev)
    if n > 1:
        cum[1:] = np.cumsum(0.5 * dt * (rev[1:] + rev[:-1]), axis=0)
    t_rec = dt * (n - 1)
    out = np.zeros((len(s_nodes),) + u.shape[1:], dtype=u.dtype)
    for j, s in enumerate(np.asarray(s_nodes, dtype=float)):
        if s <= t_rec:
            k = min(int(np.floor(s / dt)), n - 2)
            th = s / dt - k
            # exact integral of the linear interpolant over the partial panel
            uk, uk1 = rev[k], rev[k + 1]
            out[j] = cum[k] + dt * (th * uk + 0.5 * th * th * (uk1 - uk))
        else:
            out[j] = cum[-1]
            if past is not None:
                out[j] = out[j] + (s - t_rec) * past
    return out
