"""Scalar two-sided Wiener paths, the stationary Ornstein-Uhlenbeck process
and the constants that tie the noise to the energy estimates.

Increments live on the integer lattice ``t_n = n dt`` (``n`` may be
negative).  They are drawn in blocks from a counter-based generator keyed by
the path seed, so any increment depends only on ``(seed, dt, n)``:
extending a path, or asking for it in a different order, never changes
values already seen.  The shift ``theta_tau`` is an index offset.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import lfilter

from .spaces import SpectralField

BLOCK = 1024


def _block(seed: int, b: int) -> np.ndarray:
    ctr = np.array([0, b % 2**64, 0, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=int(seed), counter=ctr))
    return gen.standard_normal(BLOCK)


@dataclass(frozen=True)
class NoisePath:
    """Header of a Wiener path; increments are regenerated on demand.

    ``offset`` implements the shift: the path ``theta_tau omega`` has
    increments ``dW_theta(n) = dW(n + offset)`` with ``offset = tau / dt``.
    """

    seed: int
    t0: float
    t1: float
    dt: float
    offset: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if not self.t0 < self.t1:
            raise ValueError(f"need t0 < t1, got [{self.t0}, {self.t1}]")

    @property
    def n0(self) -> int:
        return int(round(self.t0 / self.dt))

    @property
    def n1(self) -> int:
        return int(round(self.t1 / self.dt))

    def header(self) -> dict:
        return asdict(self)

    def times(self) -> np.ndarray:
        return np.arange(self.n0, self.n1 + 1) * self.dt

    def increments(self, n_start: int | None = None, count: int | None = None) -> np.ndarray:
        """``dW_n = W(t_{n+1}) - W(t_n)`` for ``n = n_start .. n_start+count-1``.

        Defaults cover the whole header interval.  Indices outside the header
        are legal; the header only fixes the default window.
        """
        n_start = self.n0 if n_start is None else int(n_start)
        count = self.n1 - self.n0 if count is None else int(count)
        if count <= 0:
            return np.zeros(0)
        first = n_start + self.offset
        b0, b1 = first // BLOCK, (first + count - 1) // BLOCK
        raw = np.concatenate([_block(self.seed, b) for b in range(b0, b1 + 1)])
        lo = first - b0 * BLOCK
        return math.sqrt(self.dt) * raw[lo: lo + count]

    def W(self, n: int | np.ndarray) -> np.ndarray:
        """Cumulative ``W(t_n)`` with ``W(0) = 0`` (vectorised over ``n``)."""
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        lo, hi = min(int(n.min()), 0), max(int(n.max()), 0)
        inc = self.increments(lo, hi - lo)
        cum = np.concatenate([[0.0], np.cumsum(inc)])
        return cum[n - lo] - cum[-lo]

    def shifted(self, tau: float) -> "NoisePath":
        """The path ``theta_tau omega``: ``W_theta(t) = W(t + tau) - W(tau)``."""
        k = tau / self.dt
        if abs(k - round(k)) > 1e-9:
            raise ValueError("shift must be a multiple of the path time step")
        k = int(round(k))
        return NoisePath(self.seed, self.t0 - k * self.dt, self.t1 - k * self.dt, self.dt, self.offset + k)

    def extended(self, t0: float | None = None, t1: float | None = None) -> "NoisePath":
        return NoisePath(self.seed, self.t0 if t0 is None else t0, self.t1 if t1 is None else t1,
                         self.dt, self.offset)


def sample_wiener(seed: int, t0: float, t1: float, dt: float) -> NoisePath:
    """Path over ``[t0, t1]`` on the lattice ``n dt``."""
    return NoisePath(int(seed), float(t0), float(t1), float(dt))


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck


def _ou_coeffs(dt: float, sigma: float) -> tuple[float, float]:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    a = math.exp(-sigma * dt)
    # exact variance of int e^{-sigma(dt-s)} dW, expressed per unit of dW
    b = math.sqrt(-math.expm1(-2.0 * sigma * dt) / (2.0 * sigma * dt))
    return a, b


def ou_advance(z, dW, dt: float, sigma: float):
    """Exact-variance step of ``dz + sigma z dt = dW``."""
    a, b = _ou_coeffs(dt, sigma)
    return a * z + b * dW


def ou_run(z0: float, dW: np.ndarray, dt: float, sigma: float) -> np.ndarray:
    """Iterate :func:`ou_advance`; returns ``len(dW) + 1`` values starting at ``z0``."""
    a, b = _ou_coeffs(dt, sigma)
    dW = np.asarray(dW, dtype=float)
    if dW.size == 0:
        return np.array([float(z0)])
    zi = np.array([a * z0])
    z = lfilter([b], [1.0, -a], dW, zi=zi)[0]
    return np.concatenate([[float(z0)], z])


def default_truncation(sigma: float, dt: float, digits: float = 40.0) -> float:
    """Pullback horizon with ``e^{-sigma T} <= e^{-digits}``, rounded up to whole steps."""
    return max(1, math.ceil(digits / (sigma * dt))) * dt


def ou_pullback(path: NoisePath, sigma: float, t: float, T_trunc: float | None = None):
    """``z(theta_{-t} omega)`` from a zero start at ``-T_trunc``.

    Returns ``(z, bound)`` where ``bound = e^{-sigma (T_trunc - t)}`` is the
    factor multiplying the (unknown) true value at the truncation horizon.
    """
    dt = path.dt
    T_trunc = default_truncation(sigma, dt) if T_trunc is None else T_trunc
    n_end = -int(round(t / dt))
    n_beg = -int(round(T_trunc / dt))
    if n_beg > n_end:
        raise ValueError("truncation horizon must lie before the evaluation time")
    z = ou_run(0.0, path.increments(n_beg, n_end - n_beg), dt, sigma)[-1]
    return float(z), math.exp(-sigma * (n_end - n_beg) * dt)


def ou_series(path: NoisePath, sigma: float, n_start: int, n_steps: int,
              T_trunc: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stationary ``z`` at ``t_n``, ``n = n_start..n_start+n_steps``, and the driving ``dW``.

    ``T_trunc`` is the length of the zero-start spin-up before ``t_{n_start}``.
    """
    T = default_truncation(sigma, path.dt) if T_trunc is None else T_trunc
    t = -n_start * path.dt
    z0, _ = ou_pullback(path, sigma, t, t + T)
    dW = path.increments(n_start, n_steps)
    return ou_run(z0, dW, path.dt, sigma), dW


@dataclass
class OUProcess:
    """Stateful wrapper: ``z`` changes only through :meth:`advance`."""

    sigma: float
    path: NoisePath
    n: int = 0
    z: float = 0.0

    @classmethod
    def stationary(cls, path: NoisePath, sigma: float, n: int = 0, T_trunc: float | None = None):
        z, _ = ou_pullback(path, sigma, -n * path.dt, T_trunc)
        return cls(sigma, path, n, z)

    def advance(self, steps: int = 1) -> float:
        dW = self.path.increments(self.n, steps)
        self.z = float(ou_run(self.z, dW, self.path.dt, self.sigma)[-1])
        self.n += steps
        return self.z


def beta1(z):
    """Tempered functional ``|z|^2 + |z|^4``."""
    z2 = np.square(z)
    return z2 + z2 * z2


def expected_beta1(sigma: float) -> float:
    """Stationary mean ``E beta1 = 1/(2 sigma) + 3/(4 sigma^2)``."""
    return 1.0 / (2.0 * sigma) + 3.0 / (4.0 * sigma**2)


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> float:
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    size = len(x) // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def ergodic_average_check(path: NoisePath, sigma: float, T: float) -> dict:
    """Compare ``(1/T) int_{-T}^0 beta1(theta_tau omega) d tau`` to its stationary mean.

    The report also says whether the stationary mean satisfies the bound
    ``E beta1 <= 1/(4 sigma)`` used in the energy estimates (it cannot for
    any ``sigma``, since ``1/(2 sigma) > 1/(4 sigma)``).
    """
    n = int(round(T / path.dt))
    z, _ = ou_series(path, sigma, -n, n)
    b = beta1(z)
    avg = float(np.trapezoid(b, dx=path.dt) / (n * path.dt))
    expected = expected_beta1(sigma)
    se = batch_means_se(b) if n >= 500 else float("nan")
    bound_ok = expected <= 1.0 / (4.0 * sigma)
    if not bound_ok:
        warnings.warn("stationary E beta1 exceeds 1/(4 sigma); the ergodic bound is not met",
                      RuntimeWarning, stacklevel=2)
    return {"average": avg, "expected": expected, "se": se,
            "n_se": abs(avg - expected) / se if se and se > 0 else float("nan"),
            "high_variance": n < 500 or sigma * T < 100.0, "quarter_sigma_bound_holds": bound_ok}


def temperedness_profile(path: NoisePath, sigma: float, rate: float, T: float) -> tuple[np.ndarray, np.ndarray]:
    """``e^{-rate t} sup_{tau <= t} beta1(theta_{-tau} omega)`` for ``t`` in ``[0, T]``."""
    n = int(round(T / path.dt))
    z, _ = ou_series(path, sigma, -n, n)
    b = beta1(z[::-1])
    t = np.arange(n + 1) * path.dt
    return t, np.exp(-rate * t) * np.maximum.accumulate(b)


def shifted_forcing(h: SpectralField, z: float) -> SpectralField:
    """``y = h z``."""
    return h * float(z)


# ---------------------------------------------------------------------------
# constants


@dataclass
class ConstantsLedger:
    """Every constant entering the estimates, with where it came from."""

    nu: float
    lambda1: float
    delta: float
    kappa: float
    c_hat: float
    c_tilde: float
    epsilon: float = 0.0
    sigma: float = float("nan")
    provenance: dict = field(default_factory=dict)

    @property
    def delta0(self) -> float:
        return min(self.nu * self.lambda1 / 2.0, self.delta / 2.0)

    @property
    def delta2(self) -> float:
        return min(self.nu * self.lambda1 / 8.0, self.delta / 2.0)

    @property
    def c0(self) -> float:
        return 2.0 * (self.c_hat * self.c_tilde) ** 2 / self.nu

    @property
    def c5_short(self) -> float:
        return 3456.0 * (self.c_hat * self.c_tilde) ** 4 / self.nu**3

    @property
    def c5_long(self) -> float:
        return 11664.0 * (self.c_hat * self.c_tilde) ** 4 / self.nu**3

    @property
    def c5(self) -> float:
        """The larger of the two published forms (safer for sigma selection)."""
        return max(self.c5_short, self.c5_long)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("nu", "lambda1", "delta", "kappa", "c_hat", "c_tilde",
                                             "epsilon", "sigma", "delta0", "delta2", "c0",
                                             "c5_short", "c5_long", "c5")}
        out["provenance"] = dict(self.provenance)
        return out


def forcing_constant(h: SpectralField) -> float:
    """``c_tilde = max(||h||, ||A^{1/2} h||, ||A h||)``."""
    return max(h.norm_H(), h.norm_V(), h.norm_W())


def build_ledger(nu: float, lambda1: float, kernel, h: SpectralField, c_hat: float,
                 epsilon: float = 0.0, sigma: float | None = None) -> ConstantsLedger:
    if not (c_hat > 0 and np.isfinite(c_hat)):
        raise ValueError("a measured trilinear constant is required")
    led = ConstantsLedger(nu=nu, lambda1=lambda1, delta=kernel.delta, kappa=kernel.kappa,
                          c_hat=c_hat, c_tilde=forcing_constant(h), epsilon=epsilon)
    led.provenance = {"nu": "input", "lambda1": "grid", "delta": "kernel", "kappa": "kernel",
                      "c_hat": "measured", "c_tilde": "measured from h", "epsilon": "input"}
    if sigma is None:
        led.sigma = choose_sigma(led, epsilon)
        led.provenance["sigma"] = "choose_sigma"
    else:
        led.sigma = float(sigma)
        led.provenance["sigma"] = "input"
    return led


def choose_sigma(ledger: ConstantsLedger, epsilon: float) -> float:
    """``1.1 max(c0 eps^2/(2 delta0), c5 eps^4/(2 delta0), delta0)``."""
    for name in ("c_hat", "c_tilde"):
        v = getattr(ledger, name, None)
        if v is None or not np.isfinite(v):
            raise ValueError(f"ledger is missing the measured constant {name}")
    d0 = ledger.delta0
    e2 = epsilon * epsilon
    return 1.1 * max(ledger.c0 * e2 / (2.0 * d0), ledger.c5 * e2 * e2 / (2.0 * d0), d0)
