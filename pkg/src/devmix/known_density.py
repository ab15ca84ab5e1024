"""The fixed known component h0 in its three analyzed families.

Each variant evaluates its density exactly and samples i.i.d. draws from it:

* :class:`GaussianMixtureH0` — a finite Gaussian mixture.
* :class:`KdeH0` — a kernel density estimate over stored centers, with a
  Gaussian or multivariate Student kernel.
* :class:`PwlPushforwardH0` — the pushforward of N(0,1) through a continuous
  piecewise-linear map on the real line, with the density obtained by the
  many-to-one change-of-variables sum over inverse branches.

All objects are immutable after construction and safe to share across
threads; sampling takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import t as student_t

from .errors import InputError
from .gaussians import as_points, check_spd, chol_logdet, mvn_logpdf_chol, mvn_sample

_LOG_2PI = float(np.log(2.0 * np.pi))
_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class TailClass:
    """Tail behaviour relative to a Gaussian envelope.

    ``tag`` is one of ``lighter`` (with exponent beta > 2), ``heavier``
    (exponent beta < 2) or ``gaussian``. The radius beyond which the tail
    condition kicks in is not quantified, so only the exponent is recorded.
    """

    tag: str
    beta: Optional[float] = None

    def __post_init__(self):
        if self.tag not in ("lighter", "heavier", "gaussian"):
            raise InputError(f"unknown tail tag {self.tag!r}")
        if self.tag == "lighter" and not (self.beta is not None and self.beta > 2):
            raise InputError("lighter-than-Gaussian tails need beta > 2")
        if self.tag == "heavier" and not (self.beta is not None and self.beta < 2):
            raise InputError("heavier-than-Gaussian tails need beta < 2")
        if self.tag == "gaussian" and self.beta is not None:
            raise InputError("gaussian envelope records no exponent")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GaussianMixtureH0:
    """h0(x) = sum_i w_i N(x; mean_i, cov_i)."""

    weights: np.ndarray
    means: np.ndarray        # (k0, d)
    covariances: np.ndarray  # (k0, d, d)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu.reshape(-1, 1)
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 2:
            cov = cov.reshape(cov.shape[0], 1, 1) if mu.shape[1] == 1 else cov[None, :, :]
        if w.ndim != 1 or len(w) != mu.shape[0] or cov.shape[0] != mu.shape[0]:
            raise InputError("weights, means and covariances must have matching lengths")
        if np.any(w < 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise InputError("weights must be nonnegative and sum to 1 within 1e-12")
        checked = np.stack([check_spd(c) for c in cov])
        for i in range(len(w)):
            for j in range(i + 1, len(w)):
                if np.array_equal(mu[i], mu[j]) and np.array_equal(checked[i], checked[j]):
                    raise InputError(f"mixture atoms {i} and {j} are identical")
        object.__setattr__(self, "weights", _freeze(w))
        object.__setattr__(self, "means", _freeze(mu))
        object.__setattr__(self, "covariances", _freeze(checked))
        chols, logdets = [], []
        for c in checked:
            L, ld = chol_logdet(c)
            chols.append(L)
            logdets.append(ld)
        object.__setattr__(self, "_chols", _freeze(np.stack(chols)))
        object.__setattr__(self, "_logdets", _freeze(np.asarray(logdets)))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def logpdf(self, x) -> np.ndarray:
        X = as_points(x, self.dim)
        logw = np.log(self.weights)
        comp = np.stack(
            [
                mvn_logpdf_chol(X, self.means[i], self._chols[i], self._logdets[i])
                for i in range(len(self.weights))
            ],
            axis=1,
        )
        return logsumexp(comp + logw, axis=1)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=count, p=self.weights)
        out = np.empty((count, self.dim))
        for i in range(len(self.weights)):
            mask = idx == i
            if mask.any():
                out[mask] = mvn_sample(rng, self.means[i], self.covariances[i], int(mask.sum()))
        return out

    def tail_class(self) -> TailClass:
        return TailClass("gaussian")

    def envelope_scale(self) -> float:
        return float(np.sqrt(max(np.linalg.eigvalsh(c).max() for c in self.covariances)))

    def bounds(self, radius: float = 10.0):
        s = radius * self.envelope_scale()
        return self.means.min(axis=0) - s, self.means.max(axis=0) + s

    def mixing_measure(self):
        """The mixture's parameters as a discrete mixing measure G0."""
        from .mixing import Atom, MixingMeasure

        atoms = tuple(Atom(self.means[i], self.covariances[i]) for i in range(len(self.weights)))
        return MixingMeasure(atoms, self.weights)


@dataclass(frozen=True)
class KdeH0:
    """Kernel density estimate h0(x) = (1/m) sum_j k_sigma(x, Y_j)."""

    centers: np.ndarray  # (m, d)
    bandwidth: float
    kernel: str = "gaussian"      # "gaussian" | "student"
    nu: Optional[float] = None    # degrees of freedom, Student kernel only

    _CHUNK = 4 * 10**6  # bound the (n, m) distance buffer

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c.reshape(-1, 1)
        if c.ndim != 2 or c.shape[0] < 1:
            raise InputError("need at least one KDE center")
        if not self.bandwidth > 0:
            raise InputError("bandwidth must be positive")
        if self.kernel not in ("gaussian", "student"):
            raise InputError(f"unknown kernel {self.kernel!r}")
        if self.kernel == "student":
            if self.nu is None or not self.nu > 0:
                raise InputError("Student kernel needs nu > 0")
        elif self.nu is not None:
            raise InputError("nu is only meaningful for the Student kernel")
        object.__setattr__(self, "centers", _freeze(c))
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def _log_kernel_const(self) -> float:
        d, s = self.dim, self.bandwidth
        if self.kernel == "gaussian":
            return -0.5 * d * _LOG_2PI - d * np.log(s)
        nu = self.nu
        # normalized multivariate Student: Gamma((nu+d)/2) / (Gamma(nu/2) (nu pi)^{d/2} sigma^d)
        return (
            float(gammaln((nu + d) / 2.0) - gammaln(nu / 2.0))
            - 0.5 * d * np.log(nu * np.pi)
            - d * np.log(s)
        )

    def logpdf(self, x) -> np.ndarray:
        X = as_points(x, self.dim)
        m = self.centers.shape[0]
        const = self._log_kernel_const() - np.log(m)
        out = np.empty(X.shape[0])
        block = max(1, self._CHUNK // m)
        for start in range(0, X.shape[0], block):
            chunk = X[start : start + block]
            d2 = np.sum((chunk[:, None, :] - self.centers[None, :, :]) ** 2, axis=2)
            if self.kernel == "gaussian":
                logk = -0.5 * d2 / self.bandwidth**2
            else:
                logk = -0.5 * (self.nu + self.dim) * np.log1p(d2 / (self.nu * self.bandwidth**2))
            out[start : start + block] = logsumexp(logk, axis=1) + const
        return out

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self.centers.shape[0], size=count)
        z = rng.standard_normal((count, self.dim))
        if self.kernel == "gaussian":
            noise = z
        else:
            chi2 = rng.chisquare(self.nu, size=count)
            noise = z * np.sqrt(self.nu / chi2)[:, None]
        return self.centers[idx] + self.bandwidth * noise

    def tail_class(self) -> TailClass:
        if self.kernel == "student":
            # polynomial tails; -log h0 grows like log ||x||, any beta < 2 works.
            return TailClass("heavier", beta=1.0)
        return TailClass("gaussian")

    def envelope_scale(self) -> float:
        if self.kernel == "student":
            if self.nu > 2:
                return self.bandwidth * float(np.sqrt(self.nu / (self.nu - 2.0)))
            return 30.0 * self.bandwidth
        return self.bandwidth

    def bounds(self, radius: float = 10.0):
        if self.kernel == "student":
            # polynomial tails: size the box by the kernel quantile instead of
            # a fixed number of standard deviations
            half = self.bandwidth * float(student_t.isf(1e-9, self.nu))
        else:
            half = radius * self.bandwidth
        return self.centers.min(axis=0) - half, self.centers.max(axis=0) + half


@dataclass(frozen=True)
class PwlPushforwardH0:
    """Pushforward of N(0,1) through a continuous piecewise-linear map T.

    ``breakpoints`` c_1 < ... < c_M split the line into M+1 intervals;
    ``slopes``/``intercepts`` give T(z) = a_i z + b_i on interval i. The
    density sums phi(T_i^{-1}(x)) / |a_i| over every branch whose image
    contains x. Points exactly at a breakpoint image evaluate as the left
    limit, so the result is deterministic on that measure-zero set.
    """

    breakpoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    require_nonlinear: bool = field(default=True, compare=False)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        a = np.asarray(self.slopes, dtype=float).reshape(-1)
        b = np.asarray(self.intercepts, dtype=float).reshape(-1)
        if len(a) != len(bp) + 1 or len(b) != len(a):
            raise InputError("need len(breakpoints)+1 slope/intercept pairs")
        if len(bp) > 1 and not np.all(np.diff(bp) > 0):
            raise InputError("breakpoints must be strictly increasing")
        if np.any(a == 0):
            raise InputError("every slope must be nonzero")
        for i, c in enumerate(bp):
            left = a[i] * c + b[i]
            right = a[i + 1] * c + b[i + 1]
            if abs(left - right) > 1e-12 * max(1.0, abs(left)):
                raise InputError(f"map discontinuous at breakpoint {c}")
        if self.require_nonlinear and not np.any(a[:-1] != a[1:]):
            raise InputError("piecewise-linear map must change slope at some breakpoint")
        object.__setattr__(self, "breakpoints", _freeze(bp))
        object.__setattr__(self, "slopes", _freeze(a))
        object.__setattr__(self, "intercepts", _freeze(b))
        # image interval of each branch (closed; +-inf on the outer pieces)
        lo = np.concatenate([[-np.inf], bp])
        hi = np.concatenate([bp, [np.inf]])
        ends_lo = np.where(np.isinf(lo), -np.sign(a) * np.inf, a * lo + b)
        ends_hi = np.where(np.isinf(hi), np.sign(a) * np.inf, a * hi + b)
        object.__setattr__(self, "_dom_lo", _freeze(lo))
        object.__setattr__(self, "_dom_hi", _freeze(hi))
        object.__setattr__(self, "_img_lo", _freeze(np.minimum(ends_lo, ends_hi)))
        object.__setattr__(self, "_img_hi", _freeze(np.maximum(ends_lo, ends_hi)))

    @property
    def dim(self) -> int:
        return 1

    def transform(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(self.breakpoints, z, side="left")
        return self.slopes[idx] * z + self.intercepts[idx]

    def pdf(self, x) -> np.ndarray:
        X = as_points(x, 1)[:, 0]
        total = np.zeros_like(X)
        for i in range(len(self.slopes)):
            # left-limit convention: branch i contributes on (img_lo, img_hi]
            mask = (X > self._img_lo[i]) & (X <= self._img_hi[i])
            if not mask.any():
                continue
            z = (X[mask] - self.intercepts[i]) / self.slopes[i]
            total[mask] += np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * abs(self.slopes[i]))
        return total

    def logpdf(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(count)
        return self.transform(z).reshape(-1, 1)

    def tail_class(self) -> TailClass:
        return TailClass("gaussian")

    def envelope_scale(self) -> float:
        return float(np.abs(self.slopes).max())

    def bounds(self, radius: float = 10.0):
        zs = np.concatenate([[-radius], self.breakpoints, [radius]])
        imgs = self.transform(np.clip(zs, -radius, radius))
        return np.array([imgs.min()]), np.array([imgs.max()])


KnownDensity = Union[GaussianMixtureH0, KdeH0, PwlPushforwardH0]


def eval_h0(h0: KnownDensity, x) -> float:
    """Density of h0 at a single point."""
    val = h0.pdf(x)
    if val.shape[0] != 1:
        raise InputError("eval_h0 expects a single point; use h0.pdf for batches")
    return float(val[0])


def sample_h0(h0: KnownDensity, count: int, rng_seed: int) -> np.ndarray:
    """``count`` i.i.d. draws from h0, deterministic given the seed."""
    if count < 1:
        raise InputError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return h0.sample(count, rng)


def tail_class(h0: KnownDensity) -> TailClass:
    return h0.tail_class()
