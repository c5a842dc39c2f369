"""Loss-masking distribution and a toy-scale check of the masked-training gradient.

The toy codec is linear: ``y = E x``, the channel keeps a 0/1 mask ``M`` over
``y``, and the decoder returns ``D (M * y)``. Because the mask law does not
depend on ``E``, the gradient of the expected distortion is the expectation
of the per-mask gradient in which masked elements pass no gradient.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_RATES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
ENUMERATION_LIMIT = 12


@dataclass(frozen=True)
class MaskDistribution:
    zero_prob: float = 0.8
    rate_set: tuple = DEFAULT_RATES

    def sample(self, rng: np.random.Generator, size=None):
        """Loss rate(s): 0 with ``zero_prob``, otherwise uniform over ``rate_set``."""
        rates = np.asarray(self.rate_set, dtype=np.float64)
        if size is None:
            if rng.random() < self.zero_prob:
                return 0.0
            return float(rates[rng.integers(len(rates))])
        zero = rng.random(size) < self.zero_prob
        pick = rates[rng.integers(len(rates), size=size)]
        return np.where(zero, 0.0, pick)


def sample_rate(dist: MaskDistribution, rng: np.random.Generator) -> float:
    return dist.sample(rng)


def zero_count(m: int, rate: float) -> int:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate {rate} outside [0, 1]")
    return int(math.floor(rate * m + 0.5))


def draw_mask(m: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Keep-mask with exactly ``round(rate * m)`` zeros at uniformly chosen positions."""
    z = zero_count(m, rate)
    mask = np.ones(m, dtype=np.int8)
    if z:
        mask[rng.choice(m, size=z, replace=False)] = 0
    return mask


def draw_masks(count: int, m: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent fixed-count masks, shape ``(count, m)``."""
    z = zero_count(m, rate)
    keys = rng.random((count, m))
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    return (ranks >= z).astype(np.float64)


@dataclass
class ToyLinearCodec:
    E: np.ndarray  # k x d
    D: np.ndarray  # d x k

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=np.float64)
        self.D = np.asarray(self.D, dtype=np.float64)
        k, d = self.E.shape
        if self.D.shape != (d, k):
            raise ValueError(f"decoder must be {d}x{k}, got {self.D.shape}")

    @property
    def k(self) -> int:
        return self.E.shape[0]

    @classmethod
    def random(cls, k: int, d: int, rng: np.random.Generator) -> "ToyLinearCodec":
        return cls(rng.standard_normal((k, d)) / math.sqrt(d), rng.standard_normal((d, k)) / math.sqrt(k))

    def loss(self, x: np.ndarray, mask: np.ndarray) -> float:
        r = self.D @ (mask * (self.E @ x)) - x
        return float(r @ r)

    def with_encoder(self, E) -> "ToyLinearCodec":
        return ToyLinearCodec(E, self.D)


def exact_expected_loss(toy: ToyLinearCodec, x, rate: float, mode: str = "enumerate") -> float:
    """Exact E||D(M*Ex) - x||^2.

    ``enumerate`` averages over every mask with exactly ``round(rate*k)`` zeros;
    ``bernoulli`` is the closed form for i.i.d. keep probability ``1 - rate``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = toy.E @ x
    k = toy.k
    if mode == "bernoulli":
        q = 1.0 - rate
        r = q * (toy.D @ y) - x
        col = np.sum(toy.D**2, axis=0)
        return float(r @ r + q * (1 - q) * np.sum(y**2 * col))
    if mode != "enumerate":
        raise ValueError(f"unknown mode {mode!r}")
    if k > ENUMERATION_LIMIT:
        raise ValueError(f"k={k} too large to enumerate masks; use mode='bernoulli'")
    z = zero_count(k, rate)
    total = 0.0
    count = 0
    for zeros in itertools.combinations(range(k), z):
        mask = np.ones(k)
        mask[list(zeros)] = 0.0
        r = toy.D @ (mask * y) - x
        total += float(r @ r)
        count += 1
    return total / count


def monte_carlo_loss(toy: ToyLinearCodec, x, rate: float, n: int, rng: np.random.Generator):
    """Sample mean and its standard error under fixed-count masks."""
    x = np.asarray(x, dtype=np.float64)
    masks = draw_masks(n, toy.k, rate, rng)
    y = toy.E @ x
    r = (masks * y) @ toy.D.T - x
    losses = np.sum(r**2, axis=1)
    return float(losses.mean()), float(losses.std(ddof=1) / math.sqrt(n))


def _per_sample_grads(toy: ToyLinearCodec, x, masks):
    y = toy.E @ x
    r = (masks * y) @ toy.D.T - x  # (N, d)
    gy = masks * (2.0 * r @ toy.D)  # masked elements pass no gradient
    return gy


def grad_estimate(toy: ToyLinearCodec, x, rate: float, N: int, rng: np.random.Generator, batch: int = 20000):
    """Monte-Carlo gradient of the expected masked loss with respect to ``E``."""
    if N < 1:
        raise ValueError("need at least one sample")
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros(toy.k)
    done = 0
    while done < N:
        b = min(batch, N - done)
        masks = draw_masks(b, toy.k, rate, rng)
        acc += _per_sample_grads(toy, x, masks).sum(axis=0)
        done += b
    return np.outer(acc / N, x)


def exact_gradient(toy: ToyLinearCodec, x, rate: float) -> np.ndarray:
    """Gradient of the enumerated expectation, averaging per-mask pass-through gradients."""
    x = np.asarray(x, dtype=np.float64)
    k = toy.k
    z = zero_count(k, rate)
    masks = []
    for zeros in itertools.combinations(range(k), z):
        m = np.ones(k)
        m[list(zeros)] = 0.0
        masks.append(m)
    g = _per_sample_grads(toy, x, np.array(masks)).mean(axis=0)
    return np.outer(g, x)


def finite_difference_gradient(toy: ToyLinearCodec, x, rate: float, h: float = 1e-5, mode="enumerate"):
    """Central differences of :func:`exact_expected_loss` over every entry of ``E``."""
    G = np.zeros_like(toy.E)
    for idx in np.ndindex(*toy.E.shape):
        Ep = toy.E.copy()
        Em = toy.E.copy()
        Ep[idx] += h
        Em[idx] -= h
        lp = exact_expected_loss(toy.with_encoder(Ep), x, rate, mode)
        lm = exact_expected_loss(toy.with_encoder(Em), x, rate, mode)
        G[idx] = (lp - lm) / (2 * h)
    return G


def relative_error(est, ref) -> float:
    return float(np.linalg.norm(est - ref) / np.linalg.norm(ref))


def spawn_rngs(seed: int, count: int) -> list:
    """Independent generators split from one root seed (order-independent)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


@dataclass
class GradCheckReport:
    k: int
    d: int
    rate: float
    n_samples: int
    relative_error: float
    error_tolerance: float
    slope: float
    slope_target: float
    slope_tolerance: float
    sample_sizes: list = field(default_factory=list)
    errors_by_n: list = field(default_factory=list)
    unbiased_fraction: float = 1.0

    @property
    def error_ok(self) -> bool:
        return self.relative_error <= self.error_tolerance

    @property
    def slope_ok(self) -> bool:
        return abs(self.slope - self.slope_target) <= self.slope_tolerance

    @property
    def passed(self) -> bool:
        return self.error_ok and self.slope_ok

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "rate": self.rate,
            "n_samples": self.n_samples,
            "relative_error": self.relative_error,
            "error_tolerance": self.error_tolerance,
            "error_ok": self.error_ok,
            "slope": self.slope,
            "slope_target": self.slope_target,
            "slope_tolerance": self.slope_tolerance,
            "slope_ok": self.slope_ok,
            "sample_sizes": self.sample_sizes,
            "errors_by_n": self.errors_by_n,
            "unbiased_fraction": self.unbiased_fraction,
            "passed": self.passed,
        }


def error_slope(toy, x, rate, ref, sizes=(100, 1000, 10000, 100000), repeats=8, seed=0):
    """Log-log slope of RMS relative error against sample count."""
    rngs = spawn_rngs(seed, len(sizes) * repeats)
    errs = []
    for a, n in enumerate(sizes):
        e = [relative_error(grad_estimate(toy, x, rate, n, rngs[a * repeats + r]), ref) for r in range(repeats)]
        errs.append(math.sqrt(float(np.mean(np.square(e)))))
    slope = float(np.polyfit(np.log10(sizes), np.log10(errs), 1)[0])
    return slope, errs


def unbiased_fraction(toy, x, rate, ref, runs=50, n=1000, seed=0, sigmas=3.0) -> float:
    """Share of entries of ``E`` whose mean estimate over ``runs`` lies within ``sigmas`` SE of ``ref``."""
    ests = np.stack([grad_estimate(toy, x, rate, n, g) for g in spawn_rngs(seed, runs)])
    se = ests.std(axis=0, ddof=1) / math.sqrt(runs)
    dev = np.abs(ests.mean(axis=0) - ref)
    return float(np.mean(dev <= sigmas * se + 1e-12))


def grad_check(k=8, d=6, rate=0.25, n=100_000, seed=0, tolerance=0.05) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    toy = ToyLinearCodec.random(k, d, rng)
    x = rng.standard_normal(d)
    ref = finite_difference_gradient(toy, x, rate)
    est = grad_estimate(toy, x, rate, n, spawn_rngs(seed + 1, 1)[0])
    sizes = [100, 1000, 10000, 100000]
    slope, errs = error_slope(toy, x, rate, ref, sizes, seed=seed + 2)
    return GradCheckReport(
        k, d, rate, n, relative_error(est, ref), tolerance, slope, -0.5, 0.1, sizes, errs,
        unbiased_fraction(toy, x, rate, ref, seed=seed + 3),
    )
