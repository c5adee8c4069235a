"""Scoring rules and performance criteria."""
from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.stats import norm

from .errors import ConfigError, LengthMismatch

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


def crps_gaussian(mu: float, variance: float, y: float) -> float:
    """Closed-form CRPS of N(mu, variance) at y."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    if variance == 0:
        return abs(y - mu)
    sigma = math.sqrt(variance)
    z = (y - mu) / sigma
    return sigma * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - INV_SQRT_PI)


def _mixture_cdf(components):
    w = np.array([c[0] for c in components], dtype=float)
    mu = np.array([c[1] for c in components], dtype=float)
    sd = np.sqrt(np.array([c[2] for c in components], dtype=float))
    point = sd == 0

    def cdf(x):
        out = 0.0
        if (~point).any():
            out += float(np.dot(w[~point], norm.cdf((x - mu[~point]) / sd[~point])))
        if point.any():
            out += float(np.dot(w[point], (x >= mu[point]).astype(float)))
        return out
    return cdf


def crps_mixture(components: Sequence[tuple[float, float, float]], y: float) -> float:
    """CRPS of a Gaussian mixture [(weight, mean, variance), ...] by adaptive quadrature.

    Integrates F(x)^2 below y and (1 - F(x))^2 above y; the tails beyond 12
    standard deviations of every component contribute less than 1e-30.
    """
    comps = [(float(w), float(m), float(v)) for w, m, v in components if w > 0]
    if not comps:
        raise ValueError("mixture has no positive-weight component")
    total = sum(w for w, _, _ in comps)
    comps = [(w / total, m, v) for w, m, v in comps]
    if len(comps) == 1:
        w, m, v = comps[0]
        if v == 0:
            return abs(y - m)
    cdf = _mixture_cdf(comps)
    spread = [math.sqrt(v) for _, _, v in comps]
    lo = min(m - 12 * s for (_, m, _), s in zip(comps, spread))
    hi = max(m + 12 * s for (_, m, _), s in zip(comps, spread))
    lo, hi = min(lo, y), max(hi, y)
    breaks = sorted({m for _, m, _ in comps})
    opts = dict(epsabs=1e-13, epsrel=1e-10, limit=500)
    below = [b for b in breaks if lo < b < y]
    above = [b for b in breaks if y < b < hi]
    left = integrate.quad(lambda x: cdf(x) ** 2, lo, y, points=below or None, **opts)[0] if y > lo else 0.0
    right = integrate.quad(lambda x: (1 - cdf(x)) ** 2, y, hi, points=above or None, **opts)[0] if hi > y else 0.0
    return left + right


def crps_ensemble(samples: Sequence[float], y: float) -> float:
    """Sample CRPS estimate E|X - y| - E|X - X'| / 2 (sorted-sample form)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("no samples")
    term1 = np.mean(np.abs(x - y))
    i = np.arange(1, n + 1)
    term2 = np.sum((2 * i - n - 1) * x) / (n * n)
    return float(term1 - term2)


def mae(predicted: Sequence[float], observed: Sequence[float]) -> float:
    if len(predicted) != len(observed):
        raise LengthMismatch(f"{len(predicted)} predictions for {len(observed)} observations")
    if not len(predicted):
        raise LengthMismatch("nothing to score")
    return float(np.mean(np.abs(np.asarray(predicted, float) - np.asarray(observed, float))))


def brier(probability, outcome) -> float:
    """(p - o)^2; sequences give the mean score."""
    if np.ndim(probability) == 0 and np.ndim(outcome) == 0:
        return (float(probability) - float(outcome)) ** 2
    p, o = np.asarray(probability, float), np.asarray(outcome, float)
    if p.shape != o.shape:
        raise LengthMismatch(f"{p.size} forecasts for {o.size} outcomes")
    return float(np.mean((p - o) ** 2))


# ---------------------------------------------------------------- criteria

METRICS = ("avg_crps", "mae", "brier")
_COMPARATORS = {"<=": operator.le, "≤": operator.le, "<": operator.lt}


@dataclass(frozen=True)
class PerformanceCriteria:
    metric: str
    comparator: str
    threshold: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.comparator not in _COMPARATORS:
            raise ConfigError(f"unknown comparator {self.comparator!r}")
        if not math.isfinite(self.threshold):
            raise ConfigError("threshold must be finite")

    def check(self, value: float) -> bool:
        return _COMPARATORS[self.comparator](value, self.threshold)

    def text(self) -> str:
        return f"{self.metric} {self.comparator} {self.threshold:g}"


def parse_criteria(text: str) -> list[PerformanceCriteria]:
    """One ``metric comparator threshold`` per line; ``#`` starts a comment."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(f"criteria line {lineno}: expected 'metric comparator threshold'")
        try:
            threshold = float(parts[2])
        except ValueError:
            raise ConfigError(f"criteria line {lineno}: {parts[2]!r} is not a number") from None
        out.append(PerformanceCriteria(parts[0], parts[1], threshold))
    return out


def evaluate_criteria(criteria: Sequence[PerformanceCriteria], values: dict[str, float]) -> list[tuple]:
    """(criterion, measured value, passed) for each criterion."""
    out = []
    for c in criteria:
        if c.metric not in values:
            raise ConfigError(f"no measurement for metric {c.metric}")
        out.append((c, values[c.metric], c.check(values[c.metric])))
    return out
