"""Poisson weights and truncation depth for uniformisation.

``phi[i]`` is the Poisson point probability ``lam^i e^-lam / i!`` and
``psi[i]`` the right tail ``sum_{j > i} phi[j]``. Weights are computed from
the mode outwards with the ratio recurrences, starting from the mode value in
log space, so nothing over- or underflows for ``lam`` up to about 1e6.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_MAX_TERMS = 50_000_000


class TruncationError(Exception):
    """The required truncation depth exceeds the configured cap."""

    def __init__(self, msg: str, required: int):
        super().__init__(msg)
        self.required = required


@dataclass(frozen=True)
class PoissonTerms:
    lambda_t: float
    k: int
    phi: np.ndarray  # phi[0..k]
    psi: np.ndarray  # psi[0..k]


def _window(lam: float) -> int:
    # right edge far enough that the neglected mass is below 1e-40
    return int(math.floor(lam) + 30 * math.sqrt(lam) + 60)


def poisson_weights(lam: float, right: int | None = None) -> np.ndarray:
    """Point probabilities ``phi[0..right]``."""
    if lam < 0:
        raise ValueError("Poisson parameter must be non-negative")
    if right is None:
        right = _window(lam)
    if lam == 0:
        w = np.zeros(right + 1)
        w[0] = 1.0
        return w
    mode = min(int(math.floor(lam)), right)
    w = np.zeros(right + 1)
    w[mode] = math.exp(mode * math.log(lam) - lam - math.lgamma(mode + 1))
    for i in range(mode, right):
        w[i + 1] = w[i] * lam / (i + 1)
    for i in range(mode, 0, -1):
        w[i - 1] = w[i] * i / lam
    # the window holds all but ~1e-40 of the mass; renormalising removes
    # the rounding error of the log-space mode value
    total = math.fsum(w)
    if right >= _window(lam):
        w /= total
    return w


def poisson_terms(
    lambda_t: float,
    eps: float,
    r_max: float,
    f_max: float,
    rate: float,
    max_terms: int = DEFAULT_MAX_TERMS,
) -> PoissonTerms:
    """Weights and the smallest admissible truncation depth ``k``.

    ``k`` is the least index with

        sum_{i<=k} psi[i] > lambda_t - eps*rate/(2*r_max)   and
        psi[k] * f_max < eps/2,

    a condition on ``r_max`` (``f_max``) being dropped when it is zero.
    """
    if lambda_t < 0:
        raise ValueError("lambda_t must be non-negative")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if r_max < 0 or f_max < 0:
        raise ValueError("reward bounds must be non-negative")
    if not rate > 0:
        raise ValueError("rate must be positive")
    if not (math.isfinite(r_max) and math.isfinite(f_max) and math.isfinite(lambda_t)):
        raise ValueError("non-finite input")
    if lambda_t == 0 or (r_max == 0 and f_max == 0):
        phi = np.array([math.exp(-lambda_t)])
        psi = np.array([max(0.0, -math.expm1(-lambda_t))])
        return PoissonTerms(lambda_t, 0, phi, psi)

    right = _window(lambda_t)
    if right > max_terms:
        raise TruncationError(
            f"uniformisation needs about {right} terms (cap {max_terms})", required=right
        )
    phi = poisson_weights(lambda_t, right)
    # right tails summed from the far end, so small tails keep their precision
    tail = np.cumsum(phi[::-1])[::-1]
    psi = np.empty_like(phi)
    psi[:-1] = tail[1:]
    psi[-1] = 0.0
    np.maximum(psi, 0.0, out=psi)

    ok = np.ones(len(phi), dtype=bool)
    if r_max > 0:
        ok &= np.cumsum(psi) > lambda_t - eps * rate / (2 * r_max)
    if f_max > 0:
        ok &= psi * f_max < eps / 2
    hits = np.flatnonzero(ok)
    if len(hits) == 0:
        raise TruncationError(
            "no truncation depth meets the precision; eps is below the attainable accuracy",
            required=right,
        )
    k = int(hits[0])
    return PoissonTerms(lambda_t, k, phi[: k + 1].copy(), psi[: k + 1].copy())
