"""Uniform and PROSAC minimal-sample generation.

Samples are returned as index arrays into the correspondence array; a batch
of ``N`` samples has shape ``(N, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotEnoughData

PROSAC_T_N = 200_000


def quality_order(quality) -> np.ndarray:
    """Indices sorted by descending quality; ties keep ascending index."""
    q = np.asarray(quality, dtype=float)
    return np.argsort(-q, kind="stable")


def prosac_growth(n_total: int, m: int, T_N: int = PROSAC_T_N) -> np.ndarray:
    """Integer growth function ``T'_n`` for ``n = m .. n_total``.

    Entry ``g[n]`` is the iteration at which the top-``n`` set is fully in
    play; entries below ``m`` are unused.
    """
    g = np.zeros(n_total + 1, dtype=np.int64)
    if n_total < m:
        return g
    n = np.arange(m, n_total + 1)
    # T_n = T_N * prod_{i<m} (n - i) / (n_total - i), computed in log space
    log_Tn = np.log(T_N) + sum(np.log(n - i) - np.log(n_total - i) for i in range(m))
    Tn = np.exp(log_Tn)
    inc = np.ceil(np.diff(Tn) - 1e-9).astype(np.int64)
    g[m] = 1
    g[m + 1 :] = 1 + np.cumsum(np.maximum(inc, 0))
    return g


def _distinct(pop, k, rng):
    """``k`` distinct integers from ``range(pop[i])`` per row (Floyd's algorithm)."""
    pop = np.asarray(pop, dtype=np.int64)
    out = np.empty((pop.size, k), dtype=np.int64)
    for i in range(k):
        j = pop - k + i
        r = np.floor(rng.random(pop.size) * (j + 1)).astype(np.int64)
        dup = np.any(out[:, :i] == r[:, None], axis=1)
        out[:, i] = np.where(dup, j, r)
    return out


def draw_uniform(n_total: int, m: int, rng: np.random.Generator, count: int | None = None):
    """Uniform minimal samples without replacement: ``(m,)`` or ``(count, m)``."""
    if n_total < m:
        raise NotEnoughData(f"need {m} correspondences, have {n_total}")
    rows = 1 if count is None else count
    out = _distinct(np.full(rows, n_total), m, rng)
    return out[0] if count is None else out


@dataclass
class SamplerState:
    """PROSAC state over a fixed quality order."""

    order: np.ndarray
    m: int
    rng: np.random.Generator
    t: int = 0
    T_N: int = PROSAC_T_N
    growth: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.order = np.asarray(self.order, dtype=np.int64)
        if len(self.order) < self.m:
            raise NotEnoughData(f"need {self.m} correspondences, have {len(self.order)}")
        self.growth = prosac_growth(len(self.order), self.m, self.T_N)

    @property
    def n_total(self) -> int:
        return len(self.order)

    def subset_size(self, t) -> np.ndarray:
        """Hypothesis-set size ``n(t) = min{n >= m : T'_n >= t}``, capped at ``n_total``."""
        g = self.growth[self.m :]
        n = np.searchsorted(g, np.asarray(t), side="left") + self.m
        return np.minimum(n, self.n_total)

    @property
    def n(self) -> int:
        return int(self.subset_size(max(self.t, 1)))


def draw_batch(state: SamplerState, N: int) -> np.ndarray:
    """Advance PROSAC ``N`` iterations; returns ``(N, m)`` correspondence indices."""
    m = state.m
    ts = state.t + 1 + np.arange(N)
    n = state.subset_size(ts)
    forced = state.growth[n] >= ts
    ranks = np.empty((N, m), dtype=np.int64)
    if forced.any():
        nf = n[forced]
        ranks[forced, : m - 1] = _distinct(nf - 1, m - 1, state.rng)
        ranks[forced, m - 1] = nf - 1
    free = ~forced
    if free.any():
        ranks[free] = _distinct(n[free], m, state.rng)
    state.t += N
    return state.order[ranks]


def draw_prosac(state: SamplerState) -> np.ndarray:
    return draw_batch(state, 1)[0]
