"""
Hott-topics instances, reward noise and ground-truth oracle quantities.

An instance is a pair of latent factor matrices ``U`` (K x d) and ``V`` (L x d)
whose rows lie in the standard simplex. Every row of ``U`` is a convex
combination of the d base rows ``U[base_rows]`` and the zero vector, and the
same holds for ``V``. Base rows are relabelled to ``0..d-1`` at generation.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import optimize, stats

from lowrank_bandits.matcore import DSubset, DomainError, det_batch, enum_subsets, n_subsets

ENUMERATION_LIMIT = 10**7
SIMPLEX_TOL = 1e-9


class GenerationError(RuntimeError):
    pass


class TooLargeError(ValueError):
    pass


class InstanceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# noise


@functools.lru_cache(maxsize=65536)
def _truncnorm_loc(mean: float, sigma: float) -> float:
    """Location of a N(loc, sigma^2) truncated to [0, 1] whose mean is ``mean``."""

    def gap(loc):
        a, b = (0.0 - loc) / sigma, (1.0 - loc) / sigma
        return stats.truncnorm.mean(a, b, loc=loc, scale=sigma) - mean

    # the truncated mean behaves like sigma^2 / |loc| far outside the interval
    reach = 2.0 * sigma**2 / min(mean, 1.0 - mean) + 1.0
    return optimize.brentq(gap, -reach, 1.0 + reach, xtol=1e-13, rtol=1e-13, maxiter=500)


@dataclass(frozen=True)
class NoiseModel:
    """Reward distribution around the mean matrix, supported on [0, 1].

    ``bernoulli``: r ~ Bernoulli(mean). ``truncated-gaussian``: a Gaussian with
    scale ``sigma`` truncated to [0, 1], its location shifted so that the
    truncated mean equals the target. ``deterministic``: r = mean.
    """

    kind: str = "bernoulli"
    sigma: float = 0.1

    KINDS = ("bernoulli", "truncated-gaussian", "deterministic")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "truncated-gaussian" and not self.sigma > 0:
            raise ValueError("truncated-gaussian noise needs sigma > 0")

    def sample(self, means, rng: np.random.Generator) -> np.ndarray:
        """One independent draw per entry of ``means``."""
        m = np.asarray(means, dtype=float)
        if self.kind == "deterministic":
            return m.copy()
        if self.kind == "bernoulli":
            return (rng.random(m.shape) < m).astype(float)
        return self._sample_truncated(m, rng)

    def _sample_truncated(self, m: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = m.copy()
        inner = (m > 1e-12) & (m < 1.0 - 1e-12)
        if not inner.any():
            return out
        uniq, inv = np.unique(m[inner], return_inverse=True)
        locs = np.array([_truncnorm_loc(float(u), self.sigma) for u in uniq])[inv]
        a, b = (0.0 - locs) / self.sigma, (1.0 - locs) / self.sigma
        draws = stats.truncnorm.rvs(a, b, loc=locs, scale=self.sigma, random_state=rng)
        out[inner] = np.clip(draws, 0.0, 1.0)
        return out

    def mean_of(self, mean: float) -> float:
        """Exact mean of the distribution used for target ``mean``."""
        if self.kind != "truncated-gaussian" or mean <= 1e-12 or mean >= 1.0 - 1e-12:
            return float(mean)
        loc = _truncnorm_loc(float(mean), self.sigma)
        a, b = (0.0 - loc) / self.sigma, (1.0 - loc) / self.sigma
        return float(stats.truncnorm.mean(a, b, loc=loc, scale=self.sigma))

    @classmethod
    def parse(cls, text: str) -> "NoiseModel":
        """``bernoulli``, ``deterministic`` or ``truncated-gaussian:0.1``."""
        kind, _, arg = text.partition(":")
        if kind == "truncated-gaussian":
            return cls(kind, float(arg) if arg else 0.1)
        return cls(kind)

    def spec(self) -> str:
        return f"{self.kind}:{self.sigma!r}" if self.kind == "truncated-gaussian" else self.kind


# ---------------------------------------------------------------------------
# instances


def _in_simplex(M: np.ndarray) -> bool:
    return bool(np.all(M >= -SIMPLEX_TOL) and np.all(M.sum(axis=1) <= 1.0 + SIMPLEX_TOL))


def _subset_sqdets(F: np.ndarray, subsets: List[DSubset]) -> np.ndarray:
    idx = np.array(subsets, dtype=int)
    return det_batch(F[idx]) ** 2


@dataclass(frozen=True, eq=False)
class HottTopicsInstance:
    K: int
    L: int
    d: int
    U: np.ndarray
    V: np.ndarray
    Rbar: np.ndarray
    base_rows: DSubset
    base_cols: DSubset
    mix_rows: np.ndarray
    mix_cols: np.ndarray
    seed: Optional[int] = None
    # position of each relabelled row/column before the base factors were moved to 0..d-1
    row_perm: Optional[np.ndarray] = field(default=None, repr=False)
    col_perm: Optional[np.ndarray] = field(default=None, repr=False)

    def mean_reward(self, i: int, j: int) -> float:
        if not (0 <= i < self.K and 0 <= j < self.L):
            raise DomainError(f"entry ({i}, {j}) outside a {self.K} x {self.L} matrix")
        return float(self.U[i] @ self.V[j])

    def sample_reward(self, noise: NoiseModel, i: int, j: int, rng: np.random.Generator) -> float:
        return float(noise.sample(self.mean_reward(i, j), rng))

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "L": self.L,
            "d": self.d,
            "U": [[float(f"{x:.17g}") for x in row] for row in self.U],
            "V": [[float(f"{x:.17g}") for x in row] for row in self.V],
            "base_rows": list(self.base_rows),
            "base_cols": list(self.base_cols),
            "seed": self.seed,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, doc: dict) -> "HottTopicsInstance":
        inst = make_instance(
            np.array(doc["U"], dtype=float),
            np.array(doc["V"], dtype=float),
            base_rows=doc["base_rows"],
            base_cols=doc["base_cols"],
            seed=doc.get("seed"),
        )
        if (inst.K, inst.L, inst.d) != (doc["K"], doc["L"], doc["d"]):
            raise InstanceError("declared dimensions do not match the factor matrices")
        return inst

    @classmethod
    def from_json(cls, path) -> "HottTopicsInstance":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _mixing_weights(F: np.ndarray, base: DSubset, name: str) -> np.ndarray:
    base_block = F[list(base)]
    if abs(np.linalg.det(base_block)) < 1e-300:
        raise InstanceError(f"base {name} factors are singular")
    Z = np.linalg.solve(base_block.T, F.T).T
    Z[np.abs(Z) < 1e-12] = 0.0
    if not _in_simplex(Z):
        raise InstanceError(f"some {name} factor is not a convex combination of the base factors and 0")
    return Z


def make_instance(U, V, base_rows=None, base_cols=None, seed=None) -> HottTopicsInstance:
    """Build and validate an instance from explicit latent factors."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    # a 1-D vector is a rank-1 factor
    U = U[:, None] if U.ndim == 1 else U
    V = V[:, None] if V.ndim == 1 else V
    K, d = U.shape
    L, d2 = V.shape
    if d != d2:
        raise InstanceError(f"U has rank {d} but V has rank {d2}")
    if d > min(K, L):
        raise InstanceError(f"rank {d} exceeds min(K, L) = {min(K, L)}")
    if not (_in_simplex(U) and _in_simplex(V)):
        raise InstanceError("latent factors must have rows in the standard simplex")
    base_rows = DSubset(range(d) if base_rows is None else base_rows, bound=K)
    base_cols = DSubset(range(d) if base_cols is None else base_cols, bound=L)
    if len(base_rows) != d or len(base_cols) != d:
        raise InstanceError("base index sets must contain exactly d indices")
    mix_rows = _mixing_weights(U, base_rows, "row")
    mix_cols = _mixing_weights(V, base_cols, "column")
    Rbar = U @ V.T
    for a in (U, V, Rbar, mix_rows, mix_cols):
        a.setflags(write=False)
    return HottTopicsInstance(K, L, d, U, V, Rbar, base_rows, base_cols, mix_rows, mix_cols, seed)


def _sample_factors(n, d, rng, base_alpha, mix_alpha, scale_range):
    # base factors: points of the simplex {v >= 0, |v|_1 <= 1} (drop the slack coordinate)
    base = rng.dirichlet(np.full(d + 1, base_alpha), size=d)[:, :d]
    scale = rng.uniform(scale_range[0], scale_range[1], size=(n - d, 1))
    mix = rng.dirichlet(np.full(d, mix_alpha), size=n - d) * scale
    Z = np.vstack([np.eye(d), mix])
    perm = rng.permutation(n)  # perm[p] = pre-relabel position of relabelled row p
    return Z @ base, perm


def _sample_side(n, d, rng, min_cmin, min_gap, max_attempts, base_alpha, mix_alpha, scale_range, name):
    subsets = enum_subsets(n, d)
    cmin = gap = 0.0
    for _ in range(max_attempts):
        F, perm = _sample_factors(n, d, rng, base_alpha, mix_alpha, scale_range)
        sq = _subset_sqdets(F, subsets)
        cmin, gap = float(sq.min()), _min_gap(sq)
        if cmin >= min_cmin and gap >= min_gap and gap > 0:
            return F, perm
    raise GenerationError(
        f"no {name} factors with c_min >= {min_cmin} and gap >= {min_gap} after {max_attempts} "
        f"attempts (last c_min={cmin:.3g}, delta_min={gap:.3g})"
    )


def generate_instance(
    K: int,
    L: int,
    d: int,
    seed: int,
    min_cmin: float = 1e-10,
    min_gap: float = 0.0,
    max_attempts: int = 10_000,
    base_alpha: float = 1.0,
    mix_alpha: float = 1.0,
    scale_range: Tuple[float, float] = (0.0, 1.0),
) -> HottTopicsInstance:
    """Random hott-topics instance with a unique optimal d-row and d-column.

    Base factors are random points of the simplex (Dirichlet with
    ``base_alpha``); every other row is ``scale * Dirichlet(mix_alpha)`` times
    the base factors with ``scale ~ U(scale_range)``. Row and column factors
    are redrawn independently until each side has ``c_min >= min_cmin`` and a
    gap ``>= min_gap`` (always ``> 0``).
    """
    if not (1 <= d <= min(K, L)):
        raise DomainError(f"need 1 <= d <= min(K, L), got K={K}, L={L}, d={d}")
    if not min_cmin > 0 or min_gap < 0:
        raise DomainError("need min_cmin > 0 and min_gap >= 0")
    _guard(K, L, d)
    rng = np.random.default_rng(seed)
    opts = (min_cmin, min_gap, max_attempts, base_alpha, mix_alpha, scale_range)
    U, pu = _sample_side(K, d, rng, *opts, "row")
    V, pv = _sample_side(L, d, rng, *opts, "column")
    inst = make_instance(U, V, seed=seed)
    object.__setattr__(inst, "row_perm", pu)
    object.__setattr__(inst, "col_perm", pv)
    return inst


def _min_gap(sqdets: np.ndarray) -> float:
    if sqdets.size == 1:
        return math.inf
    top = sqdets.max()
    second = np.partition(sqdets, -2)[-2]
    return float(top - second)


def _guard(K: int, L: int, d: int) -> None:
    if n_subsets(K, d) * n_subsets(L, d) > ENUMERATION_LIMIT:
        raise TooLargeError(
            f"C({K},{d}) * C({L},{d}) exceeds the enumeration limit of {ENUMERATION_LIMIT}"
        )


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleQuantities:
    best_entry: Tuple[int, int]
    best_drow: DSubset
    best_dcol: DSubset
    gaps_rows: Dict[DSubset, float]
    gaps_cols: Dict[DSubset, float]
    delta_min: float
    c_min: float
    c_max: float
    c_bar_u: float
    c_bar_v: float
    c_bar: float
    row_sqdets: Dict[DSubset, float] = field(repr=False, default_factory=dict)
    col_sqdets: Dict[DSubset, float] = field(repr=False, default_factory=dict)

    def summary(self) -> dict:
        return {
            "best_entry": list(self.best_entry),
            "best_drow": list(self.best_drow),
            "best_dcol": list(self.best_dcol),
            "delta_min": self.delta_min,
            "c_min": self.c_min,
            "c_max": self.c_max,
            "c_bar_u": self.c_bar_u,
            "c_bar_v": self.c_bar_v,
            "c_bar": self.c_bar,
        }


def oracle_quantities(inst: HottTopicsInstance) -> OracleQuantities:
    """Gaps and volume constants by full enumeration of all d-rows and d-columns."""
    _guard(inst.K, inst.L, inst.d)
    row_sets, col_sets = enum_subsets(inst.K, inst.d), enum_subsets(inst.L, inst.d)
    su = _subset_sqdets(np.asarray(inst.U), row_sets)
    sv = _subset_sqdets(np.asarray(inst.V), col_sets)
    top_u = su[row_sets.index(inst.base_rows)]
    top_v = sv[col_sets.index(inst.base_cols)]
    gaps_rows = {I: float(top_u - s) for I, s in zip(row_sets, su)}
    gaps_cols = {J: float(top_v - s) for J, s in zip(col_sets, sv)}
    others = [g for I, g in gaps_rows.items() if I != inst.base_rows]
    others += [g for J, g in gaps_cols.items() if J != inst.base_cols]
    flat = int(np.argmax(inst.Rbar))
    c_bar_u, c_bar_v = float(su.mean()), float(sv.mean())
    return OracleQuantities(
        best_entry=(flat // inst.L, flat % inst.L),
        best_drow=inst.base_rows,
        best_dcol=inst.base_cols,
        gaps_rows=gaps_rows,
        gaps_cols=gaps_cols,
        delta_min=min(others) if others else math.inf,
        c_min=float(min(su.min(), sv.min())),
        c_max=float(min(top_u, top_v)),
        c_bar_u=c_bar_u,
        c_bar_v=c_bar_v,
        c_bar=math.exp(min(c_bar_u, c_bar_v)),
        row_sqdets=dict(zip(row_sets, map(float, su))),
        col_sqdets=dict(zip(col_sets, map(float, sv))),
    )
