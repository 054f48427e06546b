"""Grouped derivative summaries: Taylor terms, order-d summary tensors, and
the group-level pseudo-gradient / pseudo-Hessian system.

The order-d summary tensor of a loss at a point, for a direction u and an
S-group partition, holds in entry (s1..sd) the d-th derivative contracted
with u masked to groups s1..sd.  Summing all S^d entries recovers the plain
d-th directional derivative (the Taylor term); the entries are symmetric
under index permutation.  Everything is computed with nested directional
derivatives (never a full derivative tensor):

* one entry column costs one gradient-equivalent pass, so the whole tensor
  costs at most S^(d-1) passes (fewer, by exploiting symmetry);
* the pseudo-Hessian costs exactly S Hessian-vector products plus one
  gradient, verified against the engine's pass counter.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from itertools import combinations_with_replacement, product

import numpy as np

from . import engine
from .engine import Expr, gradient, gradient_of_nested, nested_directional
from .partition import Partition, group_sum, mask

__all__ = [
    "BudgetError",
    "SummaryTensor",
    "PseudoSystem",
    "RegularizationVector",
    "taylor_term",
    "summary_tensor",
    "pseudo_gradient",
    "pseudo_hessian",
    "regularization_vector",
]

DEFAULT_ENTRY_BUDGET = 10**6


class BudgetError(ValueError):
    """Raised when a summary tensor would exceed the entry budget."""


def _fingerprint(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class SummaryTensor:
    """Order-d tensor of size S per dimension, plus direction provenance."""

    order: int
    size: int
    entries: np.ndarray
    fingerprint: str = ""

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.float64).reshape((self.size,) * self.order)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def total(self) -> float:
        """Sum of all entries: the scalar Taylor term."""
        return float(np.sum(self.entries))

    def to_json(self) -> str:
        return json.dumps({
            "order": self.order,
            "size": self.size,
            "entries": self.entries.reshape(-1).tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "SummaryTensor":
        obj = json.loads(text)
        return cls(obj["order"], obj["size"], np.array(obj["entries"]))


@dataclass(frozen=True, eq=False)
class PseudoSystem:
    """Group-level curvature system: symmetric S x S matrix ``hbar`` and
    non-negative vector ``gbar`` of per-group squared gradient norms."""

    hbar: np.ndarray
    gbar: np.ndarray
    partition: Partition
    fingerprint: str = ""

    def __post_init__(self) -> None:
        hbar = np.asarray(self.hbar, dtype=np.float64)
        gbar = np.asarray(self.gbar, dtype=np.float64)
        s = self.partition.size
        if hbar.shape != (s, s) or gbar.shape != (s,):
            raise ValueError(f"system shapes {hbar.shape}/{gbar.shape} do not match S={s}")
        hbar.setflags(write=False)
        gbar.setflags(write=False)
        object.__setattr__(self, "hbar", hbar)
        object.__setattr__(self, "gbar", gbar)

    @property
    def size(self) -> int:
        return self.partition.size

    def to_json(self) -> str:
        labels = list(self.partition.labels) if self.partition.labels else None
        return json.dumps({
            "hbar": self.hbar.tolist(),
            "gbar": self.gbar.tolist(),
            "labels": labels,
        })


def taylor_term(f: Expr, theta, u, d: int) -> float:
    """d-th directional derivative of f at theta along u, via d nested
    differentiations (cost proportional to d gradient sweeps)."""
    if d < 1:
        raise ValueError("taylor_term needs order d >= 1 (use evaluate for d = 0)")
    u = np.asarray(u, dtype=np.float64)
    return nested_directional(f, theta, [u] * d)


def summary_tensor(f: Expr, theta, u, part: Partition, d: int,
                   budget: int = DEFAULT_ENTRY_BUDGET) -> SummaryTensor:
    """Order-d summary tensor of f at theta for direction u.

    Only index multisets are computed (one gradient-equivalent pass gives a
    full first-index column); permuted entries are filled by copy, so the
    result is exactly permutation-symmetric.
    """
    if d < 1:
        raise ValueError("summary tensor needs order d >= 1")
    s_count = part.size
    if s_count ** d > budget:
        raise BudgetError(
            f"S^d = {s_count}^{d} exceeds the {budget}-entry budget; "
            "use a coarser partition")
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (part.total,):
        raise ValueError(f"direction has shape {u.shape}, partition covers {part.total}")

    masks = [mask(u, part, s) for s in range(s_count)]
    # store[(prefix multiset)] = vector of entries over the free first index
    columns: dict[tuple, np.ndarray] = {}
    for prefix in combinations_with_replacement(range(s_count), d - 1):
        w = gradient_of_nested(f, theta, [masks[s] for s in prefix])
        columns[prefix] = group_sum(w * u, part)

    entries = np.empty((s_count,) * d)
    for idx in product(range(s_count), repeat=d):
        srt = tuple(sorted(idx))
        entries[idx] = columns[srt[1:]][srt[0]]
    return SummaryTensor(d, s_count, entries, _fingerprint(u))


def pseudo_gradient(f: Expr, theta, part: Partition) -> np.ndarray:
    """Per-group squared gradient norms (non-negative, sums to ||g||^2)."""
    g = gradient(f, theta)
    return group_sum(g * g, part)


def pseudo_hessian(f: Expr, theta, part: Partition) -> PseudoSystem:
    """Group-level curvature of f at theta along masked gradient directions.

    hbar[s1, s2] = mask(g, s1)^T H mask(g, s2), assembled from S
    Hessian-vector products (one per group) without forming H; one extra
    pass computes the gradient itself.  Exactly S + 1 passes total.
    """
    g = gradient(f, theta)
    s_count = part.size
    hbar = np.empty((s_count, s_count))
    for s in range(s_count):
        w = gradient_of_nested(f, theta, [mask(g, part, s)])
        hbar[:, s] = group_sum(w * g, part)
    hbar = 0.5 * (hbar + hbar.T)
    gbar = group_sum(g * g, part)
    env = engine._as_env(theta)
    return PseudoSystem(hbar, gbar, part, _fingerprint(np.asarray(env[engine.PARAM])))


@dataclass(frozen=True, eq=False)
class RegularizationVector:
    """Per-group third-derivative magnitudes raised to the 2/3 power.

    ``lower_bound`` is True for sampled estimates (the max over a random
    subset of index triples can only under-estimate the true max)."""

    values: np.ndarray
    mode: str
    samples: int | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def lower_bound(self) -> bool:
        return self.mode == "sampled"

    def __array__(self, dtype=None, copy=None):
        return np.array(self.values, dtype=dtype)

    def __len__(self) -> int:
        return len(self.values)


def regularization_vector(f: Expr, theta, part: Partition, mode: str = "exact",
                          n_max: int = 64, samples: int = 256,
                          seed: int = 0) -> RegularizationVector:
    """Max absolute entry of the third-derivative sub-tensor of each group,
    raised to the power 2/3.

    Exact mode enumerates every index triple inside a group with nested
    basis-direction derivatives (one pass per unordered pair, the third index
    read from the full vector); it refuses groups larger than ``n_max``.
    Sampled mode evaluates ``samples`` random triples per group and reports
    the max over the sample, a lower bound on the true value.
    """
    if mode not in ("exact", "sampled"):
        raise ValueError(f"unknown mode '{mode}' (expected 'exact' or 'sampled')")
    p_total = part.total
    maxima = np.zeros(part.size)

    if mode == "exact":
        oversized = [s for s in range(part.size) if len(part.groups[s]) > n_max]
        if oversized:
            raise ValueError(
                f"exact enumeration refused: group(s) {oversized} exceed "
                f"{n_max} parameters; use mode='sampled'")
        for s, grp in enumerate(part.groups):
            idx = np.fromiter(grp, dtype=np.int64)
            best = 0.0
            for j, k in combinations_with_replacement(grp, 2):
                ej = np.zeros(p_total)
                ej[j] = 1.0
                ek = np.zeros(p_total)
                ek[k] = 1.0
                w = gradient_of_nested(f, theta, [ej, ek])
                best = max(best, float(np.max(np.abs(w[idx]))))
            maxima[s] = best
    else:
        rng = np.random.default_rng(seed)
        for s, grp in enumerate(part.groups):
            idx = np.fromiter(grp, dtype=np.int64)
            best = 0.0
            for _ in range(samples):
                i, j, k = rng.choice(idx, size=3)
                dirs = []
                for q in (i, j, k):
                    e = np.zeros(p_total)
                    e[q] = 1.0
                    dirs.append(e)
                best = max(best, abs(nested_directional(f, theta, dirs)))
            maxima[s] = best

    values = np.power(maxima, 2.0 / 3.0)
    return RegularizationVector(values, mode, samples if mode == "sampled" else None)
