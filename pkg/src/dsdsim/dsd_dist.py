"""
Probability-vector arithmetic over a shared vocabulary.

Dense distributions (`Distribution`) hold the P(x)/Q(x) vectors of the draft
and target models, `SparseTopK` holds the renormalized top-K distribution the
device puts on the uplink. All arithmetic is in double precision; half
precision only appears in the wire codec.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import softmax

# Tolerance on the total mass of a valid distribution
SUM_TOL = 1e-9


class InvalidDistributionError(ValueError):
    """Raised for non-finite logits, bad K, or malformed probability vectors."""


class DegenerateResidualError(ValueError):
    """Raised when max(0, P - Q) has no positive mass."""


@dataclass(frozen=True)
class Distribution:
    """Dense probability vector over the vocabulary."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise InvalidDistributionError(
                f"Expected a non-empty 1-D vector, got shape {probs.shape}"
            )
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InvalidDistributionError("Probabilities must be finite and >= 0")
        total = probs.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise InvalidDistributionError(
                f"Probabilities sum to {total:.15g}, not 1 within {SUM_TOL}"
            )
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def vocab_size(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, token_id: int) -> float:
        return float(self.probs[token_id])


@dataclass(frozen=True)
class SparseTopK:
    """Top-K token ids with renormalized probabilities.

    Entries are stored sorted by probability (descending), ties broken by
    ascending token id. Tokens not listed carry zero mass.
    """

    token_ids: np.ndarray
    probs: np.ndarray
    vocab_size: int

    def __post_init__(self):
        ids = np.array(self.token_ids, dtype=np.int64)
        probs = np.array(self.probs, dtype=np.float64)
        if ids.ndim != 1 or ids.shape != probs.shape or ids.size == 0:
            raise InvalidDistributionError(
                f"token_ids {ids.shape} and probs {probs.shape} must be equal"
                " non-empty 1-D vectors"
            )
        if np.any(ids < 0) or np.any(ids >= self.vocab_size):
            raise InvalidDistributionError(
                f"token ids must lie in [0, {self.vocab_size})"
            )
        if np.unique(ids).size != ids.size:
            raise InvalidDistributionError("token ids must be distinct")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InvalidDistributionError("Probabilities must be finite and >= 0")
        total = probs.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise InvalidDistributionError(
                f"Sparse probabilities sum to {total:.15g}, not 1 within {SUM_TOL}"
            )
        order = np.lexsort((ids, -probs))
        if np.any(order != np.arange(ids.size)):
            raise InvalidDistributionError(
                "Entries must be sorted by probability descending, ties by token id"
            )
        ids.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "token_ids", ids)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_entries(cls, entries, vocab_size: int) -> SparseTopK:
        """Build from unordered (token_id, prob) pairs, sorting them canonically."""
        entries = list(entries)
        ids = np.array([int(t) for t, _ in entries], dtype=np.int64)
        probs = np.array([float(p) for _, p in entries], dtype=np.float64)
        order = np.lexsort((ids, -probs))
        return cls(ids[order], probs[order], vocab_size)

    @property
    def k(self) -> int:
        return self.token_ids.size

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(int(t), float(p)) for t, p in zip(self.token_ids, self.probs)]

    def prob_of(self, token_id: int) -> float:
        """Probability of `token_id`, zero when it is outside the top-K."""
        hit = np.flatnonzero(self.token_ids == token_id)
        if hit.size == 0:
            return 0.0
        return float(self.probs[hit[0]])

    def __contains__(self, token_id: int) -> bool:
        return bool(np.any(self.token_ids == token_id))


def _as_logits(logits) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidDistributionError(
            f"Expected a non-empty 1-D logit vector, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidDistributionError("Logits must all be finite")
    return arr


def _check_same_length(p: Distribution, q: Distribution):
    if len(p) != len(q):
        raise InvalidDistributionError(
            f"Distribution lengths differ: {len(p)} != {len(q)}"
        )


def softmax_temp(logits, temperature: float = 1.0) -> Distribution:
    """Softmax of `logits` at `temperature`.

    Parameters
    ----------
    logits : array_like
        Unnormalized log-scores, one per vocabulary entry.
    temperature : float
        T > 0 gives probabilities proportional to exp(l / T); T = 0 is greedy
        decoding, a one-hot at the argmax (lowest index on ties).

    Returns
    -------
    Distribution
    """
    arr = _as_logits(logits)
    if not temperature >= 0:
        raise InvalidDistributionError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0:
        probs = np.zeros_like(arr)
        # np.argmax returns the first maximal index
        probs[np.argmax(arr)] = 1.0
        return Distribution(probs)
    return Distribution(softmax(arr / temperature))


def top_k_sparsify(logits, k: int) -> SparseTopK:
    """Keep the `k` largest logits (lowest index on ties) and softmax over them."""
    arr = _as_logits(logits)
    if not 1 <= k <= arr.size:
        raise InvalidDistributionError(f"K must be in [1, {arr.size}], got {k}")
    # Stable sort on -logit keeps the lower index first among equal logits
    order = np.argsort(-arr, kind="stable")[:k]
    probs = softmax(arr[order])
    # Renormalized probabilities can collide after exp(); re-sort canonically
    resort = np.lexsort((order, -probs))
    return SparseTopK(order[resort], probs[resort], arr.size)


def densify(sparse: SparseTopK) -> Distribution:
    probs = np.zeros(sparse.vocab_size, dtype=np.float64)
    probs[sparse.token_ids] = sparse.probs
    return Distribution(probs)


def residual(p: Distribution, q: Distribution) -> Distribution:
    """Adjusted distribution norm(max(0, P - Q)) used after a rejection.

    Raises
    ------
    DegenerateResidualError
        If P - Q has no positive entry (P == Q exactly).
    """
    _check_same_length(p, q)
    diff = np.maximum(p.probs - q.probs, 0.0)
    mass = diff.sum()
    if not mass > 0:
        raise DegenerateResidualError("Residual max(0, P - Q) has zero mass")
    return Distribution(diff / mass)


def analytic_alpha(p: Distribution, q: Distribution) -> float:
    """Acceptance rate sum_x q(x) min(1, p(x)/q(x)), computed as sum_x min(p, q)."""
    _check_same_length(p, q)
    return float(np.minimum(p.probs, q.probs).sum())


def alpha_topk(p: Distribution, drafter_logits, k: int) -> float:
    """Acceptance rate of a top-K sparsified drafter against the target `p`."""
    return analytic_alpha(p, densify(top_k_sparsify(drafter_logits, k)))


def tv_distance(p1: Distribution, p2: Distribution) -> float:
    """Total variation distance 0.5 * sum |p1 - p2|."""
    _check_same_length(p1, p2)
    return 0.5 * float(np.abs(p1.probs - p2.probs).sum())


def sample(dist: Union[Distribution, SparseTopK], rng: np.random.Generator) -> int:
    """Draw one token by inverse-CDF sampling over the stored entries.

    Consumes exactly one uniform from `rng`. The returned token always has
    positive probability.
    """
    return sample_at(dist, rng.random())


def sample_at(dist: Union[Distribution, SparseTopK], u: float) -> int:
    """Inverse-CDF lookup of the uniform `u` in [0, 1), entries in storage order."""
    probs = dist.probs
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= probs.size:
        # u landed past a total mass that rounded below 1
        idx = int(np.flatnonzero(probs > 0)[-1])
    if isinstance(dist, SparseTopK):
        return int(dist.token_ids[idx])
    return idx
