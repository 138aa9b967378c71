"""
The draft-verify protocol of distributed speculative decoding.

The device drafts `gamma` tokens from a top-K sparsified small model and ships
them (with their sparse distributions) to the edge. The edge verifier accepts
each draft with probability min(1, p/q), resamples from the residual on the
first rejection, or adds a bonus token when every draft is accepted.

Uniform draws are consumed in a fixed order so traces can be audited:
one per drafted token while drafting; then one per verified position, and a
single final draw for the corrective or bonus token.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from dsdsim.dsd_dist import (
    DegenerateResidualError,
    Distribution,
    SparseTopK,
    densify,
    residual,
    sample,
    sample_at,
    softmax_temp,
    top_k_sparsify,
)

logger = logging.getLogger(__name__)

AcceptRule = Callable[[float, float, float], bool]


@runtime_checkable
class TokenModel(Protocol):
    """A language model reduced to a deterministic next-token logit function.

    `context_window` is how many trailing context tokens `next_logits` reads
    (None for the whole context, 0 for a context-free model).
    """

    vocab_size: int
    context_window: Optional[int]

    def next_logits(self, context: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class DraftPacket:
    """Uplink payload: draft tokens and their top-K distributions."""

    draft_tokens: tuple[int, ...]
    dists: tuple[SparseTopK, ...]
    gamma: int
    k: int

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if len(self.draft_tokens) != self.gamma or len(self.dists) != self.gamma:
            raise ValueError(
                f"Packet holds {len(self.draft_tokens)} tokens and"
                f" {len(self.dists)} distributions, expected gamma={self.gamma}"
            )
        vocab_sizes = {d.vocab_size for d in self.dists}
        if len(vocab_sizes) != 1:
            raise ValueError(f"Mixed vocabulary sizes in packet: {vocab_sizes}")
        for i, (token, dist) in enumerate(zip(self.draft_tokens, self.dists)):
            if dist.k != self.k:
                raise ValueError(f"Position {i} carries {dist.k} entries, k={self.k}")
            if not dist.prob_of(token) > 0:
                raise ValueError(
                    f"Draft token {token} at position {i} has no mass in its top-K distribution"
                )
        object.__setattr__(self, "draft_tokens", tuple(int(t) for t in self.draft_tokens))
        object.__setattr__(self, "dists", tuple(self.dists))

    @property
    def vocab_size(self) -> int:
        return self.dists[0].vocab_size


@dataclass(frozen=True)
class VerifyOutcome:
    """Result of verifying one packet.

    `emitted_tokens` is the accepted prefix followed by one corrective or
    bonus token; `position_j` is the 1-based position of that last token.
    """

    accepted_count: int
    emitted_tokens: tuple[int, ...]
    position_j: int
    bonus: bool

    def __post_init__(self):
        if len(self.emitted_tokens) != self.accepted_count + 1:
            raise ValueError(
                f"{len(self.emitted_tokens)} emitted tokens for"
                f" accepted_count={self.accepted_count}"
            )
        if self.position_j != self.accepted_count + 1:
            raise ValueError(
                f"position_j={self.position_j} must equal accepted_count + 1"
            )

    @property
    def final_token(self) -> int:
        return self.emitted_tokens[-1]

    @property
    def verdict(self) -> DownlinkVerdict:
        return DownlinkVerdict(self.position_j, self.final_token, self.accepted_count)


@dataclass(frozen=True)
class DownlinkVerdict:
    """What the edge sends back: the position j, x_j and the accepted count."""

    position_j: int
    token: int
    accepted_count: int

    def to_outcome(self, packet: DraftPacket) -> VerifyOutcome:
        """Rebuild the full outcome on the device from its own draft."""
        if not 0 <= self.accepted_count <= packet.gamma:
            raise ValueError(
                f"accepted_count={self.accepted_count} outside [0, {packet.gamma}]"
            )
        emitted = packet.draft_tokens[: self.accepted_count] + (self.token,)
        return VerifyOutcome(
            accepted_count=self.accepted_count,
            emitted_tokens=emitted,
            position_j=self.position_j,
            bonus=self.accepted_count == packet.gamma,
        )


@dataclass(frozen=True)
class RoundTrace:
    packet: DraftPacket
    outcome: VerifyOutcome
    accept_flags: tuple[bool, ...]
    uniforms: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        n_accepted = sum(self.accept_flags)
        if n_accepted != self.outcome.accepted_count or not all(
            self.accept_flags[:n_accepted]
        ):
            raise ValueError("accept flags disagree with the accepted count")


def visible_context(context: Sequence[int], window: Optional[int]) -> list[int]:
    """Trailing `window` tokens of `context` (all of it when window is None)."""
    if window is None:
        return list(context)
    if window == 0:
        return []
    return list(context[-window:])


def accept_decision(p: float, q: float, u: float) -> bool:
    """Accept a draft token with probability min(1, p/q).

    Parameters
    ----------
    p : float
        Target probability of the drafted token.
    q : float
        Drafter (sparse, renormalized) probability of the drafted token.
    u : float
        Uniform draw in [0, 1).
    """
    if not q > 0:
        raise ValueError(f"Drafter probability must be > 0, got q={q}")
    return p >= q or u < p / q


def emission_law(p: Distribution, q: Distribution) -> np.ndarray:
    """Exact law of the token emitted at one verified position.

    Sums the accepted-draft mass q(x) min(1, p(x)/q(x)) and the rejection
    mass spread over the residual norm(max(0, P - Q)). Equals `p.probs` up to
    rounding.
    """
    if len(p) != len(q):
        raise ValueError(f"Distribution lengths differ: {len(p)} != {len(q)}")
    accepted = np.minimum(p.probs, q.probs)
    reject_mass = 1.0 - accepted.sum()
    if reject_mass <= 0:
        return accepted
    try:
        adjusted = residual(p, q).probs
    except DegenerateResidualError:
        return accepted
    return accepted + reject_mass * adjusted


def draft_round(
    slm: TokenModel,
    prefix: Sequence[int],
    gamma: int,
    k: int,
    rng: np.random.Generator,
) -> DraftPacket:
    """Autoregressively draft `gamma` tokens from the top-K sparsified SLM."""
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    if not 1 <= k <= slm.vocab_size:
        raise ValueError(f"k must be in [1, {slm.vocab_size}], got {k}")

    context = list(prefix)
    tokens = []
    dists = []
    for _ in range(gamma):
        logits = slm.next_logits(visible_context(context, slm.context_window))
        sparse = top_k_sparsify(logits, k)
        token = sample(sparse, rng)
        tokens.append(token)
        dists.append(sparse)
        context.append(token)
    return DraftPacket(tuple(tokens), tuple(dists), gamma, k)


def _verify(
    llm: TokenModel,
    prefix: Sequence[int],
    packet: DraftPacket,
    target_temp: float,
    rng: np.random.Generator,
    accept_rule: AcceptRule = accept_decision,
) -> tuple[VerifyOutcome, tuple[bool, ...], tuple[float, ...]]:
    if packet.vocab_size != llm.vocab_size:
        raise ValueError(
            f"Packet vocabulary {packet.vocab_size} != target vocabulary {llm.vocab_size}"
        )
    context = list(prefix)
    flags = []
    uniforms = []

    def target_dist() -> Distribution:
        return softmax_temp(
            llm.next_logits(visible_context(context, llm.context_window)), target_temp
        )

    for token, sparse in zip(packet.draft_tokens, packet.dists):
        p_j = target_dist()
        u = rng.random()
        uniforms.append(u)
        accepted = accept_rule(p_j[token], sparse.prob_of(token), u)
        flags.append(accepted)
        if not accepted:
            # Resample the corrective token from norm(max(0, P_j - Y_j))
            adjusted = residual(p_j, densify(sparse))
            u_final = rng.random()
            uniforms.append(u_final)
            corrective = sample_at(adjusted, u_final)
            n_accepted = len(flags) - 1
            outcome = VerifyOutcome(
                accepted_count=n_accepted,
                emitted_tokens=packet.draft_tokens[:n_accepted] + (corrective,),
                position_j=n_accepted + 1,
                bonus=False,
            )
            return outcome, tuple(flags), tuple(uniforms)
        context.append(token)

    u_final = rng.random()
    uniforms.append(u_final)
    bonus_token = sample_at(target_dist(), u_final)
    outcome = VerifyOutcome(
        accepted_count=packet.gamma,
        emitted_tokens=packet.draft_tokens + (bonus_token,),
        position_j=packet.gamma + 1,
        bonus=True,
    )
    return outcome, tuple(flags), tuple(uniforms)


def verify_round(
    llm: TokenModel,
    prefix: Sequence[int],
    packet: DraftPacket,
    target_temp: float,
    rng: np.random.Generator,
    accept_rule: AcceptRule = accept_decision,
) -> VerifyOutcome:
    """Verify a draft packet against the target model.

    Parameters
    ----------
    llm : TokenModel
        Target model, sharing the drafter's vocabulary.
    prefix : Sequence[int]
        Context the draft was generated from.
    packet : DraftPacket
        Uplink payload from `draft_round` (or a decoded wire packet).
    target_temp : float
        Sampling temperature of the target (0 is greedy).
    rng : numpy.random.Generator
        Source of the acceptance uniforms and the final draw.
    accept_rule : callable, optional
        (p, q, u) -> bool; only replaced to build negative controls.

    Returns
    -------
    VerifyOutcome
    """
    outcome, _, _ = _verify(llm, prefix, packet, target_temp, rng, accept_rule)
    return outcome


def run_episode(
    slm: TokenModel,
    llm: TokenModel,
    prefix: Sequence[int],
    gamma: int,
    k: int,
    target_temp: float,
    n_rounds: int,
    rng: np.random.Generator,
    accept_rule: AcceptRule = accept_decision,
) -> list[RoundTrace]:
    """Repeat draft -> verify rounds, growing the shared context each round."""
    if slm.vocab_size != llm.vocab_size:
        raise ValueError(
            f"Models must share a vocabulary: {slm.vocab_size} != {llm.vocab_size}"
        )
    # Only the tail either model can read has to be carried between rounds
    windows = [slm.context_window, llm.context_window]
    keep = None if None in windows else max(windows)

    context = list(prefix)
    traces = []
    for i_round in range(n_rounds):
        packet = draft_round(slm, context, gamma, k, rng)
        outcome, flags, uniforms = _verify(
            llm, context, packet, target_temp, rng, accept_rule
        )
        traces.append(RoundTrace(packet, outcome, flags, uniforms))
        context.extend(outcome.emitted_tokens)
        if keep is not None:
            context = visible_context(context, keep)
        logger.debug(
            f"round {i_round}: accepted {outcome.accepted_count}/{gamma},"
            f" emitted {outcome.emitted_tokens}"
        )
    return traces
