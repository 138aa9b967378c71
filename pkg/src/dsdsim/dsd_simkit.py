"""
Synthetic draft/target model pairs and the Monte Carlo experiment harness.

A synthetic pair is two Gaussian logit tables over a shared vocabulary; the
drafter mixes the target's logits with independent noise,
    drafter = lambda * target + (1 - lambda) * noise,
so `overlap_lambda` dials the acceptance rate between "unrelated" (0) and
"identical" (1). Tables are context-free ("static") or indexed by the
previous token ("markov").
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence, Union

import numpy as np

from dsdsim import dsd_planner
from dsdsim.dsd_dist import (
    Distribution,
    alpha_topk,
    softmax_temp,
    tv_distance,
)
from dsdsim.dsd_specdec import (
    AcceptRule,
    accept_decision,
    draft_round,
    run_episode,
    verify_round,
    visible_context,
)
from dsdsim.dsd_transport import ChannelConfig, latency_params, round_latency

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
# SplitMix64 increment and finalizer multipliers
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Estimated acceptance rates are clipped into [ALPHA_CLIP, 1 - ALPHA_CLIP]
ALPHA_CLIP = 1e-6


class PairKind(str, enum.Enum):
    STATIC = "static"
    MARKOV = "markov"


@dataclass(frozen=True)
class SyntheticPairSpec:
    """Recipe for a reproducible draft/target model pair.

    Attributes
    ----------
    vocab_size : int
        Shared vocabulary size, >= 2.
    kind : PairKind
        "static" (context-free logits) or "markov" (logits depend on the
        previous token).
    overlap_lambda : float
        Logit-space mixing weight of the target in the drafter, in [0, 1].
    target_temp : float
        Sampling temperature of the target model, >= 0.
    seed : int
        64-bit seed of the logit tables.
    logit_scale : float
        Standard deviation of the Gaussian logits; larger is peakier.
    """

    vocab_size: int = 32
    kind: PairKind = PairKind.STATIC
    overlap_lambda: float = 0.5
    target_temp: float = 1.0
    seed: int = 0
    logit_scale: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PairKind(self.kind))
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not 0 <= self.overlap_lambda <= 1:
            raise ValueError(
                f"overlap_lambda must lie in [0, 1], got {self.overlap_lambda}"
            )
        if not self.target_temp >= 0:
            raise ValueError(f"target_temp must be >= 0, got {self.target_temp}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not (self.logit_scale > 0 and math.isfinite(self.logit_scale)):
            raise ValueError(f"logit_scale must be > 0, got {self.logit_scale}")

    @classmethod
    def from_dict(cls, params: dict) -> SyntheticPairSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(params) - known
        if unknown:
            raise ValueError(f"Unknown SyntheticPairSpec keys: {sorted(unknown)}")
        return cls(**params)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass(frozen=True, eq=False)
class StaticLogitModel:
    """Context-free model: the same logit vector at every step."""

    logits: np.ndarray
    context_window: int = 0

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[-1]

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        return self.logits


@dataclass(frozen=True, eq=False)
class MarkovLogitModel:
    """First-order model: row `t` of `table` follows token t.

    An empty context reads row 0.
    """

    table: np.ndarray
    context_window: int = 1

    @property
    def vocab_size(self) -> int:
        return self.table.shape[-1]

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        row = context[-1] if len(context) > 0 else 0
        return self.table[row]


LogitModel = Union[StaticLogitModel, MarkovLogitModel]


def make_pair(spec: SyntheticPairSpec) -> tuple[LogitModel, LogitModel]:
    """Build the (drafter, target) pair described by `spec`.

    The target logits and the drafter's independent noise logits are drawn
    from one seeded PCG64 stream, so the pair depends on `spec` alone.
    """
    V = spec.vocab_size
    shape = (V,) if spec.kind is PairKind.STATIC else (V, V)
    rng = np.random.default_rng(spec.seed)
    target = spec.logit_scale * rng.standard_normal(shape)
    noise = spec.logit_scale * rng.standard_normal(shape)
    lam = spec.overlap_lambda
    drafter = lam * target + (1.0 - lam) * noise
    for arr in (target, drafter):
        arr.setflags(write=False)

    if spec.kind is PairKind.STATIC:
        return StaticLogitModel(drafter), StaticLogitModel(target)
    return MarkovLogitModel(drafter), MarkovLogitModel(target)


def derive_seed(seed: int, index: int) -> int:
    """Per-replication seed: SplitMix64 finalizer applied to seed XOR index."""
    z = (seed ^ index) & MASK64
    z = (z + _GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def accept_always(p: float, q: float, u: float) -> bool:
    """A broken verifier that accepts every draft (negative control only)."""
    return True


@dataclass(frozen=True)
class Metrics:
    """Aggregate results of a Monte Carlo run.

    Attributes
    ----------
    empirical_alpha : tuple[float, ...]
        Acceptance frequency at each draft position (NaN where a position was
        never reached).
    alpha_hat : float
        Acceptances over verification attempts, pooled over positions.
    mean_tokens_per_round : float
    simulated_wall_time : float
        rounds * round latency, in seconds.
    throughput : float
        Tokens per simulated second.
    measured_speedup : float
        Throughput relative to the standalone LLM (1 / T_LLM tokens/s).
    tv_next_token : float
        TV distance between the pooled law of the first emitted token and the
        target law pooled over the same round contexts.
    rounds, total_tokens : int
    gamma, k : int
    """

    empirical_alpha: tuple[float, ...]
    alpha_hat: float
    mean_tokens_per_round: float
    simulated_wall_time: float
    throughput: float
    measured_speedup: float
    tv_next_token: float
    rounds: int
    total_tokens: int
    gamma: int
    k: int

    def to_dict(self) -> dict:
        d = asdict(self)
        # NaN is not valid JSON
        d["empirical_alpha"] = [
            None if math.isnan(a) else a for a in self.empirical_alpha
        ]
        return d


@dataclass
class _Tally:
    accepts: np.ndarray
    attempts: np.ndarray
    first_counts: np.ndarray
    target_mass: np.ndarray
    rounds: int = 0
    tokens: int = 0


def _run_replication(
    slm: LogitModel,
    llm: LogitModel,
    spec: SyntheticPairSpec,
    gamma: int,
    k: int,
    n_rounds: int,
    seed: int,
    accept_rule: AcceptRule,
) -> _Tally:
    V = spec.vocab_size
    tally = _Tally(
        accepts=np.zeros(gamma, dtype=np.int64),
        attempts=np.zeros(gamma, dtype=np.int64),
        first_counts=np.zeros(V, dtype=np.int64),
        target_mass=np.zeros(V, dtype=np.float64),
    )
    rng = np.random.default_rng(seed)
    traces = run_episode(
        slm, llm, [], gamma, k, spec.target_temp, n_rounds, rng, accept_rule
    )

    context: list[int] = []
    for trace in traces:
        logits = llm.next_logits(visible_context(context, llm.context_window))
        tally.target_mass += softmax_temp(logits, spec.target_temp).probs
        flags = trace.accept_flags
        tally.attempts[: len(flags)] += 1
        tally.accepts[: len(flags)] += np.asarray(flags, dtype=np.int64)
        emitted = trace.outcome.emitted_tokens
        tally.first_counts[emitted[0]] += 1
        tally.rounds += 1
        tally.tokens += len(emitted)
        context = visible_context(context + list(emitted), llm.context_window)
    return tally


def _split_rounds(n_rounds: int, n_replications: int) -> list[int]:
    base, extra = divmod(n_rounds, n_replications)
    return [base + (i < extra) for i in range(n_replications)]


def monte_carlo(
    spec: SyntheticPairSpec,
    gamma: int,
    k: int,
    channel: ChannelConfig,
    n_rounds: int,
    seed: int,
    n_replications: int = 1,
    max_workers: Optional[int] = None,
    accept_rule: AcceptRule = accept_decision,
) -> Metrics:
    """Simulate `n_rounds` draft-verify rounds of DSD over `channel`.

    Parameters
    ----------
    spec : SyntheticPairSpec
        Draft/target pair to simulate.
    gamma, k : int
        Draft length and top-K size.
    channel : ChannelConfig
        Link and compute timing; each round costs
        gamma * (T_SLM + T_V(k)) + T_LLM seconds.
    n_rounds : int
        Total rounds, split evenly over the replications.
    seed : int
        Master seed; replication i runs on derive_seed(seed, i).
    n_replications : int
        Independent episodes, each starting from an empty context.
    max_workers : int, optional
        Run replications on a thread pool of this size. Results do not depend
        on it.
    accept_rule : callable, optional
        Verifier acceptance rule, replaced only for negative controls.

    Returns
    -------
    Metrics
    """
    if n_rounds < 1:
        raise ValueError(f"n_rounds must be >= 1, got {n_rounds}")
    if not 1 <= n_replications <= n_rounds:
        raise ValueError(
            f"n_replications must be in [1, n_rounds={n_rounds}], got {n_replications}"
        )
    if k > spec.vocab_size:
        raise ValueError(f"k={k} exceeds the vocabulary size {spec.vocab_size}")
    t_round = round_latency(channel, gamma, k)
    slm, llm = make_pair(spec)

    jobs = [
        (slm, llm, spec, gamma, k, rounds, derive_seed(seed, i), accept_rule)
        for i, rounds in enumerate(_split_rounds(n_rounds, n_replications))
    ]
    if max_workers is not None and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            tallies = list(pool.map(lambda job: _run_replication(*job), jobs))
    else:
        tallies = [_run_replication(*job) for job in jobs]

    # Aggregate in replication order so the sums are schedule-independent
    accepts = sum(t.accepts for t in tallies)
    attempts = sum(t.attempts for t in tallies)
    first_counts = sum(t.first_counts for t in tallies)
    target_mass = sum(t.target_mass for t in tallies)
    rounds = sum(t.rounds for t in tallies)
    total_tokens = sum(t.tokens for t in tallies)

    with np.errstate(invalid="ignore", divide="ignore"):
        empirical_alpha = accepts / attempts
    alpha_hat = float(accepts.sum() / attempts.sum())
    empirical_law = Distribution(first_counts / rounds)
    target_law = Distribution(target_mass / target_mass.sum())

    wall_time = rounds * t_round
    throughput = total_tokens / wall_time
    metrics = Metrics(
        empirical_alpha=tuple(float(a) for a in empirical_alpha),
        alpha_hat=alpha_hat,
        mean_tokens_per_round=total_tokens / rounds,
        simulated_wall_time=wall_time,
        throughput=throughput,
        measured_speedup=throughput * channel.t_llm,
        tv_next_token=tv_distance(empirical_law, target_law),
        rounds=rounds,
        total_tokens=total_tokens,
        gamma=gamma,
        k=k,
    )
    logger.info(
        f"Simulated {rounds} rounds (gamma={gamma}, K={k}): alpha_hat={alpha_hat:.4f},"
        f" speedup={metrics.measured_speedup:.4f}"
    )
    return metrics


def _clip_alpha(alpha: float, k: int) -> float:
    clipped = min(max(alpha, ALPHA_CLIP), 1.0 - ALPHA_CLIP)
    if clipped != alpha:
        warnings.warn(
            f"Acceptance rate {alpha} at K={k} clipped to {clipped} for planning"
        )
    return clipped


def analytic_alpha_k(spec: SyntheticPairSpec, k: int) -> float:
    """Acceptance rate of the top-K drafter against the target.

    Markov pairs average the per-context rates over the previous token
    uniformly, which only approximates the stationary rate.
    """
    slm, llm = make_pair(spec)
    if spec.kind is PairKind.STATIC:
        contexts = [[]]
    else:
        contexts = [[t] for t in range(spec.vocab_size)]
    rates = [
        alpha_topk(
            softmax_temp(llm.next_logits(ctx), spec.target_temp),
            slm.next_logits(ctx),
            k,
        )
        for ctx in contexts
    ]
    return float(np.mean(rates))


@dataclass(frozen=True)
class KPlanRow:
    k: int
    b: float
    L: float
    alpha: float
    gamma_star: int
    mode: dsd_planner.Mode
    s_star: float


def k_plan(
    alpha: float,
    ks: Sequence[int],
    channel: ChannelConfig,
    gamma_max: Optional[int] = None,
) -> list[KPlanRow]:
    """Plan every K for an assumed acceptance rate, without simulating."""
    rows = []
    for k in sorted(set(ks)):
        lp = latency_params(channel, k)
        plan = dsd_planner.cap_gamma(dsd_planner.as2(alpha, lp.b, lp.c), gamma_max)
        rows.append(
            KPlanRow(k, lp.b, lp.L, alpha, plan.gamma_star, plan.mode, plan.s_star)
        )
    return rows


@dataclass(frozen=True)
class KSweepRow:
    """One (K, gamma) cell of a top-K sweep."""

    k: int
    gamma: int
    alpha_k: float
    b: float
    L: float
    gamma_star: int
    mode: dsd_planner.Mode
    predicted_s: float
    measured_s: float
    metrics: Metrics


def k_sweep(
    spec: SyntheticPairSpec,
    ks: Sequence[int],
    channel: ChannelConfig,
    n_rounds: int,
    seed: int = 0,
    gammas: Union[str, Sequence[int]] = "auto",
    pilot_rounds: Optional[int] = None,
    analytic: bool = False,
    gamma_max: Optional[int] = None,
) -> list[KSweepRow]:
    """Measure alpha_K, plan gamma and simulate for every K.

    Parameters
    ----------
    spec : SyntheticPairSpec
    ks : Sequence[int]
        Top-K sizes to sweep.
    channel : ChannelConfig
        Sets L(K) through `latency_params`.
    n_rounds : int
        Rounds per simulated cell.
    seed : int
        Master seed; per-K pilot and simulation seeds are derived from it.
    gammas : "auto" or Sequence[int]
        "auto" simulates gamma_star from `as2(alpha_K, b(K), c)`; a list
        simulates each listed draft length.
    pilot_rounds : int, optional
        Rounds of the gamma=1 pilot that estimates alpha_K (default n_rounds).
    analytic : bool
        Take alpha_K from `analytic_alpha_k` instead of a pilot run.
    gamma_max : int, optional
        Cap on the planned gamma_star.

    Returns
    -------
    list[KSweepRow]
        Sorted by (K, gamma).
    """
    if isinstance(gammas, str) and gammas != "auto":
        raise ValueError(f"gammas must be 'auto' or a list, got {gammas!r}")
    pilot_rounds = pilot_rounds or n_rounds
    rows = []
    for i, k in enumerate(sorted(set(ks))):
        if analytic:
            alpha_k = analytic_alpha_k(spec, k)
        else:
            pilot = monte_carlo(
                spec, 1, k, channel, pilot_rounds, derive_seed(seed, 2 * i)
            )
            alpha_k = pilot.alpha_hat
        alpha_k = _clip_alpha(alpha_k, k)
        lp = latency_params(channel, k)
        plan = dsd_planner.cap_gamma(dsd_planner.as2(alpha_k, lp.b, lp.c), gamma_max)
        gamma_star = plan.gamma_star

        cell_gammas = [gamma_star] if gammas == "auto" else sorted(set(gammas))
        for gamma in cell_gammas:
            metrics = monte_carlo(
                spec, gamma, k, channel, n_rounds, derive_seed(seed, 2 * i + 1)
            )
            row = KSweepRow(
                k=k,
                gamma=gamma,
                alpha_k=alpha_k,
                b=lp.b,
                L=lp.L,
                gamma_star=gamma_star,
                mode=plan.mode,
                predicted_s=dsd_planner.speedup(alpha_k, gamma, lp.L),
                measured_s=metrics.measured_speedup,
                metrics=metrics,
            )
            logger.debug(f"K-sweep row: {row}")
            rows.append(row)
    logger.info(f"K sweep finished: {len(rows)} cells")
    return rows


@dataclass(frozen=True)
class EquivalenceReport:
    """Distance between the emitted-token law and the target distribution."""

    vocab_size: int
    gamma: int
    k: int
    n_samples: int
    seed: int
    target_temp: float
    tv: float
    threshold: float
    passed: bool
    empirical: tuple[float, ...]
    target: tuple[float, ...]

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict
        return d


def equivalence_report(
    spec: SyntheticPairSpec,
    gamma: int,
    k: int,
    n_samples: int,
    seed: int,
    accept_rule: Optional[AcceptRule] = None,
    prefix: Sequence[int] = (),
) -> EquivalenceReport:
    """Check that DSD emits tokens with the target model's law.

    Runs `n_samples` independent single rounds from the fixed context
    `prefix` and compares the first emitted token's frequencies with the
    target distribution. PASS iff TV <= 3 * sqrt(|V| / n_samples). At
    target_temp = 0 the target is one-hot and PASS instead requires every
    emitted token to be the target argmax.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    accept_rule = accept_rule or accept_decision
    slm, llm = make_pair(spec)
    target = softmax_temp(
        llm.next_logits(visible_context(prefix, llm.context_window)), spec.target_temp
    )

    rng = np.random.default_rng(seed)
    counts = np.zeros(spec.vocab_size, dtype=np.int64)
    for _ in range(n_samples):
        packet = draft_round(slm, prefix, gamma, k, rng)
        outcome = verify_round(
            llm, prefix, packet, spec.target_temp, rng, accept_rule=accept_rule
        )
        counts[outcome.emitted_tokens[0]] += 1

    empirical = Distribution(counts / n_samples)
    tv = tv_distance(empirical, target)
    threshold = 3.0 * math.sqrt(spec.vocab_size / n_samples)
    if spec.target_temp == 0:
        warnings.warn(
            "target_temp=0 makes the target one-hot; checking argmax agreement"
            " instead of the TV bound"
        )
        passed = bool(counts[np.argmax(target.probs)] == n_samples)
    else:
        passed = tv <= threshold
    report = EquivalenceReport(
        vocab_size=spec.vocab_size,
        gamma=gamma,
        k=k,
        n_samples=n_samples,
        seed=seed,
        target_temp=spec.target_temp,
        tv=tv,
        threshold=threshold,
        passed=passed,
        empirical=tuple(empirical.probs.tolist()),
        target=tuple(target.probs.tolist()),
    )
    logger.info(f"Equivalence {report.verdict}: TV={tv:.5f} (threshold {threshold:.5f})")
    return report
