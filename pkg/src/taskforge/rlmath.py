"""Training-objective arithmetic: group-normalized advantages, probability
ratios, the clipped surrogate, and the low-variance KL estimator.

These are pure evaluations over supplied rewards and log-probabilities; no
parameters are updated here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_EPS_STD = 1e-6
DEFAULT_EPS_LOW = 0.28
DEFAULT_EPS_HIGH = 0.20
DEFAULT_KL_COEF = 0.01


@dataclass(frozen=True)
class GroupRewards:
    rewards: tuple

    @property
    def g(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True)
class TokenLogProbs:
    """Per-token log-probs for one sampled output under the current, old, and
    reference distributions."""
    current: tuple
    old: tuple
    reference: tuple

    def __post_init__(self):
        if not (len(self.current) == len(self.old) == len(self.reference)):
            raise ValueError("log-prob sequences must share a length")

    def __len__(self) -> int:
        return len(self.current)


def group_advantages(rewards, eps_std: float = DEFAULT_EPS_STD) -> list:
    """(R_i - mean) / max(std, eps) with population std; an effectively
    zero-variance group yields all-zero advantages."""
    if isinstance(rewards, GroupRewards):
        rewards = rewards.rewards
    vals = [float(r) for r in rewards]
    g = len(vals)
    if g == 0:
        raise ValueError("empty reward group")
    mean = sum(vals) / g
    var = sum((v - mean) ** 2 for v in vals) / g
    std = math.sqrt(var)
    if std < eps_std:
        return [0.0] * g
    return [(v - mean) / std for v in vals]


def token_ratio(logp_new: float, logp_old: float) -> float:
    return math.exp(logp_new - logp_old)


def clipped_term(ratio: float, advantage: float,
                 eps_low: float = DEFAULT_EPS_LOW,
                 eps_high: float = DEFAULT_EPS_HIGH) -> float:
    clipped = min(max(ratio, 1.0 - eps_low), 1.0 + eps_high)
    return min(ratio * advantage, clipped * advantage)


def kl_low_var(logp_current: float, logp_ref: float) -> float:
    """exp(d) - d - 1 for d = ref - current; nonnegative, zero only at d=0."""
    d = logp_ref - logp_current
    return math.exp(d) - d - 1.0


def objective_estimate(outputs, advantages, beta: float = DEFAULT_KL_COEF,
                       eps_low: float = DEFAULT_EPS_LOW,
                       eps_high: float = DEFAULT_EPS_HIGH) -> float:
    """Token-mean of clipped surrogate minus beta * KL over a whole group.

    ``outputs`` is a sequence of TokenLogProbs; ``advantages`` holds one value
    per output, shared across its tokens."""
    if len(outputs) != len(advantages):
        raise ValueError("one advantage per output required")
    total_tokens = sum(len(o) for o in outputs)
    if total_tokens == 0:
        raise ValueError("no tokens in group")
    acc = 0.0
    for out, adv in zip(outputs, advantages):
        for lp_cur, lp_old, lp_ref in zip(out.current, out.old, out.reference):
            ratio = token_ratio(lp_cur, lp_old)
            acc += clipped_term(ratio, adv, eps_low, eps_high)
            acc -= beta * kl_low_var(lp_cur, lp_ref)
    return acc / total_tokens
