"""Reward components: format, validity, difficulty, BLEU diversity, totals."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from . import seeding
from .imaging import ExecError, ExecLimits, hash_similarity, perceptual_hash
from .lang import ParseReport, tokenize
from .tasks import VqaTask, extract_fenced_blocks, grade_answer

DUPLICATE_HASH_THRESHOLD = 0.95
DEFAULT_CLUSTER_THRESHOLD = 0.25


@dataclass(frozen=True)
class RewardWeights:
    lam_format: float = 0.2
    lam_valid: float = 0.4
    lam_diff: float = 0.4
    lam_div: float = 0.3
    omega_format: float = 0.2
    omega_acc: float = 0.8


@dataclass
class ChallengerBreakdown:
    r_format: int = 0
    r_valid: int = 0
    r_diff: float = 0.0
    r_div: float = 0.0
    reasons: list = field(default_factory=list)

    def total(self, weights: RewardWeights) -> float:
        return challenger_total(self.r_format, self.r_valid, self.r_diff,
                                self.r_div, weights)


@dataclass
class AccuracyEstimate:
    correct_count: int
    k: int
    grades: list

    @property
    def acc(self) -> float:
        return self.correct_count / self.k


@dataclass
class ClusterAssignment:
    cluster_ids: list     # cluster id per element
    sizes: dict           # cluster id -> member count
    densities: list       # p_i = size(cluster of i) / G

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)


def challenger_format_reward(raw_output: str) -> int:
    """1 iff the output carries exactly one fenced code block whose body is
    comment-free. Reasoning text outside the fence is ignored."""
    blocks = extract_fenced_blocks(raw_output)
    if len(blocks) != 1:
        return 0
    if any(t.text == "#" for t in tokenize(blocks[0])):
        return 0
    return 1


def validity_reward(report: ParseReport, outputs, limits: ExecLimits,
                    format_ok: bool = True):
    """Gate on parse success, clean execution, side bounds, and no
    near-duplicate outputs (perceptual-hash similarity > 0.95).

    ``outputs`` is the value produced by ``execute_all``: a list of images on
    success or the ExecError it raised. Returns (0/1, reason codes)."""
    reasons = []
    if not format_ok:
        return 0, ["format-failed"]
    if not report.ok:
        return 0, ["parse"]
    if isinstance(outputs, ExecError):
        if outputs.category == "size-bounds":
            reasons.append("size-bounds")
        else:
            reasons.append(f"exec:{outputs.category}")
        return 0, reasons
    hashes = [perceptual_hash(img) for img in outputs]
    for i in range(len(hashes)):
        for j in range(i + 1, len(hashes)):
            if hash_similarity(hashes[i], hashes[j]) > DUPLICATE_HASH_THRESHOLD:
                reasons.append("duplicate-output")
                return 0, reasons
    return 1, reasons


def difficulty_reward(acc: float) -> float:
    """Peaks at acc = 0.5, linear falloff to 0 at both extremes."""
    return 1.0 - 2.0 * abs(acc - 0.5)


def program_difficulty(estimates) -> float:
    """Mean per-question difficulty reward for one program's questions."""
    accs = list(estimates)
    if not accs:
        raise ValueError("program_difficulty requires at least one estimate")
    return sum(difficulty_reward(e.acc) for e in accs) / len(accs)


def estimate_accuracy(task: VqaTask, solver, k: int, seed: int,
                      store=None) -> AccuracyEstimate:
    """Sample the solver k times on independent substreams and grade each
    answer. A policy failure counts as an incorrect sample."""
    from .policies import solver_context

    grades = []
    correct = 0
    for sample_idx in range(k):
        ctx = solver_context(task, seeding.derive_seed(seed, "acc", sample_idx),
                             store=store)
        try:
            resp = solver.generate(ctx)
            g = grade_answer(task, resp.text)
        except Exception:
            g = grade_answer(task, "")
        grades.append(g)
        correct += g.correct
    return AccuracyEstimate(correct, k, grades)


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_directional(cand, ref, max_n: int = 4) -> float:
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        total = sum(cand_counts.values())
        clipped = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        log_sum += math.log((clipped + 1) / (total + 1)) / max_n
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def bleu_similarity(a: str, b: str) -> float:
    """Symmetric token-level BLEU-4: uniform n-gram weights, add-one smoothed
    modified precisions, standard brevity penalty, averaged over both
    directions. Empty-vs-empty is 1, empty-vs-nonempty is 0."""
    ta = [t.text for t in tokenize(a)]
    tb = [t.text for t in tokenize(b)]
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    return 0.5 * (_bleu_directional(ta, tb) + _bleu_directional(tb, ta))


def cluster_by_bleu(sources, tau: float = DEFAULT_CLUSTER_THRESHOLD) -> ClusterAssignment:
    """Single-linkage components of the similarity graph with edges at
    pairwise BLEU >= tau."""
    g = len(sources)
    parent = list(range(g))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(g):
        for j in range(i + 1, g):
            if bleu_similarity(sources[i], sources[j]) >= tau:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri

    roots = [find(i) for i in range(g)]
    ids: dict = {}
    cluster_ids = []
    for r in roots:
        if r not in ids:
            ids[r] = len(ids)
        cluster_ids.append(ids[r])
    sizes = Counter(cluster_ids)
    densities = [sizes[c] / g for c in cluster_ids]
    return ClusterAssignment(cluster_ids, dict(sizes), densities)


def diversity_reward(densities) -> list:
    """Negative min-max-normalized redundancy densities in [-1, 0].

    When all densities are equal the observed range is degenerate; the
    theoretical bounds [1/G, 1] are substituted so an all-distinct batch maps
    to 0 and an all-identical batch to -1."""
    p = list(densities)
    g = len(p)
    if g == 0:
        return []
    if g == 1:
        return [0.0]
    lo, hi = min(p), max(p)
    if hi > lo:
        return [-(pi - lo) / (hi - lo) for pi in p]
    lo, hi = 1.0 / g, 1.0
    return [-(pi - lo) / (hi - lo) for pi in p]


def challenger_total(r_format: float, r_valid: float, r_diff: float,
                     r_div: float, weights: RewardWeights = RewardWeights()) -> float:
    return (weights.lam_format * r_format + weights.lam_valid * r_valid
            + weights.lam_diff * r_diff + weights.lam_div * r_div)


def solver_total(r_format: int, r_acc: int,
                 weights: RewardWeights = RewardWeights()) -> float:
    return weights.omega_format * r_format + weights.omega_acc * r_acc
