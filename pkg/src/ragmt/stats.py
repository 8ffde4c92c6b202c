"""Native numeric and string metrics: translation edit rate, Shannon entropy,
and rank/linear correlations. Pure functions, no external services."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

from .errors import DataError

PROB_SUM_TOLERANCE = 1e-9

_PUNCT_RE = re.compile(r"([^\w\s])")


class MetricError(DataError, ValueError):
    pass


def tokenize_words(text: str) -> list[str]:
    """Whitespace split after detaching punctuation into standalone tokens."""
    return _PUNCT_RE.sub(r" \1 ", text).split()


# ---------------------------------------------------------------------------
# Translation edit rate
# ---------------------------------------------------------------------------


def edit_distance(reference: Sequence[str], hypothesis: Sequence[str]) -> int:
    """Word-level Levenshtein distance (unit-cost insert/delete/substitute)."""
    m, n = len(reference), len(hypothesis)
    if m == 0:
        return n
    if n == 0:
        return m
    prev = list(range(n + 1))
    for i in range(1, m + 1):
        cur = [i] + [0] * n
        ref_word = reference[i - 1]
        for j in range(1, n + 1):
            if ref_word == hypothesis[j - 1]:
                cur[j] = prev[j - 1]
            else:
                cur[j] = 1 + min(prev[j - 1], prev[j], cur[j - 1])
        prev = cur
    return prev[n]


def _occurs_in(block: tuple[str, ...], reference: Sequence[str]) -> bool:
    span = len(block)
    for start in range(len(reference) - span + 1):
        if tuple(reference[start : start + span]) == block:
            return True
    return False


def _block_moves(state: tuple[str, ...], reference: Sequence[str] | None = None):
    """All sequences reachable by moving one contiguous block to a new position.

    When `reference` is given, only blocks that exactly match a contiguous
    reference span are movable (the standard TER shift constraint).
    """
    n = len(state)
    for i in range(n):
        for j in range(i + 1, n + 1):
            block = state[i:j]
            if reference is not None and not _occurs_in(block, reference):
                continue
            rest = state[:i] + state[j:]
            for k in range(len(rest) + 1):
                if k == i:
                    continue
                yield rest[:k] + block + rest[k:]


def _greedy_shift_edits(reference: Sequence[str], hypothesis: Sequence[str]) -> int:
    """Greedy shift search: repeatedly apply the edit-distance-minimizing
    shift of a reference-matching block while it strictly lowers the DP
    distance; each applied shift costs one edit."""
    state = tuple(hypothesis)
    shifts = 0
    current = edit_distance(reference, state)
    while current > 0:
        best_ed = current
        best_state = None
        for candidate in _block_moves(state, reference):
            ed = edit_distance(reference, candidate)
            if ed < best_ed:
                best_ed = ed
                best_state = candidate
        if best_state is None:
            break
        state = best_state
        current = best_ed
        shifts += 1
    return shifts + current


def _edits_floor(reference: Sequence[str], hypothesis: Sequence[str]) -> int:
    """Lower bound on shift+edit cost: shifts preserve the hypothesis
    multiset, and any alignment matches at most the multiset overlap."""
    counts: dict[str, int] = {}
    for word in reference:
        counts[word] = counts.get(word, 0) + 1
    overlap = 0
    for word in hypothesis:
        if counts.get(word, 0) > 0:
            counts[word] -= 1
            overlap += 1
    return max(len(reference), len(hypothesis)) - overlap


def _optimal_shift_edits(reference: Sequence[str], hypothesis: Sequence[str]) -> int:
    """Exact minimum of (number of block shifts) + (DP edit distance), via
    breadth-first search over block-move states. Exponential in sequence
    length; callers bound the input size."""
    start = tuple(hypothesis)
    best = edit_distance(reference, start)
    floor = _edits_floor(reference, hypothesis)
    if best == floor:
        return best
    seen = {start}
    frontier = [start]
    depth = 0
    while frontier and depth + 1 < best:
        depth += 1
        next_frontier = []
        for state in frontier:
            for candidate in _block_moves(state):
                if candidate in seen:
                    continue
                seen.add(candidate)
                ed = edit_distance(reference, candidate)
                if depth + ed < best:
                    best = depth + ed
                    if best == floor:
                        return best
                next_frontier.append(candidate)
        frontier = next_frontier
    return best


# Above this hypothesis length the exact shift search is replaced by the
# greedy one; the block-move state space grows factorially.
EXACT_SHIFT_SEARCH_MAX_LEN = 8


def ter_edits(
    reference: Sequence[str], hypothesis: Sequence[str], *, shifts: bool = True
) -> int:
    if len(reference) == 0:
        raise MetricError("TER reference must be non-empty")
    if not shifts:
        return edit_distance(reference, hypothesis)
    if len(hypothesis) <= EXACT_SHIFT_SEARCH_MAX_LEN:
        return _optimal_shift_edits(reference, hypothesis)
    return _greedy_shift_edits(reference, hypothesis)


def ter(
    reference: Sequence[str], hypothesis: Sequence[str], *, shifts: bool = True
) -> float:
    """Translation edit rate in percent: 100 * (minimum edits) / len(reference).

    Edits are insertions, deletions, substitutions, and block shifts, all unit
    cost. Short hypotheses get the exact shift+edit minimum; longer ones fall
    back to greedy shift search. `shifts=False` gives plain edit distance.
    """
    return 100.0 * ter_edits(reference, hypothesis, shifts=shifts) / len(reference)


def ter_text(reference: str, hypothesis: str, *, shifts: bool = True) -> float:
    """TER between raw strings, using the shared word tokenizer."""
    return ter(tokenize_words(reference), tokenize_words(hypothesis), shifts=shifts)


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------


def validate_prob_vector(
    probabilities: Sequence[float], tolerance: float = PROB_SUM_TOLERANCE
) -> None:
    if any(p < 0 for p in probabilities):
        raise MetricError("probabilities must be non-negative")
    total = math.fsum(probabilities)
    if abs(total - 1.0) > tolerance:
        raise MetricError(f"probabilities sum to {total!r}, expected 1 within {tolerance}")


def shannon_entropy(probabilities: Sequence[float]) -> float:
    """Shannon entropy in nats, with 0 * ln(0) taken as 0."""
    validate_prob_vector(probabilities)
    return -math.fsum(p * math.log(p) for p in probabilities if p > 0.0)


# ---------------------------------------------------------------------------
# Correlations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Correlations:
    """Correlation triple; a coefficient is None when undefined (e.g. a
    constant input leaves Pearson's denominator at zero)."""

    pearson: float | None
    spearman: float | None
    kendall: float | None


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties assigned the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j + 2) / 2.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def _pearson(a: Sequence[float], b: Sequence[float]) -> float | None:
    n = len(a)
    mean_a = math.fsum(a) / n
    mean_b = math.fsum(b) / n
    dev_a = [x - mean_a for x in a]
    dev_b = [y - mean_b for y in b]
    var_a = math.fsum(d * d for d in dev_a)
    var_b = math.fsum(d * d for d in dev_b)
    if var_a == 0.0 or var_b == 0.0:
        return None
    cov = math.fsum(da * db for da, db in zip(dev_a, dev_b))
    return cov / math.sqrt(var_a * var_b)


def _kendall_tau_b(a: Sequence[float], b: Sequence[float]) -> float | None:
    n = len(a)
    concordant = discordant = 0
    ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = a[i] - a[j]
            db = b[i] - b[j]
            if da == 0 and db == 0:
                continue
            if da == 0:
                ties_a += 1
            elif db == 0:
                ties_b += 1
            elif (da > 0) == (db > 0):
                concordant += 1
            else:
                discordant += 1
    denom = math.sqrt(
        (concordant + discordant + ties_a) * (concordant + discordant + ties_b)
    )
    if denom == 0.0:
        return None
    return (concordant - discordant) / denom


def correlations(a: Sequence[float], b: Sequence[float]) -> Correlations:
    """Pearson r, Spearman rho (Pearson on average ranks), and Kendall tau-b."""
    if len(a) != len(b):
        raise MetricError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise MetricError("correlations need at least two points")
    return Correlations(
        pearson=_pearson(a, b),
        spearman=_pearson(average_ranks(a), average_ranks(b)),
        kendall=_kendall_tau_b(a, b),
    )
