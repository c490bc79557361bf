"""Similarity mathematics: per-line normalized edit similarity and the
order-tolerant fragment similarity with positional reward decay."""

from __future__ import annotations

from dataclasses import dataclass, field


class EmptyFragmentError(ValueError):
    """Raised when fragment similarity is asked about an empty fragment."""


@dataclass(frozen=True)
class SimilarityParams:
    """Tunable knobs of the similarity pipeline.

    r            -- positional reward factor: a statement matched at offset
                    d from its expected position contributes sim * r**d.
    t            -- decision threshold for patch-applied similarity tests.
    ks_threshold -- low-recall gate used while searching key statements and
                    expanding context boundaries.
    """

    r: float = 0.95
    t: float = 0.40
    ks_threshold: float = 0.25

    def __post_init__(self) -> None:
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"r must be in [0, 1], got {self.r}")
        if not 0.0 < self.t < 1.0:
            raise ValueError(f"t must be in (0, 1), got {self.t}")
        if not 0.0 < self.ks_threshold <= self.t:
            raise ValueError(
                f"ks_threshold must be in (0, t], got {self.ks_threshold} (t={self.t})"
            )


@dataclass(frozen=True)
class FragmentMatch:
    """Result of matching a source fragment against a target fragment.

    alignment holds one (source index, target index, line similarity) entry
    per source statement; score is the reward-weighted mean over them.
    """

    score: float
    alignment: list[tuple[int, int, float]] = field(default_factory=list)


def levenshtein(a: str, b: str) -> int:
    """Character-level edit distance (insert/delete/substitute, unit cost)."""
    if a == b:
        return 0
    # Trim common prefix/suffix; cheap and frequent on near-identical lines.
    lo = 0
    hi_a, hi_b = len(a), len(b)
    while lo < hi_a and lo < hi_b and a[lo] == b[lo]:
        lo += 1
    while hi_a > lo and hi_b > lo and a[hi_a - 1] == b[hi_b - 1]:
        hi_a -= 1
        hi_b -= 1
    a, b = a[lo:hi_a], b[lo:hi_b]
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        append = cur.append
        left = i
        for j, cb in enumerate(b, 1):
            if ca == cb:
                left = prev[j - 1]
            else:
                left = min(prev[j - 1], prev[j], left) + 1
            append(left)
        prev = cur
    return prev[-1]


def strsim(a: str, b: str) -> float:
    """Normalized edit similarity: 1 - distance / max length, in [0, 1]."""
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def fragment_similarity(
    source: list[str], target: list[str], params: SimilarityParams
) -> FragmentMatch:
    """Order-tolerant similarity of two code fragments.

    Every source statement is matched to its most similar target statement
    (ties broken by minimal index offset, then by smaller target index); the
    per-line similarity is discounted by r**|i - j| and the result averaged
    over the source statements. Asymmetric by construction: the first
    argument is the fragment being explained.
    """
    if not source:
        raise EmptyFragmentError("source fragment is empty")
    if not target:
        raise EmptyFragmentError("target fragment is empty")
    r = params.r
    alignment: list[tuple[int, int, float]] = []
    total = 0.0
    for i, s_line in enumerate(source):
        best_j = 0
        best_sim = strsim(s_line, target[0])
        best_off = abs(i)
        for j in range(1, len(target)):
            sim = strsim(s_line, target[j])
            off = abs(i - j)
            if sim > best_sim or (sim == best_sim and off < best_off):
                best_j, best_sim, best_off = j, sim, off
        total += best_sim * r ** abs(i - best_j)
        alignment.append((i, best_j, best_sim))
    return FragmentMatch(score=total / len(source), alignment=alignment)


def reward_sweep(
    pairs: list[tuple[list[str], list[str]]],
    r_values: list[float],
    params: SimilarityParams | None = None,
) -> list[tuple[float, list[float]]]:
    """Score every fragment pair under each reward factor.

    Returns one (r, scores) row per r value, scores sorted ascending so they
    can be turned into a CDF directly.
    """
    if not pairs:
        raise ValueError("no fragment pairs given")
    base = params or SimilarityParams()
    table: list[tuple[float, list[float]]] = []
    for r in r_values:
        swept = SimilarityParams(r=r, t=base.t, ks_threshold=base.ks_threshold)
        scores = sorted(
            fragment_similarity(s, t, swept).score for s, t in pairs
        )
        table.append((r, scores))
    return table
