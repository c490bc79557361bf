"""Locate candidate clones of a patch region inside a target repository.

Keywords extracted from the patch context are grepped in the target; hits
that survive the comment/test/file-class/statement-kind filters become key
statements. Each key statement expands to a boundary-delimited candidate
context, contexts are kept when their fragment similarity to the patch
context passes the decision threshold, UP and DOWN contexts are paired, and
the statements between (or adjacent to) them become candidate code.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import gitio
from .gitio import GrepHit, RepoHandle
from .patchmodel import PatchContext, PatchHunk, Side
from .preprocess import (
    FileClass,
    NormalizedLine,
    StatementKind,
    classify_file,
    extract_statements,
)
from .simcore import SimilarityParams, fragment_similarity, strsim

log = logging.getLogger(__name__)

# Path segments marking test code, compared case-insensitively.
TEST_PATH_SEGMENTS = frozenset({"test", "tests", "testing", "testdata", "spec", "bench"})

DEFAULT_MAX_CANDIDATES = 10


class StatementCache:
    """Memoized per-file statement extraction for one (repository, revision).

    Entries are installed with a single atomic dict assignment so concurrent
    tasks sharing a cache can at worst duplicate work, never see half state.
    """

    def __init__(self, repo: RepoHandle, rev: str | None = None):
        self.repo = repo
        self.rev = rev
        self._entries: dict[str, tuple[list[NormalizedLine], dict[int, int]]] = {}

    def _entry(self, path: str) -> tuple[list[NormalizedLine], dict[int, int]]:
        entry = self._entries.get(path)
        if entry is None:
            try:
                lines = gitio.read_file_at(self.repo, self.rev, path)
            except gitio.NotFoundError:
                lines = []
            stmts = extract_statements(lines, path, classify_file(path))
            entry = (stmts, {s.line_no: i for i, s in enumerate(stmts)})
            self._entries[path] = entry
        return entry

    def statements(self, path: str) -> list[NormalizedLine]:
        return self._entry(path)[0]

    def index_by_line(self, path: str) -> dict[int, int]:
        return self._entry(path)[1]

    def between(self, path: str, lo: int, hi: int) -> list[NormalizedLine]:
        """Meaningful statements with lo <= line_no <= hi."""
        return [s for s in self.statements(path) if lo <= s.line_no <= hi]


@dataclass(frozen=True)
class KeyStatementMatch:
    """A grep hit that survived all filters, scored against its patch statement."""

    hit: GrepHit
    stmt: NormalizedLine
    sim: float
    side: Side


@dataclass
class CandidateContext:
    """A target-side region judged similar enough to one patch context."""

    path: str
    side: Side
    ss_line: int
    es_line: int
    stmts: list[NormalizedLine]
    ctx_sim: float


@dataclass
class CandidateCode:
    """Target statements to be judged against the patch's dp/ap."""

    path: str
    stmts: list[NormalizedLine]
    span: tuple[int, int]
    paired_up: CandidateContext | None = None
    paired_down: CandidateContext | None = None

    @property
    def norms(self) -> list[str]:
        return [s.norm for s in self.stmts]


def is_test_path(path: str) -> bool:
    return any(seg.lower() in TEST_PATH_SEGMENTS for seg in path.split("/"))


def find_key_statements(
    target: RepoHandle,
    ctx: PatchContext,
    patch_file_class: FileClass,
    params: SimilarityParams,
    cache: StatementCache | None = None,
) -> list[KeyStatementMatch]:
    """Grep every context keyword in the target and keep plausible hits.

    A hit survives when it is a meaningful statement (not a comment), not in
    test code, in a file of the same class as the patched file, and of the
    same statement kind as the keyword's source statement (OTHER never
    filters); survivors need strsim >= ks_threshold against that source
    statement. Sorted by descending similarity.
    """
    if cache is None:
        cache = StatementCache(target)
    keywords = ctx.keywords
    if not keywords:
        log.info("no keywords in %s context; nothing to search", ctx.side.value)
        return []
    best: dict[tuple[str, int], KeyStatementMatch] = {}
    for kw in keywords:
        for hit in gitio.grep_repo(target, kw.keyword, cache.rev):
            if is_test_path(hit.path):
                continue
            if classify_file(hit.path) != patch_file_class:
                continue
            stmt_idx = cache.index_by_line(hit.path).get(hit.line_no)
            if stmt_idx is None:
                continue  # comment, bracket-only or blank line
            stmt = cache.statements(hit.path)[stmt_idx]
            src_kind = kw.source_line.kind
            if (
                src_kind is not StatementKind.OTHER
                and stmt.kind is not StatementKind.OTHER
                and stmt.kind is not src_kind
            ):
                continue
            sim = strsim(kw.source_line.norm, stmt.norm)
            if sim < params.ks_threshold:
                continue
            key = (hit.path, hit.line_no)
            prev = best.get(key)
            if prev is None or sim > prev.sim:
                best[key] = KeyStatementMatch(hit=hit, stmt=stmt, sim=sim, side=ctx.side)
    matches = sorted(best.values(), key=lambda m: (-m.sim, m.hit.path, m.hit.line_no))
    return matches


def expand_boundary(
    target: RepoHandle,
    ks: KeyStatementMatch,
    patch_ctx: PatchContext,
    c_lines: int,
    params: SimilarityParams,
    cache: StatementCache | None = None,
) -> tuple[int, int] | None:
    """Grow a key statement into a (start line, end line) context boundary.

    Within the c_lines statements above the key statement (inclusive) the
    best strsim match against the patch context's first statement becomes the
    start; within the c_lines below (inclusive), the best match against the
    last statement becomes the end. Both maxima must pass ks_threshold.
    """
    if cache is None:
        cache = StatementCache(target)
    ctx_stmts = patch_ctx.statements
    if not ctx_stmts:
        return None
    stmts = cache.statements(ks.hit.path)
    idx = cache.index_by_line(ks.hit.path).get(ks.hit.line_no)
    if idx is None:
        return None
    up_window = stmts[max(0, idx - c_lines): idx + 1]
    down_window = stmts[idx: idx + c_lines + 1]
    ss = _best_in_window(up_window, ctx_stmts[0].norm, ks.stmt.line_no)
    es = _best_in_window(down_window, ctx_stmts[-1].norm, ks.stmt.line_no)
    if ss is None or es is None:
        return None
    if ss[0] < params.ks_threshold or es[0] < params.ks_threshold:
        return None
    return (ss[1], es[1])


def _best_in_window(
    window: list[NormalizedLine], patch_norm: str, ks_line: int
) -> tuple[float, int] | None:
    """(similarity, line_no) of the window statement most like patch_norm.

    Ties prefer the statement closest to the key statement, then the lower
    line number.
    """
    best: tuple[float, int, int] | None = None  # (sim, distance, line_no)
    for s in window:
        sim = strsim(patch_norm, s.norm)
        cand = (sim, abs(s.line_no - ks_line), s.line_no)
        if (
            best is None
            or cand[0] > best[0]
            or (cand[0] == best[0] and cand[1] < best[1])
            or (cand[0] == best[0] and cand[1] == best[1] and cand[2] < best[2])
        ):
            best = cand
    if best is None:
        return None
    return (best[0], best[2])


def finalize_contexts(
    target: RepoHandle,
    boundaries: list[tuple[str, tuple[int, int]]],
    patch_ctx: PatchContext,
    params: SimilarityParams,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
    cache: StatementCache | None = None,
) -> list[CandidateContext]:
    """Score boundary regions against the patch context and keep the best.

    ctx_sim is the fragment similarity of the patch context against the
    candidate's statements; regions under the decision threshold are dropped,
    overlapping regions in the same file keep only the higher-scoring one,
    and the survivors are capped at max_candidates (0 = unlimited) by
    descending ctx_sim.
    """
    if cache is None:
        cache = StatementCache(target)
    patch_norms = [s.norm for s in patch_ctx.statements]
    if not patch_norms:
        return []
    scored: list[CandidateContext] = []
    seen_spans: set[tuple[str, int, int]] = set()
    for path, (ss_line, es_line) in boundaries:
        if (path, ss_line, es_line) in seen_spans:
            continue
        seen_spans.add((path, ss_line, es_line))
        stmts = cache.between(path, ss_line, es_line)
        if not stmts:
            continue
        sim = fragment_similarity(patch_norms, [s.norm for s in stmts], params).score
        if sim < params.t:
            continue
        scored.append(
            CandidateContext(
                path=path,
                side=patch_ctx.side,
                ss_line=ss_line,
                es_line=es_line,
                stmts=stmts,
                ctx_sim=sim,
            )
        )
    scored.sort(key=lambda c: (-c.ctx_sim, c.path, c.ss_line, c.es_line))
    kept: list[CandidateContext] = []
    for cand in scored:
        if any(
            k.path == cand.path
            and not (cand.es_line < k.ss_line or cand.ss_line > k.es_line)
            for k in kept
        ):
            continue
        kept.append(cand)
        if max_candidates and len(kept) >= max_candidates:
            break
    return kept


def fetch_candidate_code(
    target: RepoHandle,
    up: CandidateContext | None,
    down: CandidateContext | None,
    patch_code_len: int,
    cache: StatementCache | None = None,
) -> list[CandidateCode]:
    """Extract the candidate code adjacent to the located context(s).

    With both contexts the candidate is everything strictly between them
    (possibly empty). With one context it is the patch_code_len statements
    directly below (UP) or above (DOWN). Incompatible pairs fall back to two
    single-context candidates.
    """
    if up is None and down is None:
        raise ValueError("at least one context is required")
    if cache is None:
        cache = StatementCache(target)
    if up is not None and down is not None:
        if up.path != down.path or down.ss_line <= up.es_line:
            log.warning(
                "contexts do not pair (%s:%d vs %s:%d); judging each side alone",
                up.path, up.es_line, down.path, down.ss_line,
            )
            return fetch_candidate_code(
                target, up, None, patch_code_len, cache
            ) + fetch_candidate_code(target, None, down, patch_code_len, cache)
        stmts = cache.between(up.path, up.es_line + 1, down.ss_line - 1)
        span = (
            (stmts[0].line_no, stmts[-1].line_no)
            if stmts
            else (up.es_line + 1, up.es_line)
        )
        return [CandidateCode(up.path, stmts, span, paired_up=up, paired_down=down)]
    if up is not None:
        after = [s for s in cache.statements(up.path) if s.line_no > up.es_line]
        stmts = after[:patch_code_len]
        span = (
            (stmts[0].line_no, stmts[-1].line_no)
            if stmts
            else (up.es_line + 1, up.es_line)
        )
        return [CandidateCode(up.path, stmts, span, paired_up=up)]
    assert down is not None
    before = [s for s in cache.statements(down.path) if s.line_no < down.ss_line]
    stmts = before[-patch_code_len:] if patch_code_len > 0 else []
    span = (
        (stmts[0].line_no, stmts[-1].line_no)
        if stmts
        else (down.ss_line, down.ss_line - 1)
    )
    return [CandidateCode(down.path, stmts, span, paired_down=down)]


@dataclass
class SearchOutcome:
    """Everything the searcher found for one hunk in one target."""

    candidates: list[CandidateCode]
    up_contexts: list[CandidateContext] = field(default_factory=list)
    down_contexts: list[CandidateContext] = field(default_factory=list)


def _gap_statements(cache: StatementCache, path: str, lo: int, hi: int) -> int:
    """Meaningful statements strictly between line lo and line hi."""
    return len(cache.between(path, lo + 1, hi - 1))


def _pair_contexts(
    ups: list[CandidateContext],
    downs: list[CandidateContext],
    max_gap: int,
    cache: StatementCache,
) -> list[tuple[CandidateContext, CandidateContext]]:
    """Greedy smallest-gap pairing of UP and DOWN contexts per file."""
    compat: list[tuple[int, str, int, int, CandidateContext, CandidateContext]] = []
    for up in ups:
        for down in downs:
            if down.path != up.path or down.ss_line <= up.es_line:
                continue
            gap = _gap_statements(cache, up.path, up.es_line, down.ss_line)
            if gap > max_gap:
                continue
            compat.append((gap, up.path, up.es_line, down.ss_line, up, down))
    compat.sort(key=lambda x: x[:4])
    pairs: list[tuple[CandidateContext, CandidateContext]] = []
    used_up: set[int] = set()
    used_down: set[int] = set()
    for gap, _, _, _, up, down in compat:
        if id(up) in used_up or id(down) in used_down:
            continue
        pairs.append((up, down))
        used_up.add(id(up))
        used_down.add(id(down))
    return pairs


def collect_candidates(
    target: RepoHandle,
    hunk: PatchHunk,
    params: SimilarityParams,
    c_lines: int,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
    cache: StatementCache | None = None,
) -> SearchOutcome:
    """Run the full search pipeline for one hunk against one target."""
    if cache is None:
        cache = StatementCache(target)

    def located(ctx: PatchContext) -> list[CandidateContext]:
        if not ctx:
            return []
        seeds = find_key_statements(target, ctx, hunk.file_class, params, cache)
        boundaries: list[tuple[str, tuple[int, int]]] = []
        for ks in seeds:
            span = expand_boundary(target, ks, ctx, c_lines, params, cache)
            if span is not None:
                boundaries.append((ks.hit.path, span))
        return finalize_contexts(
            target, boundaries, ctx, params, max_candidates, cache
        )

    ups = located(hunk.up_ctx)
    downs = located(hunk.down_ctx)
    max_gap = max(3 * hunk.code_len, 20)
    pairs = _pair_contexts(ups, downs, max_gap, cache)
    paired_up = {id(u) for u, _ in pairs}
    paired_down = {id(d) for _, d in pairs}

    candidates: list[CandidateCode] = []
    for up, down in pairs:
        candidates.extend(
            fetch_candidate_code(target, up, down, hunk.code_len, cache)
        )
    for up in ups:
        if id(up) not in paired_up:
            candidates.extend(
                fetch_candidate_code(target, up, None, hunk.code_len, cache)
            )
    for down in downs:
        if id(down) not in paired_down:
            candidates.extend(
                fetch_candidate_code(target, None, down, hunk.code_len, cache)
            )

    unique: dict[tuple[str, int, int], CandidateCode] = {}
    for cand in candidates:
        key = (cand.path, *cand.span)
        prev = unique.get(key)
        if prev is None or _ctx_count(cand) > _ctx_count(prev):
            unique[key] = cand
    ordered = sorted(unique.values(), key=lambda c: (c.path, c.span))
    return SearchOutcome(candidates=ordered, up_contexts=ups, down_contexts=downs)


def _ctx_count(c: CandidateCode) -> int:
    return (c.paired_up is not None) + (c.paired_down is not None)
