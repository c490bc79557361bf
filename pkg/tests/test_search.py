"""Candidate clone location: key statements, boundaries, contexts, code."""

import logging

import pytest

from conftest import (
    oracle_fragment_similarity,
    oracle_strsim,
    run_git,
)
from forkscan.gitio import RepoHandle, read_file_at
from forkscan.patchmodel import PatchContext, PatchHunk, PatchType, Side
from forkscan.preprocess import (
    StatementKind,
    classify_file,
    extract_keyword,
    extract_statements,
)
from forkscan.search import (
    CandidateContext,
    StatementCache,
    collect_candidates,
    expand_boundary,
    fetch_candidate_code,
    finalize_contexts,
    find_key_statements,
    is_test_path,
)
from forkscan.simcore import SimilarityParams
from test_patchmodel import init_repo, write_files, commit_all
from datetime import datetime, timezone

UTC = timezone.utc

PATCH_PATH = "src/validation.cpp"
PATCH_FC = classify_file(PATCH_PATH)

# Patch-side context: five statements above and below a one-line change.
UP_NORMS = [
    'LogPrintf("Verifying block database integrity...\\n");',
    "if (!CheckBlockDataUsage(chainparams)) {",
    'LogPrintf("Block database check started\\n");',
    'nCheckDepth = gArgs.GetArg("-checkblocks", DEFAULT_CHECKBLOCKS);',
    "fCheckedBlocks = (nCheckDepth > 0);",
]
DOWN_NORMS = [
    "nCheckLevel = std::max(0, std::min(4, nCheckLevel));",
    'LogPrintf("Verification progress saved\\n");',
    "pindexState = chainActive.Tip();",
    "CBlockIndex* pindexFailure = nullptr;",
    "int nGoodTransactions = 0;",
]
DP_LINE = 'if (fHavePruned) return state.Error("corrupt block database detected");'
AP_LINE = (
    "if (fHavePruned || fCorruptBlocks) return AbortNode(state, "
    '"Corrupted block database detected, please restart with -reindex.");'
)

# Fork-flavored clone of the patched region: renamed strings and variables,
# the deleted statement intact at line 6, contexts at 3-5 and 7-11. Line 12
# reuses keywords in a different statement kind; line 13 is a comment trap.
TARGET_LINES = [
    "static bool fLoadedIndex = false;",
    "InitBlockIndexCache();",
    'LogPrintf("Dogecoin: block database check started\\n");',
    'nCheckDepth = gArgs.GetArg("-checkdepth", DEFAULT_CHECKBLOCKS);',
    "fCheckedBlocks = (nCheckDepth > 0);",
    DP_LINE,
    "nCheckLevel = std::max(0, std::min(3, nCheckLevel));",
    'LogPrintf("Dogecoin: verification progress saved\\n");',
    "pindexState = chainActive.Tip();",
    "CBlockIndex* pindexBestFailure = nullptr;",
    "int nGoodTx = 0;",
    "return fCheckedBlocks && nGoodTx > 0;",
    "// fCheckedBlocks = (nCheckDepth > 0);",
]

DECOY_LINE = "fCheckedBlocks = (nCheckDepth > 0);\n"

PARAMS = SimilarityParams()


def make_ctx(norms: list[str], side: Side) -> PatchContext:
    stmts = extract_statements(norms, PATCH_PATH)
    return PatchContext(entries=[(extract_keyword(s), s) for s in stmts], side=side)


def make_stmts(norms: list[str]):
    return extract_statements(norms, PATCH_PATH)


def make_hunk(up_norms=None, down_norms=None) -> PatchHunk:
    up = make_ctx(up_norms, Side.UP) if up_norms is not None else PatchContext([], Side.UP)
    down = (
        make_ctx(down_norms, Side.DOWN)
        if down_norms is not None
        else PatchContext([], Side.DOWN)
    )
    return PatchHunk(
        path=PATCH_PATH, file_class=PATCH_FC, dp=make_stmts([DP_LINE]),
        ap=make_stmts([AP_LINE]), ptype=PatchType.CHA, up_ctx=up, down_ctx=down,
    )


def _repo(tmp, files: dict[str, str]) -> RepoHandle:
    root = init_repo(tmp)
    write_files(root, files)
    commit_all(root, "import", datetime(2020, 1, 1, tzinfo=UTC))
    return RepoHandle(root)


@pytest.fixture(scope="module")
def fig_repo(tmp_path_factory):
    """Fork target with one clone plus comment, kind, test-path, file-class traps."""
    return _repo(tmp_path_factory.mktemp("fig") / "dogeclone", {
        "src/init.cpp": "\n".join(TARGET_LINES) + "\n",
        "src/tests/util_tests.cpp": DECOY_LINE,
        "src/validation.h": DECOY_LINE,
    })


@pytest.fixture(scope="module")
def twin_repo(tmp_path_factory):
    """The same clone planted twice, in src/init.cpp and src/wallet.cpp."""
    content = "\n".join(TARGET_LINES) + "\n"
    return _repo(tmp_path_factory.mktemp("twin") / "twins", {
        "src/init.cpp": content,
        "src/wallet.cpp": content,
    })


class TestIsTestPath:
    @pytest.mark.parametrize("path,expected", [
        ("src/tests/util.cpp", True),
        ("src/test/x.cpp", True),
        ("testing/y.cpp", True),
        ("testdata/z.go", True),
        ("spec/a.cpp", True),
        ("bench/b.cpp", True),
        ("src/Test/x.cpp", True),
        ("src/attestation/x.cpp", False),
        ("contest/x.cpp", False),
        ("src/init.cpp", False),
    ])
    def test_segments(self, path, expected):
        assert is_test_path(path) is expected


class TestStatementCache:
    def test_matches_direct_extraction(self, fig_repo):
        cache = StatementCache(fig_repo)
        path = "src/init.cpp"
        direct = extract_statements(
            read_file_at(fig_repo, "HEAD", path), path, classify_file(path)
        )
        assert cache.statements(path) == direct
        assert cache.index_by_line(path) == {
            s.line_no: i for i, s in enumerate(direct)
        }

    def test_between_is_inclusive(self, fig_repo):
        cache = StatementCache(fig_repo)
        got = cache.between("src/init.cpp", 3, 5)
        assert [s.line_no for s in got] == [3, 4, 5]
        assert cache.between("src/init.cpp", 13, 13) == []  # comment line

    def test_missing_file_is_empty(self, fig_repo):
        cache = StatementCache(fig_repo)
        assert cache.statements("src/absent.cpp") == []
        assert cache.between("src/absent.cpp", 1, 10) == []

    def test_revision_pinning(self, tmp_path):
        root = init_repo(tmp_path / "pin")
        write_files(root, {"a.cpp": "int a = 1;\n"})
        old = commit_all(root, "v1", datetime(2020, 1, 1, tzinfo=UTC))
        write_files(root, {"a.cpp": "int a = 2;\n"})
        commit_all(root, "v2", datetime(2020, 1, 2, tzinfo=UTC))
        repo = RepoHandle(root)
        assert StatementCache(repo, rev=old).statements("a.cpp")[0].norm == "int a = 1;"
        assert StatementCache(repo).statements("a.cpp")[0].norm == "int a = 2;"


def _brute_force_keys(repo: RepoHandle, ctx: PatchContext) -> dict:
    """All (path, line) -> best sim per the search contract, by direct scan."""
    expected: dict[tuple[str, int], float] = {}
    paths = run_git(repo.root, "ls-tree", "-r", "--name-only", "HEAD").split("\n")
    for path in paths:
        if is_test_path(path) or classify_file(path) != PATCH_FC:
            continue
        stmts = extract_statements(
            read_file_at(repo, "HEAD", path), path, classify_file(path)
        )
        for s in stmts:
            for kw in ctx.keywords:
                if kw.keyword not in s.raw:
                    continue
                src_kind = kw.source_line.kind
                if (
                    src_kind is not StatementKind.OTHER
                    and s.kind is not StatementKind.OTHER
                    and s.kind is not src_kind
                ):
                    continue
                sim = oracle_strsim(kw.source_line.norm, s.norm)
                if sim < PARAMS.ks_threshold:
                    continue
                key = (path, s.line_no)
                expected[key] = max(expected.get(key, 0.0), sim)
    return expected


class TestFindKeyStatements:
    def test_up_context_survivors(self, fig_repo):
        ks = find_key_statements(fig_repo, make_ctx(UP_NORMS, Side.UP), PATCH_FC, PARAMS)
        assert {(m.hit.path, m.hit.line_no) for m in ks} == {
            ("src/init.cpp", 3),
            ("src/init.cpp", 4),
            ("src/init.cpp", 5),
            ("src/init.cpp", 8),
        }
        head = ks[0]
        assert (head.hit.line_no, head.sim) == (5, 1.0)
        assert head.side == Side.UP
        sims = [m.sim for m in ks]
        assert sims == sorted(sims, reverse=True)

    def test_down_context_survivors(self, fig_repo):
        ks = find_key_statements(
            fig_repo, make_ctx(DOWN_NORMS, Side.DOWN), PATCH_FC, PARAMS
        )
        assert [(m.hit.line_no, m.sim) for m in ks][0] == (9, 1.0)
        assert {m.hit.line_no for m in ks} == {7, 9}

    def test_filters_block_traps(self, fig_repo):
        ks = find_key_statements(fig_repo, make_ctx(UP_NORMS, Side.UP), PATCH_FC, PARAMS)
        hit_keys = {(m.hit.path, m.hit.line_no) for m in ks}
        assert ("src/tests/util_tests.cpp", 1) not in hit_keys  # test path
        assert ("src/validation.h", 1) not in hit_keys  # different file class
        assert ("src/init.cpp", 12) not in hit_keys  # RETURN vs ASSIGNMENT
        assert ("src/init.cpp", 13) not in hit_keys  # comment line

    @pytest.mark.parametrize("norms,side", [(UP_NORMS, Side.UP), (DOWN_NORMS, Side.DOWN)])
    def test_matches_brute_force_scan(self, fig_repo, norms, side):
        ctx = make_ctx(norms, side)
        got = {(m.hit.path, m.hit.line_no): m.sim
               for m in find_key_statements(fig_repo, ctx, PATCH_FC, PARAMS)}
        assert got == _brute_force_keys(fig_repo, ctx)

    def test_all_sims_pass_gate(self, fig_repo):
        for m in find_key_statements(
            fig_repo, make_ctx(UP_NORMS, Side.UP), PATCH_FC, PARAMS
        ):
            assert PARAMS.ks_threshold <= m.sim <= 1.0

    def test_empty_context_finds_nothing(self, fig_repo):
        assert find_key_statements(
            fig_repo, PatchContext([], Side.UP), PATCH_FC, PARAMS
        ) == []


class TestExpandBoundary:
    def _seed(self, repo, norms, side, line):
        ks = find_key_statements(repo, make_ctx(norms, side), PATCH_FC, PARAMS)
        return next(m for m in ks if m.hit.line_no == line)

    @pytest.mark.parametrize("line", [3, 4, 5])
    def test_up_seeds_converge(self, fig_repo, line):
        ctx = make_ctx(UP_NORMS, Side.UP)
        ks = self._seed(fig_repo, UP_NORMS, Side.UP, line)
        assert expand_boundary(fig_repo, ks, ctx, 5, PARAMS) == (3, 5)

    @pytest.mark.parametrize("line", [7, 9])
    def test_down_seeds_converge(self, fig_repo, line):
        ctx = make_ctx(DOWN_NORMS, Side.DOWN)
        ks = self._seed(fig_repo, DOWN_NORMS, Side.DOWN, line)
        assert expand_boundary(fig_repo, ks, ctx, 5, PARAMS) == (7, 11)

    def test_far_seed_expands_wide(self, fig_repo):
        # The line-8 seed still anchors its start at line 3; its end drifts
        # to the keyword-sharing return at line 12.
        ctx = make_ctx(UP_NORMS, Side.UP)
        ks = self._seed(fig_repo, UP_NORMS, Side.UP, 8)
        assert expand_boundary(fig_repo, ks, ctx, 5, PARAMS) == (3, 12)

    def test_single_statement_context_collapses_to_seed(self, fig_repo):
        ctx = make_ctx(["pindexState = chainActive.Tip();"], Side.UP)
        ks = find_key_statements(fig_repo, ctx, PATCH_FC, PARAMS)[0]
        assert ks.hit.line_no == 9
        assert expand_boundary(fig_repo, ks, ctx, 5, PARAMS) == (9, 9)

    def test_gate_failure_returns_none(self, tmp_path):
        repo = _repo(tmp_path / "gate", {
            "src/gate.cpp": "qq;\nnCheckValue = ComputeValue(x);\nzz;\n",
        })
        ctx = make_ctx([
            "AlphaBetaGammaDeltaKappa();",
            "nCheckValue = ComputeValue(x);",
            "OmegaEpsilonZetaTheta();",
        ], Side.UP)
        ks = find_key_statements(repo, ctx, PATCH_FC, PARAMS)
        assert [(m.hit.line_no, m.sim) for m in ks] == [(2, 1.0)]
        assert expand_boundary(repo, ks[0], ctx, 5, PARAMS) is None

    def test_equal_matches_prefer_closest(self, tmp_path):
        repo = _repo(tmp_path / "dup", {
            "src/dup.cpp": (
                "setup_call(a);\nBeginMarker(x);\nMarkerEnd();\n"
                "junk_one(b);\nMarkerEnd();\n"
            ),
        })
        ctx = make_ctx(["BeginMarker(y);", "filler_stmt;", "MarkerEnd();"], Side.UP)
        ks = find_key_statements(repo, ctx, PATCH_FC, PARAMS)
        seed2 = next(m for m in ks if m.hit.line_no == 2)
        # MarkerEnd() appears at lines 3 and 5 with equal similarity; the
        # boundary ends at the one nearer the seed.
        assert expand_boundary(repo, seed2, ctx, 5, PARAMS) == (2, 3)

    def test_empty_patch_context(self, fig_repo):
        ks = find_key_statements(
            fig_repo, make_ctx(UP_NORMS, Side.UP), PATCH_FC, PARAMS
        )[0]
        assert expand_boundary(
            fig_repo, ks, PatchContext([], Side.UP), 5, PARAMS
        ) is None


class TestFinalizeContexts:
    def test_keeps_passing_region_with_oracle_score(self, fig_repo):
        ctx = make_ctx(UP_NORMS, Side.UP)
        kept = finalize_contexts(
            fig_repo, [("src/init.cpp", (3, 5))], ctx, PARAMS
        )
        assert len(kept) == 1
        c = kept[0]
        assert (c.path, c.ss_line, c.es_line, c.side) == ("src/init.cpp", 3, 5, Side.UP)
        assert [s.line_no for s in c.stmts] == [3, 4, 5]
        expected = oracle_fragment_similarity(
            UP_NORMS, [s.norm for s in c.stmts], PARAMS.r
        )
        assert c.ctx_sim == pytest.approx(expected, abs=1e-12)
        assert c.ctx_sim >= PARAMS.t

    def test_drops_region_below_threshold(self, fig_repo):
        ctx = make_ctx(UP_NORMS, Side.UP)
        kept = finalize_contexts(fig_repo, [("src/init.cpp", (8, 12))], ctx, PARAMS)
        assert kept == []
        stmts = StatementCache(fig_repo).between("src/init.cpp", 8, 12)
        assert oracle_fragment_similarity(
            UP_NORMS, [s.norm for s in stmts], PARAMS.r
        ) < PARAMS.t

    def test_overlapping_regions_keep_best(self, fig_repo):
        ctx = make_ctx(UP_NORMS, Side.UP)
        kept = finalize_contexts(
            fig_repo,
            [("src/init.cpp", (3, 5)), ("src/init.cpp", (3, 12))],
            ctx, PARAMS,
        )
        assert [(c.ss_line, c.es_line) for c in kept] == [(3, 5)]

    def test_cap_and_unlimited(self, twin_repo):
        ctx = make_ctx(UP_NORMS, Side.UP)
        spans = [("src/init.cpp", (3, 5)), ("src/wallet.cpp", (3, 5))]
        capped = finalize_contexts(twin_repo, spans, ctx, PARAMS, max_candidates=1)
        assert [(c.path, c.ss_line) for c in capped] == [("src/init.cpp", 3)]
        unlimited = finalize_contexts(twin_repo, spans, ctx, PARAMS, max_candidates=0)
        assert [c.path for c in unlimited] == ["src/init.cpp", "src/wallet.cpp"]

    def test_statementless_span_skipped(self, fig_repo):
        ctx = make_ctx(UP_NORMS, Side.UP)
        assert finalize_contexts(
            fig_repo, [("src/init.cpp", (100, 120))], ctx, PARAMS
        ) == []

    def test_empty_context_returns_nothing(self, fig_repo):
        assert finalize_contexts(
            fig_repo, [("src/init.cpp", (3, 5))], PatchContext([], Side.UP), PARAMS
        ) == []


def _ctx(path: str, side: Side, ss: int, es: int) -> CandidateContext:
    return CandidateContext(path=path, side=side, ss_line=ss, es_line=es,
                            stmts=[], ctx_sim=0.9)


class TestFetchCandidateCode:
    def test_between_pair(self, fig_repo):
        up = _ctx("src/init.cpp", Side.UP, 3, 5)
        down = _ctx("src/init.cpp", Side.DOWN, 7, 11)
        (cand,) = fetch_candidate_code(fig_repo, up, down, 1)
        assert cand.span == (6, 6)
        assert cand.norms == [DP_LINE]
        assert cand.paired_up is up and cand.paired_down is down

    def test_adjacent_pair_yields_empty_candidate(self, fig_repo):
        up = _ctx("src/init.cpp", Side.UP, 3, 5)
        down = _ctx("src/init.cpp", Side.DOWN, 6, 11)
        (cand,) = fetch_candidate_code(fig_repo, up, down, 1)
        assert cand.stmts == [] and cand.span == (6, 5)

    def test_up_only_takes_statements_below(self, fig_repo):
        up = _ctx("src/init.cpp", Side.UP, 3, 5)
        (cand,) = fetch_candidate_code(fig_repo, up, None, 2)
        assert cand.span == (6, 7)
        assert [s.line_no for s in cand.stmts] == [6, 7]
        assert cand.paired_down is None

    def test_up_only_at_end_of_file(self, fig_repo):
        up = _ctx("src/init.cpp", Side.UP, 10, 12)
        (cand,) = fetch_candidate_code(fig_repo, up, None, 2)
        assert cand.stmts == [] and cand.span == (13, 12)

    def test_down_only_takes_statements_above(self, fig_repo):
        down = _ctx("src/init.cpp", Side.DOWN, 7, 11)
        (cand,) = fetch_candidate_code(fig_repo, None, down, 2)
        assert cand.span == (5, 6)
        assert cand.norms[-1] == DP_LINE

    def test_down_only_at_start_of_file(self, fig_repo):
        down = _ctx("src/init.cpp", Side.DOWN, 1, 5)
        (cand,) = fetch_candidate_code(fig_repo, None, down, 3)
        assert cand.stmts == [] and cand.span == (1, 0)

    def test_cross_file_pair_degrades_to_singles(self, twin_repo, caplog):
        up = _ctx("src/init.cpp", Side.UP, 3, 5)
        down = _ctx("src/wallet.cpp", Side.DOWN, 7, 11)
        with caplog.at_level(logging.WARNING):
            cands = fetch_candidate_code(twin_repo, up, down, 1)
        assert [(c.path, c.span) for c in cands] == [
            ("src/init.cpp", (6, 6)),
            ("src/wallet.cpp", (6, 6)),
        ]
        assert cands[0].paired_down is None and cands[1].paired_up is None
        assert any("do not pair" in r.message for r in caplog.records)

    def test_inverted_pair_degrades_to_singles(self, fig_repo):
        up = _ctx("src/init.cpp", Side.UP, 7, 11)
        down = _ctx("src/init.cpp", Side.DOWN, 3, 5)
        cands = fetch_candidate_code(fig_repo, up, down, 1)
        assert [(c.path, c.span) for c in cands] == [
            ("src/init.cpp", (12, 12)),
            ("src/init.cpp", (2, 2)),
        ]

    def test_requires_a_context(self, fig_repo):
        with pytest.raises(ValueError):
            fetch_candidate_code(fig_repo, None, None, 1)


class TestCollectCandidates:
    def test_end_to_end_single_clone(self, fig_repo):
        out = collect_candidates(fig_repo, make_hunk(UP_NORMS, DOWN_NORMS), PARAMS, 5)
        assert [(c.path, c.ss_line, c.es_line) for c in out.up_contexts] == [
            ("src/init.cpp", 3, 5)
        ]
        assert [(c.path, c.ss_line, c.es_line) for c in out.down_contexts] == [
            ("src/init.cpp", 7, 11)
        ]
        (cand,) = out.candidates
        assert cand.span == (6, 6) and cand.norms == [DP_LINE]
        assert cand.paired_up is not None and cand.paired_down is not None
        up = out.up_contexts[0]
        assert up.ctx_sim == pytest.approx(
            oracle_fragment_similarity(UP_NORMS, [s.norm for s in up.stmts], PARAMS.r),
            abs=1e-12,
        )

    def test_two_files_two_candidates(self, twin_repo):
        out = collect_candidates(twin_repo, make_hunk(UP_NORMS, DOWN_NORMS), PARAMS, 5)
        assert [(c.path, c.span) for c in out.candidates] == [
            ("src/init.cpp", (6, 6)),
            ("src/wallet.cpp", (6, 6)),
        ]
        for cand in out.candidates:
            assert cand.norms == [DP_LINE]
            assert cand.paired_up is not None and cand.paired_down is not None

    def test_up_context_only(self, fig_repo):
        out = collect_candidates(fig_repo, make_hunk(UP_NORMS, None), PARAMS, 5)
        (cand,) = out.candidates
        assert cand.span == (6, 6) and cand.norms == [DP_LINE]
        assert cand.paired_up is not None and cand.paired_down is None
        assert out.down_contexts == []

    def test_down_context_only(self, fig_repo):
        out = collect_candidates(fig_repo, make_hunk(None, DOWN_NORMS), PARAMS, 5)
        (cand,) = out.candidates
        assert cand.span == (6, 6) and cand.norms == [DP_LINE]
        assert cand.paired_up is None and cand.paired_down is not None

    def test_verbatim_plant_scores_one(self, tmp_path):
        repo = _repo(tmp_path / "plant", {
            "src/clone.cpp": "\n".join(UP_NORMS + [DP_LINE] + DOWN_NORMS) + "\n",
        })
        out = collect_candidates(repo, make_hunk(UP_NORMS, DOWN_NORMS), PARAMS, 5)
        assert [(c.ss_line, c.es_line, c.ctx_sim) for c in out.up_contexts] == [
            (1, 5, 1.0)
        ]
        assert [(c.ss_line, c.es_line, c.ctx_sim) for c in out.down_contexts] == [
            (7, 11, 1.0)
        ]
        (cand,) = out.candidates
        assert cand.span == (6, 6) and cand.norms == [DP_LINE]

    def test_absent_region_finds_nothing(self, tmp_path):
        repo = _repo(tmp_path / "empty", {
            "src/unrelated.cpp": "int completely = 0;\ndifferent_code(here);\n",
        })
        out = collect_candidates(repo, make_hunk(UP_NORMS, DOWN_NORMS), PARAMS, 5)
        assert out.candidates == []
        assert out.up_contexts == [] and out.down_contexts == []
