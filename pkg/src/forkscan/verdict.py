"""Judge candidate code against a patch and aggregate into one verdict.

A candidate is compared to the deleted statements (dp) and/or the added
statements (ap) of the hunk; whichever similarity passes the threshold t
decides whether the patch was applied there. Per hunk the most confident
decided candidate wins, and across hunks a single Vulnerable hunk makes the
whole patch verdict Vulnerable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .patchmodel import PatchHunk, PatchType
from .search import CandidateCode
from .simcore import SimilarityParams, fragment_similarity


class Status(Enum):
    VULNERABLE = "Vulnerable"
    FIXED = "Fixed"
    CONTEXT_NOT_FOUND = "ContextNotFound"


@dataclass
class CandidateJudgment:
    """One candidate's comparison result.

    fv = 1 means the patch was applied at this location, 0 means the
    pre-patch code is still there; None means the comparison was
    inconclusive (never outvotes a decided judgment).
    """

    candidate: CandidateCode
    s_del: float | None
    s_add: float | None
    fv: int | None
    conf: float

    @property
    def decided(self) -> bool:
        return self.fv is not None


@dataclass
class HunkOutcome:
    status: Status
    conf: float
    winner: CandidateJudgment | None


@dataclass
class Verdict:
    status: Status
    conf: float
    winning: CandidateJudgment | None
    per_hunk: list[HunkOutcome]


def decide(
    ptype: PatchType, s_del: float | None, s_add: float | None, t: float
) -> tuple[int | None, float]:
    """Map the measured similarities to (fv, confidence).

    DEL: similarity to dp at or above t means the deletion never happened.
    ADD: similarity to ap at or above t means the addition is present.
    CHA: when both sides pass, the larger similarity wins (ties favor the
    pre-patch side); when one passes, it decides alone; when neither does,
    the candidate is undecidable and conf goes negative.
    """
    if ptype is PatchType.DEL:
        assert s_del is not None
        return (0, s_del - t) if s_del >= t else (1, t - s_del)
    if ptype is PatchType.ADD:
        assert s_add is not None
        return (1, s_add - t) if s_add >= t else (0, t - s_add)
    assert s_del is not None and s_add is not None
    del_pass, add_pass = s_del >= t, s_add >= t
    if del_pass and add_pass:
        return (0, s_del - t) if s_del >= s_add else (1, s_add - t)
    if del_pass:
        return (0, s_del - t)
    if add_pass:
        return (1, s_add - t)
    return (None, max(s_del, s_add) - t)


def judge_candidate(
    candidate: CandidateCode, hunk: PatchHunk, params: SimilarityParams
) -> CandidateJudgment:
    """Compare one candidate's statements against the hunk's dp/ap.

    An empty candidate counts as similarity 0 to everything: the deleted
    code is certainly absent (DEL -> applied) and so is the added code
    (ADD -> not applied); an empty candidate for a CHA hunk is undecidable.
    """
    norms = candidate.norms

    def sim_to(patch_stmts) -> float:
        if not norms:
            return 0.0
        return fragment_similarity(
            norms, [s.norm for s in patch_stmts], params
        ).score

    s_del = sim_to(hunk.dp) if hunk.dp else None
    s_add = sim_to(hunk.ap) if hunk.ap else None
    fv, conf = decide(hunk.ptype, s_del, s_add, params.t)
    return CandidateJudgment(
        candidate=candidate, s_del=s_del, s_add=s_add, fv=fv, conf=conf
    )


def _hunk_outcome(judgments: list[CandidateJudgment]) -> HunkOutcome:
    decided = [j for j in judgments if j.decided]
    if not decided:
        return HunkOutcome(Status.CONTEXT_NOT_FOUND, 0.0, None)
    winner = min(
        decided,
        key=lambda j: (-j.conf, j.candidate.path, j.candidate.span[0]),
    )
    status = Status.VULNERABLE if winner.fv == 0 else Status.FIXED
    return HunkOutcome(status, winner.conf, winner)


def aggregate(judgments_per_hunk: list[list[CandidateJudgment]]) -> Verdict:
    """Combine per-candidate judgments into the per-(patch, target) verdict.

    Per hunk the decided judgment with the highest confidence wins (ties:
    lower path, then lower line). Any Vulnerable hunk makes the patch
    Vulnerable; otherwise any Fixed hunk makes it Fixed; otherwise the
    patch context was not found at all.
    """
    outcomes = [_hunk_outcome(js) for js in judgments_per_hunk]
    for wanted in (Status.VULNERABLE, Status.FIXED):
        hits = [o for o in outcomes if o.status is wanted]
        if hits:
            top = max(hits, key=lambda o: o.conf)
            return Verdict(wanted, top.conf, top.winner, outcomes)
    return Verdict(Status.CONTEXT_NOT_FOUND, 0.0, None, outcomes)
