"""For targets judged Fixed: who fixed it, in which release, and how late.

git blame over the winning candidate region names the commits that shaped
it; the earliest of them is taken as the true fix commit (later commits are
refactors of already-fixed code). Its first containing release, compared to
the source patch's commit date, gives the fix delay in whole days.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime

from . import gitio
from .gitio import RepoHandle
from .verdict import Status, Verdict

log = logging.getLogger(__name__)


class AttributionFailed(Exception):
    """blame could not attribute the fixed region to any commit."""


@dataclass
class FixAttribution:
    """Commits that last touched the fixed region, plus the earliest one."""

    commits: list[tuple[str, datetime]]
    true_fix: str


@dataclass
class DelayRecord:
    patch_sha: str | None
    target: str
    true_fix: str | None
    release: tuple[str, datetime] | None
    delay_days: int | None


def find_fix_commit(
    target: RepoHandle, path: str, span: tuple[int, int], rev: str | None = None
) -> FixAttribution:
    """Blame the region and pick the earliest commit as the true fix.

    Ties on the committer timestamp go to the lexicographically smaller sha.
    """
    start, end = span
    try:
        entries = gitio.blame_lines(target, rev, path, start, end)
    except (gitio.GitError, ValueError) as exc:
        raise AttributionFailed(f"blame {path}:{start}-{end} failed: {exc}") from exc
    if not entries:
        raise AttributionFailed(f"blame {path}:{start}-{end} returned nothing")
    commits: dict[str, datetime] = {}
    for entry in entries:
        if entry.commit_sha not in commits:
            commits[entry.commit_sha] = gitio.commit_time(target, entry.commit_sha)
    ordered = sorted(commits.items(), key=lambda it: (it[1], it[0]))
    return FixAttribution(commits=ordered, true_fix=ordered[0][0])


def earliest_release(target: RepoHandle, sha: str) -> tuple[str, datetime] | None:
    """First release containing the commit; None while still unreleased."""
    releases = gitio.releases_containing(target, sha)
    return releases[0] if releases else None


def patch_delay(source_commit_date: datetime, release_date: datetime) -> int:
    """Whole days from the source patch commit to the target release (floored)."""
    return (release_date - source_commit_date).days


def _blame_region(verdict: Verdict) -> tuple[str, tuple[int, int]] | None:
    """Region to blame for the fix: the winning candidate, if it has lines.

    A Fixed verdict with an empty candidate (a deletion that was applied)
    leaves nothing to blame directly; fall back to the located context
    boundaries around it.
    """
    winning = verdict.winning
    if winning is None:
        return None
    cand = winning.candidate
    lo, hi = cand.span
    if lo <= hi:
        return (cand.path, (lo, hi))
    up, down = cand.paired_up, cand.paired_down
    if up is not None and down is not None:
        return (cand.path, (up.es_line, down.ss_line))
    if up is not None:
        return (cand.path, (up.ss_line, up.es_line))
    if down is not None:
        return (cand.path, (down.ss_line, down.es_line))
    return None


def fix_delay(
    target: RepoHandle,
    patch_sha: str | None,
    patch_committed_at: datetime | None,
    verdict: Verdict,
) -> DelayRecord | None:
    """Full attribution for one Fixed verdict; None for other statuses.

    Attribution failures degrade to a record with None fields rather than
    aborting the scan.
    """
    if verdict.status is not Status.FIXED:
        return None
    region = _blame_region(verdict)
    if region is None:
        return DelayRecord(patch_sha, target.name, None, None, None)
    path, span = region
    try:
        attribution = find_fix_commit(target, path, span)
    except AttributionFailed as exc:
        log.warning("%s: %s", target.name, exc)
        return DelayRecord(patch_sha, target.name, None, None, None)
    release = earliest_release(target, attribution.true_fix)
    delay = None
    if release is not None and patch_committed_at is not None:
        delay = patch_delay(patch_committed_at, release[1])
    return DelayRecord(
        patch_sha=patch_sha,
        target=target.name,
        true_fix=attribution.true_fix,
        release=release,
        delay_days=delay,
    )
