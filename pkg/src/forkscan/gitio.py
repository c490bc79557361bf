"""Thin adapter over local git repositories.

Exactly the queries the scan pipeline needs: substring grep at a revision,
file content at a revision, line blame, commit timestamps, and the tags that
contain a commit. All access shells out to the git executable; calls against
one repository are serialized, distinct repositories may be queried in
parallel.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import subprocess
import threading
import urllib.request
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

log = logging.getLogger(__name__)


class GitError(Exception):
    """A git invocation failed or the repository is unreadable."""


class NotFoundError(GitError):
    """The requested object (path, commit) is absent at the revision."""


@dataclass(frozen=True)
class GrepHit:
    path: str
    line_no: int  # 1-based
    raw_line: str


@dataclass(frozen=True)
class BlameEntry:
    commit_sha: str
    line_no: int  # 1-based


class RepoHandle:
    """Handle over a local git repository, read-only.

    default_rev is used for every query unless the caller overrides it.
    """

    def __init__(self, root_path: str | Path, default_rev: str = "HEAD",
                 release_date_overrides: dict[str, datetime] | None = None):
        self.root = Path(root_path)
        self.default_rev = default_rev
        # Tag dates fetched from a remote release listing, keyed by tag name;
        # they take precedence over local tag dates when present.
        self.release_date_overrides = release_date_overrides or {}
        self._lock = threading.Lock()
        if not self.root.is_dir():
            raise GitError(f"not a directory: {self.root}")
        probe = self._run(["rev-parse", "--git-dir"], check=False)
        if probe.returncode != 0:
            raise GitError(f"not a git repository: {self.root}")

    def __repr__(self) -> str:
        return f"RepoHandle({str(self.root)!r}, rev={self.default_rev!r})"

    @property
    def name(self) -> str:
        return self.root.name

    def _run(self, args: list[str], check: bool = True) -> subprocess.CompletedProcess:
        cmd = ["git", "-C", str(self.root), "-c", "core.quotepath=false"] + args
        with self._lock:
            proc = subprocess.run(cmd, capture_output=True)
        if check and proc.returncode != 0:
            raise GitError(
                f"git {' '.join(args)} failed in {self.root}: "
                f"{proc.stderr.decode('utf-8', 'replace').strip()}"
            )
        return proc

    def _rev(self, rev: str | None) -> str:
        return rev if rev is not None else self.default_rev


def _decode(data: bytes) -> str:
    return data.decode("utf-8", errors="replace")


def _split_lines(text: str) -> list[str]:
    """Split file content into lines without inventing a trailing empty one."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


_GREP_LINE_RE = re.compile(r"^(.*?):(\d+):(.*)$", re.DOTALL)


def grep_repo(repo: RepoHandle, keyword: str, rev: str | None = None) -> list[GrepHit]:
    """Every line at rev containing keyword as a fixed substring.

    Case-sensitive; binary files skipped. Hits are ordered by (path, line).
    """
    if not keyword:
        raise ValueError("keyword must be non-empty")
    at = repo._rev(rev)
    proc = repo._run(["grep", "-I", "-n", "-F", "-e", keyword, at], check=False)
    if proc.returncode == 1 and not proc.stderr:
        return []
    if proc.returncode != 0:
        raise GitError(
            f"git grep failed in {repo.root}: {_decode(proc.stderr).strip()}"
        )
    prefix = at + ":"
    hits: list[GrepHit] = []
    for line in _split_lines(_decode(proc.stdout)):
        if line.startswith(prefix):
            line = line[len(prefix):]
        m = _GREP_LINE_RE.match(line)
        if not m:
            continue
        hits.append(GrepHit(path=m.group(1), line_no=int(m.group(2)), raw_line=m.group(3)))
    hits.sort(key=lambda h: (h.path, h.line_no))
    return hits


def read_file_at(repo: RepoHandle, rev: str | None, path: str) -> list[str]:
    """Full file content at rev, split into lines (original text preserved)."""
    at = repo._rev(rev)
    proc = repo._run(["show", f"{at}:{path}"], check=False)
    if proc.returncode != 0:
        err = _decode(proc.stderr)
        if "does not exist" in err or "exists on disk, but not in" in err:
            raise NotFoundError(f"{path} absent at {at} in {repo.root}")
        raise GitError(f"git show {at}:{path} failed: {err.strip()}")
    return _split_lines(_decode(proc.stdout))


_BLAME_HEADER_RE = re.compile(r"^([0-9a-f]{40}) (\d+) (\d+)")


def blame_lines(
    repo: RepoHandle, rev: str | None, path: str, start: int, end: int
) -> list[BlameEntry]:
    """Attribute each line in [start, end] to the last commit touching it."""
    if start < 1 or end < start:
        raise ValueError(f"invalid blame range {start}..{end}")
    at = repo._rev(rev)
    proc = repo._run(
        ["blame", "--porcelain", "-L", f"{start},{end}", at, "--", path],
        check=False,
    )
    if proc.returncode != 0:
        err = _decode(proc.stderr)
        if "has only" in err:
            raise ValueError(f"blame range {start}..{end} out of bounds: {err.strip()}")
        if "no such path" in err:
            raise NotFoundError(f"{path} absent at {at} in {repo.root}")
        raise GitError(f"git blame failed: {err.strip()}")
    entries: list[BlameEntry] = []
    for line in _split_lines(_decode(proc.stdout)):
        m = _BLAME_HEADER_RE.match(line)
        if m:
            entries.append(BlameEntry(commit_sha=m.group(1), line_no=int(m.group(3))))
    entries.sort(key=lambda e: e.line_no)
    return entries


def commit_time(repo: RepoHandle, sha: str) -> datetime:
    """Committer timestamp of a commit, normalized to UTC."""
    proc = repo._run(["show", "-s", "--format=%cI", f"{sha}^{{commit}}"], check=False)
    if proc.returncode != 0:
        raise NotFoundError(f"unknown commit {sha} in {repo.root}")
    stamp = _decode(proc.stdout).strip().splitlines()[-1]
    return datetime.fromisoformat(stamp).astimezone(timezone.utc)


def releases_containing(repo: RepoHandle, sha: str) -> list[tuple[str, datetime]]:
    """Tags whose history contains sha, with creation timestamps, ascending.

    Annotated tags report the tag date, lightweight tags the tagged commit's
    committer date. Remote release-date overrides on the handle, when
    present, replace the local date for tags of the same name.
    """
    proc = repo._run(["tag", "--contains", sha], check=False)
    if proc.returncode != 0:
        raise NotFoundError(
            f"unknown commit {sha} in {repo.root}: {_decode(proc.stderr).strip()}"
        )
    names = set(_split_lines(_decode(proc.stdout)))
    if not names:
        return []
    listing = repo._run(
        ["for-each-ref", "refs/tags", "--format=%(refname:short)%09%(creatordate:iso-strict)"]
    )
    releases: list[tuple[str, datetime]] = []
    for row in _split_lines(_decode(listing.stdout)):
        name, _, stamp = row.partition("\t")
        if name not in names or not stamp:
            continue
        date = repo.release_date_overrides.get(name)
        if date is None:
            date = datetime.fromisoformat(stamp).astimezone(timezone.utc)
        releases.append((name, date))
    releases.sort(key=lambda it: (it[1], it[0]))
    return releases


@dataclass
class RemoteReleaseSource:
    """Optional HTTP lookup of release dates, with an on-disk cache.

    The endpoint must answer GET <url_template>.format(repo=<name>) with a
    JSON array of {"tag": str, "date": ISO-8601 str} objects. Never consulted
    unless explicitly enabled; offline runs use local tag dates only.
    """

    url_template: str
    cache_dir: Path
    timeout: float = 10.0

    def fetch(self, repo_name: str) -> dict[str, datetime]:
        url = self.url_template.format(repo=repo_name)
        digest = hashlib.sha256(url.encode("utf-8")).hexdigest()[:16]
        cache_file = self.cache_dir / f"releases-{digest}.json"
        if cache_file.exists():
            payload = json.loads(cache_file.read_text(encoding="utf-8"))
        else:
            log.info("fetching release listing: %s", url)
            with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            cache_file.write_text(json.dumps(payload), encoding="utf-8")
        dates: dict[str, datetime] = {}
        for entry in payload:
            dates[entry["tag"]] = datetime.fromisoformat(entry["date"]).astimezone(
                timezone.utc
            )
        return dates
