"""Canonical issue dataset: ingestion from a GitHub-compatible tracker,
label canonicalization, JSONL storage, sampling, splits, and candidate
roster filtering for the assignment task.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import ColdStartError, SizeError

logger = logging.getLogger(__name__)

CATEGORIES = ("bug", "enhancement", "question")

# Alias -> category map. GitHub default labels plus common prefixed
# variants; matching is case-insensitive on trimmed strings. Deployments
# can extend it via a JSON file ({category: [aliases]}).
DEFAULT_LABEL_ALIASES: dict[str, frozenset[str]] = {
    "bug": frozenset({"bug", "bug-report", "type: bug", "kind/bug", "defect", "crash"}),
    "enhancement": frozenset({"enhancement", "feature", "feature request",
                              "kind/feature", "type: feature", "improvement"}),
    "question": frozenset({"question", "kind/question", "support", "type: question"}),
}


def load_alias_map(path) -> dict[str, frozenset[str]]:
    """Read a {category: [aliases]} JSON file into a canonical alias map."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    out = {}
    for cat in CATEGORIES:
        out[cat] = frozenset(a.strip().lower() for a in raw.get(cat, ()))
    return out


@dataclass(frozen=True)
class LabelVector:
    """Multi-hot decision over the three canonical categories.

    Any subset is valid, including all-false (unlabelled).
    """

    bug: bool = False
    enhancement: bool = False
    question: bool = False

    def any(self) -> bool:
        return self.bug or self.enhancement or self.question

    def as_tuple(self) -> tuple[bool, bool, bool]:
        return (self.bug, self.enhancement, self.question)

    def to_names(self) -> list[str]:
        return [c for c, on in zip(CATEGORIES, self.as_tuple()) if on]

    def to_dict(self) -> dict[str, bool]:
        return {"bug": self.bug, "enhancement": self.enhancement,
                "question": self.question}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelVector":
        return cls(bug=bool(d["bug"]), enhancement=bool(d["enhancement"]),
                   question=bool(d["question"]))

    @classmethod
    def from_names(cls, names) -> "LabelVector":
        s = set(names)
        return cls(bug="bug" in s, enhancement="enhancement" in s,
                   question="question" in s)


def canonicalize_labels(raw_labels, aliases=None) -> LabelVector:
    """Map raw tracker label strings onto the canonical categories.

    Case-insensitive on trimmed strings; unmatched labels are ignored.
    Total function: never raises.
    """
    if aliases is None:
        aliases = DEFAULT_LABEL_ALIASES
    hits = {c: False for c in CATEGORIES}
    for raw in raw_labels:
        key = raw.strip().lower()
        for cat in CATEGORIES:
            if key in aliases[cat]:
                hits[cat] = True
    return LabelVector(**hits)


@dataclass
class IssueRecord:
    """One issue report in the canonical dataset."""

    id: int
    repo: str
    title: str
    body: str
    raw_labels: list[str]
    labels: LabelVector
    assignee: str | None
    created_at: str
    language: str

    def __post_init__(self):
        # Tracker payloads occasionally smuggle NUL bytes into text.
        self.title = self.title.replace("\x00", "")
        self.body = self.body.replace("\x00", "")


def parse_rfc3339(ts: str) -> datetime:
    """Parse an RFC 3339 timestamp ('Z' suffix included) to aware UTC."""
    if ts.endswith(("Z", "z")):
        ts = ts[:-1] + "+00:00"
    dt = datetime.fromisoformat(ts)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


# ---- dataset file (UTF-8 JSONL, LF endings) ----

_FIELD_ORDER = ("id", "repo", "title", "body", "raw_labels", "labels",
                "assignee", "created_at", "language")


def record_to_obj(rec: IssueRecord) -> dict:
    return {
        "id": rec.id,
        "repo": rec.repo,
        "title": rec.title,
        "body": rec.body,
        "raw_labels": list(rec.raw_labels),
        "labels": rec.labels.to_dict(),
        "assignee": rec.assignee,
        "created_at": rec.created_at,
        "language": rec.language,
    }


def record_from_obj(obj: dict) -> IssueRecord:
    return IssueRecord(
        id=int(obj["id"]),
        repo=obj["repo"],
        title=obj["title"],
        body=obj["body"],
        raw_labels=list(obj["raw_labels"]),
        labels=LabelVector.from_dict(obj["labels"]),
        assignee=obj["assignee"],
        created_at=obj["created_at"],
        language=obj["language"],
    )


def write_dataset(records, path) -> None:
    """Write records as one JSON object per line. Ids must be unique."""
    seen: set[int] = set()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            if rec.id in seen:
                raise ValueError(f"duplicate issue id {rec.id} in dataset")
            seen.add(rec.id)
            f.write(json.dumps(record_to_obj(rec), ensure_ascii=False))
            f.write("\n")


def read_dataset(path) -> list[IssueRecord]:
    records = []
    seen: set[int] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = record_from_obj(obj)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if rec.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate issue id {rec.id}")
            seen.add(rec.id)
            records.append(rec)
    return records


# ---- sampling and splitting ----

def _sorted_by_id(records) -> list[IssueRecord]:
    return sorted(records, key=lambda r: r.id)


def sample_dataset(records, n: int, seed: int) -> list[IssueRecord]:
    """Uniform sample without replacement, deterministic per seed.

    Records are keyed on ascending id before the seeded shuffle, so the
    result is stable under reordering of the input.
    """
    if n < 1:
        raise SizeError("sample size must be positive")
    if n > len(records):
        raise SizeError(f"cannot sample {n} from {len(records)} records")
    ordered = _sorted_by_id(records)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    return [ordered[i] for i in perm[:n]]


@dataclass
class DatasetSplit:
    train: list[IssueRecord]
    test: list[IssueRecord]
    seed: int
    train_fraction: float


def split_dataset(records, train_fraction: float, seed: int) -> DatasetSplit:
    """Disjoint, exhaustive train/test split; |train| = round(f * N) half-up."""
    if not 0.0 < train_fraction < 1.0:
        raise SizeError("train_fraction must be in (0, 1)")
    if len(records) < 2:
        raise SizeError("need at least 2 records to split")
    ordered = _sorted_by_id(records)
    n = len(ordered)
    n_train = math.floor(train_fraction * n + 0.5)
    if n_train == 0 or n_train == n:
        raise SizeError(
            f"degenerate split: {n_train}/{n - n_train} from fraction {train_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train = [ordered[i] for i in perm[:n_train]]
    test = [ordered[i] for i in perm[n_train:]]
    return DatasetSplit(train=train, test=test, seed=seed,
                        train_fraction=train_fraction)


def filter_candidates(records, min_assigned: int,
                      window: tuple[datetime, datetime]):
    """Restrict records to developers with enough recent assignments.

    The roster lists assignees with >= `min_assigned` assigned records
    created inside [window.start, window.end), ordered by descending
    count then login (count ties go to the lexicographically first
    login). Returns (qualifying records, roster).
    """
    if min_assigned < 1:
        raise SizeError("min_assigned must be positive")
    start, end = window
    counts: dict[str, int] = {}
    for rec in records:
        if rec.assignee is None:
            continue
        created = parse_rfc3339(rec.created_at)
        if start <= created < end:
            counts[rec.assignee] = counts.get(rec.assignee, 0) + 1
    roster = sorted((a for a, c in counts.items() if c >= min_assigned),
                    key=lambda a: (-counts[a], a))
    if not roster:
        raise ColdStartError(
            f"no assignee reaches {min_assigned} assignments in the window")
    eligible = set(roster)
    kept = [r for r in records if r.assignee in eligible]
    return kept, roster


# ---- ingestion from the tracker API ----

@dataclass
class IngestTally:
    """Counters for items dropped during ingestion."""

    malformed: int = 0
    pull_requests: int = 0


def search_top_repos(language: str, count: int, api) -> list[str]:
    """Top `count` repositories for a primary language, by star count.

    The query asks the tracker for a star-sorted listing; the collected
    page items are stable-sorted again so the post-condition holds even
    if page boundaries interleave.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    found: list[tuple[int, str]] = []
    params = {"q": f"language:{language}", "sort": "stars", "order": "desc",
              "per_page": 100}
    for page in api.paginate("/search/repositories", params):
        for item in page.get("items", ()):
            found.append((int(item.get("stargazers_count", 0)),
                          item["full_name"]))
        if len(found) >= count:
            break
    found.sort(key=lambda pair: -pair[0])
    return [name for _, name in found[:count]]


def _record_from_api_item(item: dict, repo: str, language: str) -> IssueRecord:
    raw_labels = []
    for lab in item.get("labels") or ():
        raw_labels.append(lab["name"] if isinstance(lab, dict) else str(lab))
    assignees = item.get("assignees") or ()
    if assignees:
        assignee = assignees[0]["login"]
    elif item.get("assignee"):
        assignee = item["assignee"]["login"]
    else:
        assignee = None
    return IssueRecord(
        id=int(item["id"]),
        repo=repo,
        title=item.get("title") or "",
        body=item.get("body") or "",
        raw_labels=raw_labels,
        labels=canonicalize_labels(raw_labels),
        assignee=assignee,
        created_at=item["created_at"],
        language=language,
    )


def fetch_issues(repo: str, api, language: str = "",
                 tally: IngestTally | None = None) -> list[IssueRecord]:
    """All issues of a repository, excluding pull requests.

    Paginates until exhaustion; raw label strings are preserved
    verbatim. Malformed items are skipped and counted in `tally`.
    """
    if tally is None:
        tally = IngestTally()
    records: list[IssueRecord] = []
    params = {"state": "all", "per_page": 100}
    for page in api.paginate(f"/repos/{repo}/issues", params):
        for item in page:
            if "pull_request" in item:
                tally.pull_requests += 1
                continue
            try:
                records.append(_record_from_api_item(item, repo, language))
            except (KeyError, TypeError, ValueError) as exc:
                tally.malformed += 1
                logger.warning("skipping malformed issue in %s: %s", repo, exc)
    return records
