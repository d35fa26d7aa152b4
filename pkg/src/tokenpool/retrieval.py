"""Exact cosine retrieval and the Medium/Hard evaluation protocol.

AP uses the trapezoidal per-positive rule with junk entries removed from the
ranking before scoring. mP@10 counts hits in the cleaned top 10 with
denominator min(10, number of positives). Queries with no positives under the
active protocol are skipped from both means.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class QueryGroundTruth:
    query_id: str
    easy: list[str]
    hard: list[str]
    junk: list[str]
    bbox: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        e, h, j = set(self.easy), set(self.hard), set(self.junk)
        if e & h or e & j or h & j:
            raise ValueError(f"easy/hard/junk overlap for query {self.query_id}")


@dataclass(frozen=True)
class GroundTruth:
    queries: list[QueryGroundTruth]

    @classmethod
    def from_dict(cls, raw: dict) -> "GroundTruth":
        qs = []
        for q in raw["queries"]:
            bbox = tuple(q["bbox"]) if q.get("bbox") is not None else None
            qs.append(
                QueryGroundTruth(
                    query_id=q["id"],
                    easy=list(q.get("easy", [])),
                    hard=list(q.get("hard", [])),
                    junk=list(q.get("junk", [])),
                    bbox=bbox,
                )
            )
        return cls(queries=qs)


@dataclass(frozen=True)
class RankedList:
    ids: list[str]  # descending similarity, ties broken by ascending id
    similarities: np.ndarray


@dataclass(frozen=True)
class EvalResult:
    map_score: float
    mp10: float
    per_query_ap: dict[str, float] = field(default_factory=dict)


def search(database: np.ndarray, ids: list[str], query: np.ndarray) -> RankedList:
    """Rank all database entries by dot product with the query."""
    db = np.asarray(database, dtype=np.float64)
    if db.ndim != 2 or db.shape[0] == 0:
        raise ValueError("database must be a nonempty (n, N) matrix")
    if len(ids) != db.shape[0]:
        raise ValueError("id list length must match database rows")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (db.shape[1],):
        raise ValueError(f"query dim {q.shape} != database dim {db.shape[1]}")
    sims = db @ q
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return RankedList(ids=[ids[i] for i in order], similarities=sims[order])


def compute_ap(ranked: RankedList, positives: set[str], junk: set[str]) -> float:
    """Average precision over a cleaned ranking (junk removed, ranks close up).

    The j-th positive (0-indexed) found at cleaned rank r contributes the
    average of precision just before and at that rank.
    """
    if not positives:
        raise ValueError("positives must be nonempty")
    if positives & junk:
        raise ValueError("junk must be disjoint from positives")
    cleaned = [i for i in ranked.ids if i not in junk]
    ap = 0.0
    j = 0
    for r, item in enumerate(cleaned):
        if item in positives:
            prec_before = 1.0 if r == 0 else j / r
            prec_at = (j + 1) / (r + 1)
            ap += (prec_before + prec_at) / 2.0
            j += 1
    return ap / len(positives)


def protocol_sets(q: QueryGroundTruth, protocol: str) -> tuple[set[str], set[str]]:
    if protocol == "medium":
        return set(q.easy) | set(q.hard), set(q.junk)
    if protocol == "hard":
        return set(q.hard), set(q.junk) | set(q.easy)
    raise ValueError(f"unknown protocol {protocol!r}; expected medium or hard")


def precision_at_10(ranked: RankedList, positives: set[str], junk: set[str]) -> float:
    cleaned = [i for i in ranked.ids if i not in junk]
    hits = sum(1 for i in cleaned[:10] if i in positives)
    return hits / min(10, len(positives))


def evaluate(
    database: np.ndarray,
    db_ids: list[str],
    queries: np.ndarray,
    query_ids: list[str],
    gt: GroundTruth,
    protocol: str,
) -> EvalResult:
    """Mean AP and mean P@10 over all queries with positives under protocol."""
    by_id = {q.query_id: q for q in gt.queries}
    aps = {}
    p10s = []
    for qi, qid in enumerate(query_ids):
        if qid not in by_id:
            raise ValueError(f"query {qid!r} missing from ground truth")
        positives, junk = protocol_sets(by_id[qid], protocol)
        if not positives:
            continue
        ranked = search(database, db_ids, queries[qi])
        aps[qid] = compute_ap(ranked, positives, junk)
        p10s.append(precision_at_10(ranked, positives, junk))
    if not aps:
        raise ValueError(f"no queries with positives under protocol {protocol!r}")
    return EvalResult(
        map_score=float(np.mean(list(aps.values()))),
        mp10=float(np.mean(p10s)),
        per_query_ap=aps,
    )


def crop_query(image: np.ndarray, bbox: tuple[int, int, int, int] | None) -> np.ndarray:
    """Pixel-exact crop of a (C, H, W) image; identity when bbox is absent."""
    if bbox is None:
        return image
    x0, y0, x1, y1 = bbox
    _, h, w = image.shape
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ValueError(f"bbox {bbox} out of bounds for {w}x{h} image")
    return image[:, y0:y1, x0:x1]
