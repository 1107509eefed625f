"""Parse LIDC-style reading-session XML and build consensus nodule annotations.

A scan's XML holds one ``readingSession`` per radiologist; each session holds
unblinded nodule records with an optional characteristics block (malignancy
1-5) and one ROI per slice (``imageZposition`` plus ``edgeMap`` point lists).
Reads from different radiologists are matched into physical nodules
geometrically: contour centroids on a shared slice within a pixel tolerance,
closed transitively. The consensus malignancy is the mean of the present
scores; <= 1.5 is benign, >= 3.5 malignant, anything between excluded.
"""

import json
import math
import statistics
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .errors import SplitproofError

GRID_SIZE = 512
DEFAULT_MATCH_TOLERANCE_PX = 5.0


class MalformedXml(SplitproofError):
    pass


class SchemaViolation(SplitproofError):
    pass


class CoordinateOutOfRange(SplitproofError):
    pass


class NoScores(SplitproofError):
    pass


class ScoreOutOfRange(SplitproofError):
    pass


class NoMatchingSlice(SplitproofError):
    pass


class Label(str, Enum):
    BENIGN = "Benign"
    MALIGNANT = "Malignant"
    EXCLUDED = "Excluded"


@dataclass(frozen=True)
class Contour:
    """One closed planar contour: slice z position plus (x, y) pixel points."""

    z_position: float
    points: tuple
    slice_ref: Optional[str] = None

    def __post_init__(self):
        if not self.points:
            raise ValueError("contour must have at least one point")
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))

    def centroid(self) -> tuple:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return (sum(xs) / len(xs), sum(ys) / len(ys))


@dataclass(frozen=True)
class RadiologistRead:
    """A single radiologist's record of one nodule."""

    reader_index: int
    nodule_id_raw: str
    malignancy: Optional[int]
    contours: tuple

    def __post_init__(self):
        if self.malignancy is not None and self.malignancy not in (1, 2, 3, 4, 5):
            raise ValueError(f"malignancy must be in 1..5, got {self.malignancy}")
        object.__setattr__(self, "contours", tuple(self.contours))

    @property
    def scored(self) -> bool:
        return self.malignancy is not None

    def z_positions(self) -> tuple:
        return tuple(c.z_position for c in self.contours)

    def centroid_at(self, z: float) -> Optional[tuple]:
        """Mean of all contour points recorded at exactly this z, or None."""
        pts = [p for c in self.contours if c.z_position == z for p in c.points]
        if not pts:
            return None
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        return (sum(xs) / len(xs), sum(ys) / len(ys))


@dataclass(frozen=True)
class NoduleAnnotation:
    """A matched cluster of reads with its consensus label.

    ``consensus_malignancy`` is None when no read in the cluster carries a
    score; such clusters are labeled Excluded.
    """

    scan_id: str
    patient_id: str
    reads: tuple
    consensus_malignancy: Optional[float]
    label: Label
    z_positions: tuple

    def scored_read_count(self) -> int:
        return sum(1 for r in self.reads if r.scored)


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _children(elem, name):
    return [c for c in elem if _local(c.tag) == name]


def _child_text(elem, name) -> Optional[str]:
    for c in elem:
        if _local(c.tag) == name:
            return (c.text or "").strip()
    return None


def _parse_root(document: bytes):
    try:
        return ET.fromstring(document)
    except ET.ParseError as e:
        raise MalformedXml(f"not well-formed XML: {e}") from e


def _parse_roi(roi) -> Optional[Contour]:
    z_text = _child_text(roi, "imageZposition")
    if z_text is None or z_text == "":
        raise SchemaViolation("roi lacks an imageZposition element")
    try:
        z = float(z_text)
    except ValueError as e:
        raise SchemaViolation(f"imageZposition is not a number: {z_text!r}") from e
    slice_ref = _child_text(roi, "imageSOP_UID") or None
    points = []
    for edge in _children(roi, "edgeMap"):
        x_text = _child_text(edge, "xCoord")
        y_text = _child_text(edge, "yCoord")
        if x_text is None or y_text is None:
            raise SchemaViolation("edgeMap lacks xCoord/yCoord")
        try:
            x, y = float(x_text), float(y_text)
        except ValueError as e:
            raise SchemaViolation(f"non-numeric edgeMap coordinate: {x_text!r},{y_text!r}") from e
        if not (0 <= x < GRID_SIZE and 0 <= y < GRID_SIZE):
            raise CoordinateOutOfRange(f"point ({x}, {y}) outside [0, {GRID_SIZE})")
        points.append((x, y))
    if not points:
        return None
    return Contour(z_position=z, points=tuple(points), slice_ref=slice_ref)


def parse_lidc_xml(document: bytes):
    """Parse a reading-session XML into per-reader nodule records.

    Returns a list of ``(reader_index, [RadiologistRead, ...])``, one entry
    per readingSession in document order. Nodule records without any ROI
    points are skipped; a characteristics/malignancy value, when present,
    must be an integer 1-5.
    """
    root = _parse_root(document)
    sessions = []
    for reader_index, session in enumerate(_children(root, "readingSession")):
        reads = []
        for nodule in _children(session, "unblindedReadNodule"):
            nodule_id = _child_text(nodule, "noduleID")
            if nodule_id is None or nodule_id == "":
                raise SchemaViolation("unblindedReadNodule lacks a noduleID")
            malignancy = None
            for chars in _children(nodule, "characteristics"):
                mal_text = _child_text(chars, "malignancy")
                if mal_text:
                    try:
                        malignancy = int(mal_text)
                    except ValueError as e:
                        raise SchemaViolation(f"malignancy is not an integer: {mal_text!r}") from e
                    if malignancy not in (1, 2, 3, 4, 5):
                        raise SchemaViolation(f"malignancy outside 1..5: {malignancy}")
            contours = []
            for roi in _children(nodule, "roi"):
                contour = _parse_roi(roi)
                if contour is not None:
                    contours.append(contour)
            if not contours:
                continue
            reads.append(
                RadiologistRead(
                    reader_index=reader_index,
                    nodule_id_raw=nodule_id,
                    malignancy=malignancy,
                    contours=tuple(contours),
                )
            )
        sessions.append((reader_index, reads))
    return sessions


def scan_series_uid(document: bytes) -> Optional[str]:
    """SeriesInstanceUid from the response header, if the document has one."""
    root = _parse_root(document)
    for header in _children(root, "ResponseHeader"):
        uid = _child_text(header, "SeriesInstanceUid")
        if uid:
            return uid
        uid = _child_text(header, "SeriesInstanceUID")
        if uid:
            return uid
    return None


def _reads_match(a: RadiologistRead, b: RadiologistRead, tolerance: float) -> bool:
    shared = set(a.z_positions()) & set(b.z_positions())
    for z in shared:
        ca = a.centroid_at(z)
        cb = b.centroid_at(z)
        if ca is None or cb is None:
            continue
        if math.hypot(ca[0] - cb[0], ca[1] - cb[1]) <= tolerance:
            return True
    return False


def consensus_malignancy(reads: Sequence[RadiologistRead]) -> float:
    """Arithmetic mean of the malignancy scores present among the reads."""
    scores = [r.malignancy for r in reads if r.scored]
    if not scores:
        raise NoScores("no read carries a malignancy score")
    return statistics.fmean(scores)


def classify_malignancy(mean_score: float) -> Label:
    """<= 1.5 benign, >= 3.5 malignant, otherwise excluded."""
    if not 1.0 <= mean_score <= 5.0:
        raise ScoreOutOfRange(f"mean score must be in [1, 5], got {mean_score}")
    if mean_score <= 1.5:
        return Label.BENIGN
    if mean_score >= 3.5:
        return Label.MALIGNANT
    return Label.EXCLUDED


def group_reads_into_nodules(
    sessions,
    match_tolerance_px: float = DEFAULT_MATCH_TOLERANCE_PX,
    *,
    scan_id: str = "",
    patient_id: str = "",
):
    """Cluster reads from all sessions into per-nodule annotations.

    Reads are linked when their contour centroids on any shared z position
    lie within ``match_tolerance_px``; linking is closed transitively, so
    every read lands in exactly one annotation (singletons allowed).
    """
    if match_tolerance_px <= 0:
        raise ValueError("match_tolerance_px must be > 0")
    reads = [r for _, session_reads in sessions for r in session_reads]
    parent = list(range(len(reads)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for i in range(len(reads)):
        for j in range(i + 1, len(reads)):
            if _reads_match(reads[i], reads[j], match_tolerance_px):
                union(i, j)

    groups = {}
    for i in range(len(reads)):
        groups.setdefault(find(i), []).append(reads[i])

    annotations = []
    for root in sorted(groups):
        members = tuple(groups[root])
        try:
            mean = consensus_malignancy(members)
            label = classify_malignancy(mean)
        except NoScores:
            mean, label = None, Label.EXCLUDED
        zs = tuple(sorted({c.z_position for r in members for c in r.contours}))
        annotations.append(
            NoduleAnnotation(
                scan_id=scan_id,
                patient_id=patient_id,
                reads=members,
                consensus_malignancy=mean,
                label=label,
                z_positions=zs,
            )
        )
    return annotations


def filter_min_readers(annotations, k: int):
    """Keep annotations scored by at least k radiologists; order preserved."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [a for a in annotations if a.scored_read_count() >= k]


def default_z_tolerance(scan_z_positions: Sequence[float]) -> float:
    """Half the median slice spacing; 0 for single-slice scans."""
    if len(scan_z_positions) < 2:
        return 0.0
    spacings = [
        abs(b - a) for a, b in zip(scan_z_positions, list(scan_z_positions)[1:])
    ]
    return statistics.median(spacings) / 2.0


def slices_for_nodule(
    annotation: NoduleAnnotation,
    scan_z_positions: Sequence[float],
    z_tolerance_mm: Optional[float] = None,
):
    """Indices of scan slices within tolerance of any contour z position.

    Tolerance defaults to half the scan's median slice spacing. Result is
    deduplicated and ascending; raises NoMatchingSlice when empty.
    """
    zs = list(scan_z_positions)
    if not zs:
        raise ValueError("scan_z_positions must be non-empty")
    diffs = [b - a for a, b in zip(zs, zs[1:])]
    if diffs and not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
        raise ValueError("scan_z_positions must be strictly monotonic")
    if z_tolerance_mm is None:
        z_tolerance_mm = default_z_tolerance(zs)
    if z_tolerance_mm < 0:
        raise ValueError("z_tolerance_mm must be >= 0")
    hits = set()
    for z in annotation.z_positions:
        for idx, scan_z in enumerate(zs):
            if abs(scan_z - z) <= z_tolerance_mm:
                hits.add(idx)
    if not hits:
        raise NoMatchingSlice(
            f"no slice within {z_tolerance_mm} mm of contour z positions"
        )
    return sorted(hits)


def annotation_to_record(a: NoduleAnnotation) -> dict:
    return {
        "scan_id": a.scan_id,
        "patient_id": a.patient_id,
        "consensus_malignancy": a.consensus_malignancy,
        "label": a.label.value,
        "reads": [
            {
                "reader_index": r.reader_index,
                "nodule_id_raw": r.nodule_id_raw,
                "malignancy": r.malignancy,
                "contours": [
                    {
                        "z_position": c.z_position,
                        "slice_ref": c.slice_ref,
                        "points": [[x, y] for x, y in c.points],
                    }
                    for c in r.contours
                ],
            }
            for r in a.reads
        ],
        "z_positions": list(a.z_positions),
    }


def annotation_from_record(d: dict) -> NoduleAnnotation:
    reads = tuple(
        RadiologistRead(
            reader_index=r["reader_index"],
            nodule_id_raw=r["nodule_id_raw"],
            malignancy=r["malignancy"],
            contours=tuple(
                Contour(
                    z_position=c["z_position"],
                    points=tuple((p[0], p[1]) for p in c["points"]),
                    slice_ref=c["slice_ref"],
                )
                for c in r["contours"]
            ),
        )
        for r in d["reads"]
    )
    return NoduleAnnotation(
        scan_id=d["scan_id"],
        patient_id=d["patient_id"],
        reads=reads,
        consensus_malignancy=d["consensus_malignancy"],
        label=Label(d["label"]),
        z_positions=tuple(d["z_positions"]),
    )


def write_annotations(annotations, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            fh.write(json.dumps(annotation_to_record(a)) + "\n")


def read_annotations(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(annotation_from_record(json.loads(line)))
    return out
