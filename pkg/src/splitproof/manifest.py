"""Dataset manifests, fair/unfair split generation, MCCV schedules, leakage audits.

All randomness flows through numpy's Philox counter-based generator seeded by
an explicit 64-bit seed, so any (inputs, seed) pair reproduces the same
assignment bit-for-bit on any platform. OS entropy is never consulted.

A split is *unfair* when images are shuffled and partitioned individually
(images of one patient may cross folds) and *fair* when whole patients are
assigned to a single fold. The audit quantifies the difference: it lists
every patient whose records touch two or more folds.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .annotations import Label, NoduleAnnotation, slices_for_nodule
from .errors import SplitproofError


class MissingImageFile(SplitproofError):
    pass


class ExcludedLabel(SplitproofError):
    pass


class DuplicateAngle(SplitproofError):
    pass


class EmptyManifest(SplitproofError):
    pass


class TooFewPatients(SplitproofError):
    pass


class FractionDegenerate(SplitproofError):
    pass


class UnassignedRecord(SplitproofError):
    pass


class Fold(str, Enum):
    TRAIN = "Train"
    VALIDATION = "Validation"
    TEST = "Test"


class SplitMode(str, Enum):
    UNFAIR_IMAGE_LEVEL = "UnfairImageLevel"
    FAIR_PATIENT_LEVEL = "FairPatientLevel"


@dataclass(frozen=True)
class ImageRecord:
    """One image of one nodule slice; augmentation is a rotation angle or None."""

    record_id: str
    patient_id: str
    scan_id: str
    slice_index: int
    label: Label
    image_path: str
    mask_path: Optional[str] = None
    augmentation: Optional[float] = None

    def __post_init__(self):
        if self.label not in (Label.BENIGN, Label.MALIGNANT):
            raise ExcludedLabel(f"record {self.record_id} has label {self.label.value}")
        if self.augmentation == 0:
            raise ValueError("augmentation angle 0 means 'original'; use None")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    provenance: str = ""
    class_counts: dict = field(init=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        seen = set()
        for r in records:
            if r.record_id in seen:
                raise ValueError(f"duplicate record_id {r.record_id!r}")
            seen.add(r.record_id)
        counts = {}
        for r in records:
            counts[r.label] = counts.get(r.label, 0) + 1
        object.__setattr__(self, "class_counts", counts)

    def __len__(self):
        return len(self.records)

    def patients(self):
        return sorted({r.patient_id for r in self.records})

    def records_by_patient(self):
        by = {}
        for r in self.records:
            by.setdefault(r.patient_id, []).append(r)
        return by


@dataclass(frozen=True)
class SplitAssignment:
    fold_of: dict
    seed: int
    mode: SplitMode
    fractions: Optional[tuple] = None
    counts: Optional[dict] = None


@dataclass(frozen=True)
class MccvSchedule:
    """Per-epoch patient partitions; the test set never changes."""

    epochs: tuple
    test_patients: frozenset
    seed: int


@dataclass(frozen=True)
class LeakageReport:
    leaked_patients: tuple
    leaked_record_pairs_count: int
    is_clean: bool
    leaked_augment_groups: Optional[int] = None


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _fold_layout(fractions) -> list:
    fracs = [float(f) for f in fractions]
    if len(fracs) == 3:
        folds = [Fold.TRAIN, Fold.VALIDATION, Fold.TEST]
    elif len(fracs) == 2:
        folds = [Fold.TRAIN, Fold.TEST]
    else:
        raise ValueError("fractions must have 2 (train, test) or 3 entries")
    if any(f <= 0 for f in fracs):
        raise ValueError("fractions must all be positive; drop the fold instead")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fracs)}")
    return list(zip(folds, fracs))


def largest_remainder_counts(n: int, fractions: Sequence[float]) -> list:
    """Apportion n items to len(fractions) bins; each within 1 of its target."""
    targets = [f * n for f in fractions]
    base = [math.floor(t) for t in targets]
    leftover = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: (-(targets[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def build_manifest(annotations: Sequence[NoduleAnnotation], image_root, slice_map) -> DatasetManifest:
    """One ImageRecord per (nodule, slice) pair.

    ``slice_map`` maps scan_id to that scan's ordered slice z positions; each
    annotation's slices come from matching its contour z positions against
    them. Image files are expected at
    ``image_root/<scan_id>/slice_<index>.png``.
    """
    root = Path(image_root)
    records = []
    nodule_counter = {}
    for a in annotations:
        if a.label not in (Label.BENIGN, Label.MALIGNANT):
            raise ExcludedLabel(f"annotation on scan {a.scan_id} is {a.label.value}")
        if a.scan_id not in slice_map:
            raise KeyError(f"no slice z positions for scan {a.scan_id}")
        k = nodule_counter.get(a.scan_id, 0)
        nodule_counter[a.scan_id] = k + 1
        for idx in slices_for_nodule(a, slice_map[a.scan_id]):
            rel = f"{a.scan_id}/slice_{idx:04d}.png"
            if not (root / rel).is_file():
                raise MissingImageFile(str(root / rel))
            records.append(
                ImageRecord(
                    record_id=f"{a.scan_id}.n{k}.s{idx}",
                    patient_id=a.patient_id,
                    scan_id=a.scan_id,
                    slice_index=idx,
                    label=a.label,
                    image_path=rel,
                )
            )
    records.sort(key=lambda r: (r.patient_id, r.scan_id, r.slice_index, r.record_id))
    return DatasetManifest(tuple(records), provenance=f"built from {len(annotations)} annotations")


def augment_plan(manifest: DatasetManifest, angles: Sequence[float]) -> DatasetManifest:
    """Add one planned rotation record per (record, angle).

    Counts multiply by 1 + len(angles). Augmented records keep the source
    image path; the angle travels in the ``augmentation`` field for the
    consumer to apply.
    """
    angles = [float(a) for a in angles]
    if not angles:
        raise ValueError("angles must be non-empty")
    if any(a == 0 for a in angles):
        raise ValueError("angle 0 is the original image; remove it")
    if len(set(angles)) != len(angles):
        raise DuplicateAngle(f"duplicate angles in {angles}")
    if any(r.augmentation is not None for r in manifest.records):
        raise ValueError("manifest already contains augmented records")
    records = list(manifest.records)
    for r in manifest.records:
        for a in angles:
            records.append(
                ImageRecord(
                    record_id=f"{r.record_id}.rot{a:+g}",
                    patient_id=r.patient_id,
                    scan_id=r.scan_id,
                    slice_index=r.slice_index,
                    label=r.label,
                    image_path=r.image_path,
                    mask_path=r.mask_path,
                    augmentation=a,
                )
            )
    return DatasetManifest(
        tuple(records),
        provenance=manifest.provenance + f" +rotations {sorted(angles)}",
    )


def unfair_split(manifest: DatasetManifest, fractions, seed: int) -> SplitAssignment:
    """Image-level shuffle and per-class partition (leaks patients across folds).

    Records of each class are shuffled with Philox(seed) and dealt to folds
    by largest-remainder counts, so every fold keeps the class ratio.
    """
    layout = _fold_layout(fractions)
    if not manifest.records:
        raise EmptyManifest("cannot split an empty manifest")
    rng = _rng(seed)
    fold_of = {}
    for label in (Label.BENIGN, Label.MALIGNANT):
        ids = [r.record_id for r in manifest.records if r.label is label]
        if not ids:
            continue
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        sizes = largest_remainder_counts(len(ids), [f for _, f in layout])
        pos = 0
        for (fold, _), size in zip(layout, sizes):
            for rid in shuffled[pos : pos + size]:
                fold_of[rid] = fold
            pos += size
    return SplitAssignment(
        fold_of=fold_of,
        seed=seed,
        mode=SplitMode.UNFAIR_IMAGE_LEVEL,
        fractions=tuple(f for _, f in layout),
    )


def unfair_split_counts(manifest: DatasetManifest, counts: dict, seed: int) -> SplitAssignment:
    """Image-level split with exact per-class fold counts.

    ``counts`` maps each label present in the manifest to (train, validation,
    test) sizes that must sum to that class's record count. This exists
    because published fold sizes do not always match any single fraction
    triple.
    """
    if not manifest.records:
        raise EmptyManifest("cannot split an empty manifest")
    folds = [Fold.TRAIN, Fold.VALIDATION, Fold.TEST]
    rng = _rng(seed)
    fold_of = {}
    for label in (Label.BENIGN, Label.MALIGNANT):
        ids = [r.record_id for r in manifest.records if r.label is label]
        if not ids:
            continue
        if label not in counts:
            raise ValueError(f"no counts given for class {label.value}")
        sizes = [int(c) for c in counts[label]]
        if len(sizes) != 3 or any(c < 0 for c in sizes):
            raise ValueError(f"counts for {label.value} must be 3 non-negative ints")
        if sum(sizes) != len(ids):
            raise ValueError(
                f"counts for {label.value} sum to {sum(sizes)}, class has {len(ids)} records"
            )
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        pos = 0
        for fold, size in zip(folds, sizes):
            for rid in shuffled[pos : pos + size]:
                fold_of[rid] = fold
            pos += size
    return SplitAssignment(
        fold_of=fold_of,
        seed=seed,
        mode=SplitMode.UNFAIR_IMAGE_LEVEL,
        counts={label.value: tuple(int(c) for c in counts[label]) for label in counts},
    )


def fair_split(manifest: DatasetManifest, fractions, seed: int) -> SplitAssignment:
    """Patient-level split: every record of a patient lands in one fold.

    Patients are visited in shuffled order and each goes to the fold with
    the largest remaining record deficit, so fold record counts track the
    fractions as closely as whole patients allow.
    """
    layout = _fold_layout(fractions)
    if not manifest.records:
        raise EmptyManifest("cannot split an empty manifest")
    by_patient = manifest.records_by_patient()
    patients = sorted(by_patient)
    if len(patients) < 3:
        raise TooFewPatients(f"need >= 3 patients, have {len(patients)}")
    rng = _rng(seed)
    order = rng.permutation(len(patients))
    total = len(manifest.records)
    targets = [f * total for _, f in layout]
    assigned = [0.0] * len(layout)
    fold_of = {}
    for i in order:
        patient = patients[i]
        deficits = [targets[j] - assigned[j] for j in range(len(layout))]
        j = max(range(len(layout)), key=lambda j: (deficits[j], -j))
        fold = layout[j][0]
        for r in by_patient[patient]:
            fold_of[r.record_id] = fold
        assigned[j] += len(by_patient[patient])
    return SplitAssignment(
        fold_of=fold_of,
        seed=seed,
        mode=SplitMode.FAIR_PATIENT_LEVEL,
        fractions=tuple(f for _, f in layout),
    )


def mccv_schedule(
    patients,
    test_patients,
    validation_fraction: float,
    epochs: int,
    seed: int,
) -> MccvSchedule:
    """Monte Carlo Cross Validation: re-draw the validation patients per epoch.

    Non-test patients are re-partitioned independently each epoch into
    train/validation with ceil(validation_fraction * n) validation patients.
    The test set is fixed for the whole schedule.
    """
    patients = frozenset(patients)
    test = frozenset(test_patients)
    if not test <= patients:
        raise ValueError("test_patients must be a subset of patients")
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError("validation_fraction must be in (0, 1)")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    pool = sorted(patients - test)
    n_val = math.ceil(validation_fraction * len(pool))
    if n_val == 0 or n_val >= len(pool):
        raise FractionDegenerate(
            f"{n_val} validation patients out of a pool of {len(pool)}"
        )
    rng = _rng(seed)
    epoch_partitions = []
    for _ in range(epochs):
        order = rng.permutation(len(pool))
        validation = frozenset(pool[i] for i in order[:n_val])
        train = frozenset(pool[i] for i in order[n_val:])
        epoch_partitions.append((train, validation))
    return MccvSchedule(epochs=tuple(epoch_partitions), test_patients=test, seed=seed)


def leakage_audit(manifest: DatasetManifest, assignment: SplitAssignment) -> LeakageReport:
    """List patients whose records cross folds and count the crossing pairs.

    When the manifest carries augmentation provenance, rotated copies of one
    source slice landing in different folds are reported too (as
    ``leaked_augment_groups``); they do not affect ``is_clean``, which is
    about patients.
    """
    per_patient_folds = {}
    for r in manifest.records:
        fold = assignment.fold_of.get(r.record_id)
        if fold is None:
            raise UnassignedRecord(f"record {r.record_id} has no fold")
        per_patient_folds.setdefault(r.patient_id, {}).setdefault(fold, 0)
        per_patient_folds[r.patient_id][fold] += 1

    leaked = []
    pair_total = 0
    for patient in sorted(per_patient_folds):
        fold_counts = per_patient_folds[patient]
        if len(fold_counts) < 2:
            continue
        leaked.append((patient, frozenset(fold_counts)))
        counts = list(fold_counts.values())
        for i in range(len(counts)):
            for j in range(i + 1, len(counts)):
                pair_total += counts[i] * counts[j]

    augment_groups = None
    if any(r.augmentation is not None for r in manifest.records):
        group_folds = {}
        for r in manifest.records:
            key = (r.patient_id, r.scan_id, r.slice_index)
            group_folds.setdefault(key, set()).add(assignment.fold_of[r.record_id])
        augment_groups = sum(1 for folds in group_folds.values() if len(folds) > 1)

    return LeakageReport(
        leaked_patients=tuple(leaked),
        leaked_record_pairs_count=pair_total,
        is_clean=not leaked,
        leaked_augment_groups=augment_groups,
    )


# ---------------------------------------------------------------------------
# file formats


def record_to_dict(r: ImageRecord) -> dict:
    return {
        "record_id": r.record_id,
        "patient_id": r.patient_id,
        "scan_id": r.scan_id,
        "slice_index": r.slice_index,
        "label": r.label.value,
        "image_path": r.image_path,
        "mask_path": r.mask_path,
        "augmentation": r.augmentation,
    }


def record_from_dict(d: dict) -> ImageRecord:
    return ImageRecord(
        record_id=d["record_id"],
        patient_id=d["patient_id"],
        scan_id=d["scan_id"],
        slice_index=d["slice_index"],
        label=Label(d["label"]),
        image_path=d["image_path"],
        mask_path=d.get("mask_path"),
        augmentation=d.get("augmentation"),
    )


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in manifest.records:
            fh.write(json.dumps(record_to_dict(r)) + "\n")


def read_manifest(path, provenance: str = "") -> DatasetManifest:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return DatasetManifest(tuple(records), provenance=provenance or f"read from {path}")


def assignment_sidecar_path(csv_path) -> Path:
    return Path(str(csv_path) + ".json")


def write_assignment(assignment: SplitAssignment, csv_path) -> None:
    """CSV of record_id,fold (sorted by record_id) plus a JSON sidecar."""
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", "fold"])
        for rid in sorted(assignment.fold_of):
            writer.writerow([rid, assignment.fold_of[rid].value])
    sidecar = {
        "seed": assignment.seed,
        "mode": assignment.mode.value,
        "fractions": list(assignment.fractions) if assignment.fractions else None,
    }
    if assignment.counts is not None:
        sidecar["counts"] = {k: list(v) for k, v in sorted(assignment.counts.items())}
    with open(assignment_sidecar_path(csv_path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def read_assignment(csv_path) -> SplitAssignment:
    fold_of = {}
    with open(csv_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["record_id", "fold"]:
            raise ValueError(f"unexpected assignment header: {header}")
        for rid, fold in reader:
            fold_of[rid] = Fold(fold)
    with open(assignment_sidecar_path(csv_path), encoding="utf-8") as fh:
        sidecar = json.load(fh)
    counts = sidecar.get("counts")
    return SplitAssignment(
        fold_of=fold_of,
        seed=sidecar["seed"],
        mode=SplitMode(sidecar["mode"]),
        fractions=tuple(sidecar["fractions"]) if sidecar.get("fractions") else None,
        counts={k: tuple(v) for k, v in counts.items()} if counts else None,
    )


def leakage_report_to_dict(report: LeakageReport) -> dict:
    return {
        "is_clean": report.is_clean,
        "leaked_record_pairs_count": report.leaked_record_pairs_count,
        "leaked_patients": [
            {"patient_id": patient, "folds": sorted(f.value for f in folds)}
            for patient, folds in report.leaked_patients
        ],
        "leaked_augment_groups": report.leaked_augment_groups,
    }


def write_leakage_report(report: LeakageReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(leakage_report_to_dict(report), fh, indent=2)
        fh.write("\n")


def schedule_to_dict(schedule: MccvSchedule) -> dict:
    return {
        "seed": schedule.seed,
        "test_patients": sorted(schedule.test_patients),
        "epochs": [
            {"train": sorted(train), "validation": sorted(val)}
            for train, val in schedule.epochs
        ],
    }


def write_schedule(schedule: MccvSchedule, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schedule_to_dict(schedule), fh, indent=2)
        fh.write("\n")


def read_schedule(path) -> MccvSchedule:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return MccvSchedule(
        epochs=tuple(
            (frozenset(e["train"]), frozenset(e["validation"])) for e in d["epochs"]
        ),
        test_patients=frozenset(d["test_patients"]),
        seed=d["seed"],
    )
