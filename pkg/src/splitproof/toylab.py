"""Desk-scale synthetic reproduction of the fair/unfair accuracy gap.

Every patient gets a fixed pseudo-random fingerprint texture stamped on all
of their images; malignant patients' images additionally carry a Gaussian
blob lesion at a random position per image. A patient is wholly benign or
wholly malignant, so under image-level (unfair) splitting the fingerprint
becomes a label-correlated shortcut that a classifier can memorize, while
patient-level (fair) splitting forces it to rely on the lesion.

The classifier is logistic regression on raw pixels: enough capacity to
memorize fingerprints, and its saliency analog (|w * x|, normalized) is
exact rather than approximated.
"""

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import manifest as mf
from .annotations import Label
from .cam import HeatMap
from .errors import SplitproofError
from .imaging import normalize_unit

DEFAULT_CONFIG_RESOURCE = "data/toy_default_config.json"


class ConfigInvalid(SplitproofError):
    pass


class Diverged(SplitproofError):
    pass


class ExperimentMode(str, Enum):
    FAIR = "Fair"
    UNFAIR = "Unfair"


@dataclass(frozen=True)
class ToyConfig:
    image_size: int = 32
    n_patients: int = 128
    images_per_patient: int = 12
    fingerprint_strength: float = 1.0
    lesion_strength: float = 0.26
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 6:
            raise ConfigInvalid("need at least 6 patients (train/val/test/challenge)")
        if self.image_size < 8 or self.images_per_patient < 2:
            raise ConfigInvalid("image_size must be >= 8, images_per_patient >= 2")
        if min(self.fingerprint_strength, self.lesion_strength, self.noise_sigma) < 0:
            raise ConfigInvalid("strengths and noise sigma must be >= 0")


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 2.0
    epochs: int = 300
    l2: float = 1e-3


@dataclass(frozen=True)
class ToyModel:
    weights: np.ndarray  # (size, size)
    bias: float
    loss_history: tuple = ()

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if not (np.isfinite(w).all() and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def scores(self, images: np.ndarray) -> np.ndarray:
        flat = images.reshape(images.shape[0], -1)
        return flat @ self.weights.ravel() + self.bias

    def predict(self, images: np.ndarray) -> np.ndarray:
        return (self.scores(images) >= 0.0).astype(np.int64)


@dataclass(frozen=True)
class Cohort:
    images: np.ndarray  # (n, size, size) in [0, 1]
    labels: np.ndarray  # (n,) in {0, 1}; 1 = malignant
    patient_ids: tuple
    lesion_masks: np.ndarray  # (n, size, size) bool; all-false for benign


@dataclass(frozen=True)
class ExperimentResult:
    mode: ExperimentMode
    test_accuracy: float
    challenge_accuracy: float
    mean_saliency_on_lesion: float
    mean_saliency_off_lesion: float
    seed: int


_FP_DIVISOR = 4


def _patient_rng(seed: int, patient_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, patient_index))))


def patient_label(patient_index: int) -> int:
    """Alternating per-patient class: odd indices are malignant."""
    return patient_index % 2


def generate_cohort(config: ToyConfig) -> Cohort:
    """Deterministic synthetic cohort; see the module docstring for the recipe."""
    s = config.image_size
    fp_size = max(4, s // _FP_DIVISOR)
    blob_sigma = s / 12.0
    base = 0.35
    images, labels, patient_ids, masks = [], [], [], []
    yy, xx = np.mgrid[0:s, 0:s]
    for p in range(config.n_patients):
        rng = _patient_rng(config.seed, p)
        # zero-sum texture: identifies the patient without biasing the
        # image's total energy (which is the lesion's signal)
        pattern = (rng.random((fp_size, fp_size)) - 0.5) * config.fingerprint_strength
        pattern -= pattern.mean()
        top, left = (int(v) for v in rng.integers(0, s - fp_size + 1, size=2))
        label = patient_label(p)
        pid = f"P{p:03d}"
        for _ in range(config.images_per_patient):
            img = base + rng.normal(0.0, config.noise_sigma, size=(s, s))
            img[top : top + fp_size, left : left + fp_size] += pattern
            mask = np.zeros((s, s), dtype=bool)
            if label == 1:
                margin = int(np.ceil(2 * blob_sigma))
                cy, cx = rng.integers(margin, s - margin, size=2)
                d2 = (yy - cy) ** 2 + (xx - cx) ** 2
                img += config.lesion_strength * np.exp(-d2 / (2 * blob_sigma**2))
                mask = d2 <= (2 * blob_sigma) ** 2
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(label)
            patient_ids.append(pid)
            masks.append(mask)
    return Cohort(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        patient_ids=tuple(patient_ids),
        lesion_masks=np.stack(masks),
    )


def train_classifier(images: np.ndarray, labels: np.ndarray, hyper: TrainHyper = TrainHyper()) -> ToyModel:
    """Full-batch gradient descent on l2-penalized logistic loss.

    Deterministic: parameters start at zero and the data order does not
    matter (full-batch). Raises Diverged if the loss leaves the reals.
    """
    n = images.shape[0]
    y = np.asarray(labels, dtype=np.float64)
    if n < 2 or len(np.unique(y)) < 2:
        raise ValueError("need at least one example of each class")
    x = images.reshape(n, -1).astype(np.float64)
    w = np.zeros(x.shape[1])
    b = 0.0
    losses = []
    for _ in range(hyper.epochs):
        z = x @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        eps = 1e-12
        loss = float(
            -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
            + 0.5 * hyper.l2 * float(w @ w)
        )
        if not np.isfinite(loss):
            raise Diverged(f"loss became {loss}")
        losses.append(loss)
        residual = p - y
        grad_w = x.T @ residual / n + hyper.l2 * w
        grad_b = float(residual.mean())
        w = w - hyper.learning_rate * grad_w
        b = b - hyper.learning_rate * grad_b
    return ToyModel(weights=w.reshape(images.shape[1:]), bias=b, loss_history=tuple(losses))


def logistic_gradient(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float):
    """Analytic gradient of the training loss at (w, b); used by the tests'
    finite-difference oracle as the differentiation point."""
    n = x.shape[0]
    p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
    return x.T @ (p - y) / n + l2 * w, float((p - y).mean())


def saliency_map(model: ToyModel, image: np.ndarray) -> HeatMap:
    """Absolute per-pixel contribution |w * x|, min-max normalized."""
    img = np.asarray(image, dtype=np.float64)
    if img.shape != model.weights.shape:
        raise ValueError(f"image shape {img.shape} != weights shape {model.weights.shape}")
    return HeatMap(normalize_unit(np.abs(model.weights * img)))


def challenge_patient_count(config: ToyConfig) -> int:
    """Even count, >= 2, roughly a fifth of the cohort."""
    return max(2, (config.n_patients // 5) // 2 * 2)


def _toy_manifest(cohort: Cohort, indices) -> mf.DatasetManifest:
    records = []
    for i in indices:
        pid = cohort.patient_ids[i]
        records.append(
            mf.ImageRecord(
                record_id=f"{pid}.i{i:04d}",
                patient_id=pid,
                scan_id=pid,
                slice_index=i,
                label=Label.MALIGNANT if cohort.labels[i] else Label.BENIGN,
                image_path=f"{pid}/img_{i:04d}.png",
                mask_path=f"{pid}/mask_{i:04d}.png" if cohort.labels[i] else None,
            )
        )
    return mf.DatasetManifest(tuple(records), provenance="toy cohort")


def run_experiment(
    config: ToyConfig,
    mode: ExperimentMode,
    fractions=(0.6, 0.2, 0.2),
    hyper: TrainHyper = TrainHyper(),
) -> ExperimentResult:
    """Generate, split, train, and evaluate one fair or unfair run.

    The last ``challenge_patient_count(config)`` patients never enter the
    split; they are the challenge set. Training uses the Train fold only;
    accuracies are reported on the Test fold and on the challenge images.
    """
    mode = ExperimentMode(mode)
    cohort = generate_cohort(config)
    n_challenge = challenge_patient_count(config)
    challenge_ids = {f"P{p:03d}" for p in range(config.n_patients - n_challenge, config.n_patients)}
    pool_idx = [i for i, pid in enumerate(cohort.patient_ids) if pid not in challenge_ids]
    challenge_idx = [i for i, pid in enumerate(cohort.patient_ids) if pid in challenge_ids]
    pool_manifest = _toy_manifest(cohort, pool_idx)

    if mode is ExperimentMode.FAIR:
        assignment = mf.fair_split(pool_manifest, fractions, seed=config.seed)
    else:
        assignment = mf.unfair_split(pool_manifest, fractions, seed=config.seed)

    index_of = {r.record_id: r.slice_index for r in pool_manifest.records}
    train_idx = [index_of[rid] for rid, f in assignment.fold_of.items() if f is mf.Fold.TRAIN]
    test_idx = [index_of[rid] for rid, f in assignment.fold_of.items() if f is mf.Fold.TEST]
    train_idx.sort()
    test_idx.sort()

    model = train_classifier(cohort.images[train_idx], cohort.labels[train_idx], hyper)

    def accuracy(indices) -> float:
        preds = model.predict(cohort.images[indices])
        return float((preds == cohort.labels[indices]).mean())

    test_accuracy = accuracy(test_idx)
    challenge_accuracy = accuracy(challenge_idx)

    on_values, off_values = [], []
    for i in challenge_idx:
        if cohort.labels[i] != 1:
            continue
        sal = saliency_map(model, cohort.images[i]).data
        mask = cohort.lesion_masks[i]
        on_values.append(float(sal[mask].mean()))
        off_values.append(float(sal[~mask].mean()))
    return ExperimentResult(
        mode=mode,
        test_accuracy=test_accuracy,
        challenge_accuracy=challenge_accuracy,
        mean_saliency_on_lesion=float(np.mean(on_values)),
        mean_saliency_off_lesion=float(np.mean(off_values)),
        seed=config.seed,
    )


def sweep(config: ToyConfig, modes, seeds, fractions=(0.6, 0.2, 0.2), hyper: TrainHyper = TrainHyper()):
    """One ExperimentResult per (mode, seed), the seed replacing config.seed."""
    results = []
    for mode in modes:
        for seed in seeds:
            results.append(run_experiment(replace(config, seed=int(seed)), mode, fractions, hyper))
    return results


# ---------------------------------------------------------------------------
# config and results files


def config_to_dict(config: ToyConfig) -> dict:
    return {
        "image_size": config.image_size,
        "n_patients": config.n_patients,
        "images_per_patient": config.images_per_patient,
        "fingerprint_strength": config.fingerprint_strength,
        "lesion_strength": config.lesion_strength,
        "noise_sigma": config.noise_sigma,
        "seed": config.seed,
    }


def config_from_dict(d: dict) -> ToyConfig:
    return ToyConfig(**d)


def load_defaults() -> dict:
    """The frozen default experiment bundle (config, fractions, hyper, seeds)."""
    from importlib.resources import files

    raw = files("splitproof").joinpath(DEFAULT_CONFIG_RESOURCE).read_text("utf-8")
    return json.loads(raw)


def default_config() -> ToyConfig:
    return config_from_dict(load_defaults()["config"])


def default_hyper() -> TrainHyper:
    return TrainHyper(**load_defaults()["hyper"])


def write_results_csv(results, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "seed", "test_acc", "challenge_acc", "sal_on", "sal_off"])
        for r in sorted(results, key=lambda r: (r.mode.value, r.seed)):
            writer.writerow(
                [
                    r.mode.value,
                    r.seed,
                    repr(r.test_accuracy),
                    repr(r.challenge_accuracy),
                    repr(r.mean_saliency_on_lesion),
                    repr(r.mean_saliency_off_lesion),
                ]
            )
