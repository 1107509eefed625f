import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splitproof.annotations import Label
from splitproof.manifest import DatasetManifest, ImageRecord


def make_manifest(n_patients=10, records_per_patient=10, malignant_every=2, mixed=False):
    """Synthetic manifest: patients are single-class unless mixed=True."""
    records = []
    for p in range(n_patients):
        for i in range(records_per_patient):
            if mixed:
                label = Label.MALIGNANT if i % 2 else Label.BENIGN
            else:
                label = Label.MALIGNANT if p % malignant_every else Label.BENIGN
            records.append(
                ImageRecord(
                    record_id=f"P{p:03d}.r{i:03d}",
                    patient_id=f"P{p:03d}",
                    scan_id=f"S{p:03d}",
                    slice_index=i,
                    label=label,
                    image_path=f"P{p:03d}/{i:03d}.png",
                )
            )
    return DatasetManifest(tuple(records), provenance="test fixture")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
