"""Shared fixtures: synthetic NSL-KDD-format corpora for fast pipeline
tests, and discovery of the real dataset for the full-scale acceptance runs.

The real KDDTrain+.txt / KDDTest+.txt are looked up under $IDS_DATA_DIR,
then ./data; dataset-scale tests skip with instructions when absent.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for `import oracles`

from latentids import ingest

PROTOCOLS = ("tcp", "udp", "icmp")
SERVICES = ("http", "smtp", "ftp_data", "domain_u", "private")
FLAGS = ("SF", "REJ", "S0")


def synth_lines(
    n_normal: int,
    n_attack: int,
    rng: np.random.Generator,
    attack_shift: float = 3.0,
    attack_labels: tuple[str, ...] = ("neptune", "smurf", "portsweep"),
) -> list[str]:
    """NSL-KDD-format lines with two planted numeric clusters.

    Normal rows center their numeric features at 0, attack rows at
    ``attack_shift``, so a reconstruction model can separate them.
    """
    lines = []
    labels = ["normal"] * n_normal + [
        str(rng.choice(attack_labels)) for _ in range(n_attack)
    ]
    for label in labels:
        shift = 0.0 if label == "normal" else attack_shift
        fields: list[str] = []
        for pos in range(ingest.N_FEATURES):
            if pos == 1:
                fields.append(str(rng.choice(PROTOCOLS)))
            elif pos == 2:
                fields.append(str(rng.choice(SERVICES)))
            elif pos == 3:
                fields.append(str(rng.choice(FLAGS)))
            else:
                fields.append(f"{rng.normal(shift, 1.0):.6f}")
        fields.append(label)
        fields.append(str(int(rng.integers(1, 22))))
        lines.append(",".join(fields))
    return lines


@pytest.fixture(scope="session")
def synth_corpus():
    """(train_lines, test_lines) with both classes in both sets."""
    rng = np.random.default_rng(20240817)
    train = synth_lines(180, 140, rng)
    test = synth_lines(70, 80, rng)
    return train, test


@pytest.fixture(scope="session")
def synth_datasets(synth_corpus):
    """Encoded (train_ds, test_ds, state) from the synthetic corpus."""
    train_lines, test_lines = synth_corpus
    train_records = ingest.parse_records(train_lines)
    test_records = ingest.parse_records(test_lines)
    state = ingest.fit_preprocessor(train_records)
    return (
        ingest.transform(train_records, state),
        ingest.transform(test_records, state),
        state,
    )


def nslkdd_dir() -> Path | None:
    """Directory holding KDDTrain+.txt and KDDTest+.txt, if available."""
    candidates = []
    env = os.environ.get("IDS_DATA_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path(__file__).resolve().parent.parent / "data")
    for root in candidates:
        if (root / "KDDTrain+.txt").exists() and (root / "KDDTest+.txt").exists():
            return root
    return None


requires_nslkdd = pytest.mark.skipif(
    nslkdd_dir() is None,
    reason=(
        "NSL-KDD files not found: place KDDTrain+.txt and KDDTest+.txt in "
        "./data or point IDS_DATA_DIR at them"
    ),
)
