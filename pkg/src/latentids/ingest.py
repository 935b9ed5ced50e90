"""NSL-KDD record parsing, label binarization, and train-fitted encoding.

Input files are comma-separated text with exactly 43 fields per line:
41 connection features, the attack label, and a difficulty score (parsed,
then discarded downstream). Features at positions 1, 2, 3 (protocol_type,
service, flag) are symbolic; the remaining 38 are numeric.

Encoding is fitted on training records only: symbolic features one-hot
expand to the train-time category set (unseen test categories map to an
all-zero block), numeric features min-max scale to [0, 1] on the train
range with no clamping of out-of-range test values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from latentids.errors import ConfigError, ParseError, RecordSchemaError

__all__ = [
    "FEATURE_NAMES",
    "SYMBOLIC_POSITIONS",
    "RawRecord",
    "PreprocessorState",
    "EncodedDataset",
    "parse_records",
    "load_records",
    "binarize_label",
    "fit_preprocessor",
    "transform",
    "dataset_stats",
]

FEATURE_NAMES: tuple[str, ...] = (
    "duration", "protocol_type", "service", "flag", "src_bytes",
    "dst_bytes", "land", "wrong_fragment", "urgent", "hot",
    "num_failed_logins", "logged_in", "num_compromised", "root_shell",
    "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login",
    "is_guest_login", "count", "srv_count", "serror_rate",
    "srv_serror_rate", "rerror_rate", "srv_rerror_rate", "same_srv_rate",
    "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate", "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
)

SYMBOLIC_POSITIONS: tuple[int, ...] = (1, 2, 3)
NUMERIC_POSITIONS: tuple[int, ...] = tuple(
    i for i in range(len(FEATURE_NAMES)) if i not in SYMBOLIC_POSITIONS
)

N_FEATURES = len(FEATURE_NAMES)
FIELDS_PER_LINE = N_FEATURES + 2  # features + attack label + difficulty

FORMAT_VERSION = 1


@dataclass(frozen=True)
class RawRecord:
    """One parsed NSL-KDD connection record.

    ``features`` holds strings at symbolic positions and floats elsewhere.
    ``difficulty`` is carried through parsing but never used downstream.
    """

    features: tuple
    attack_label: str
    difficulty: int


def parse_records(source: Iterable[bytes | str] | IO) -> list[RawRecord]:
    """Parse comma-separated NSL-KDD lines into records.

    Args:
        source: iterable of lines (bytes or str), e.g. an open file.

    Returns:
        One RawRecord per non-empty line.

    Raises:
        RecordSchemaError: a line does not have exactly 43 fields.
        ParseError: a numeric field or the difficulty fails to parse;
            the error carries the 1-based line number.
    """
    records: list[RawRecord] = []
    for line_no, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != FIELDS_PER_LINE:
            raise RecordSchemaError(
                f"expected {FIELDS_PER_LINE} comma-separated fields, "
                f"got {len(fields)}",
                line_number=line_no,
            )
        features: list = []
        for pos in range(N_FEATURES):
            if pos in SYMBOLIC_POSITIONS:
                features.append(fields[pos])
            else:
                try:
                    features.append(float(fields[pos]))
                except ValueError:
                    raise ParseError(
                        f"feature '{FEATURE_NAMES[pos]}' is not numeric: "
                        f"{fields[pos]!r}",
                        line_number=line_no,
                    ) from None
        try:
            difficulty = int(fields[N_FEATURES + 1])
        except ValueError:
            raise ParseError(
                f"difficulty is not an integer: {fields[N_FEATURES + 1]!r}",
                line_number=line_no,
            ) from None
        records.append(
            RawRecord(
                features=tuple(features),
                attack_label=fields[N_FEATURES],
                difficulty=difficulty,
            )
        )
    return records


def load_records(path: str | Path) -> list[RawRecord]:
    """Parse an NSL-KDD file (e.g. KDDTrain+.txt) from disk."""
    with open(path, "rb") as fh:
        return parse_records(fh)


def binarize_label(attack_label: str) -> int:
    """0 for the exact label 'normal', 1 for anything else."""
    return 0 if attack_label == "normal" else 1


@dataclass(frozen=True)
class PreprocessorState:
    """Train-fitted encoding state, immutable after fitting.

    category_maps: per symbolic position, category -> contiguous index in
        first-appearance order (frozen at fit time).
    numeric_ranges: per numeric position, the train (min, max).
    """

    category_maps: dict[int, dict[str, int]]
    numeric_ranges: dict[int, tuple[float, float]]

    @property
    def n_columns(self) -> int:
        return sum(len(m) for m in self.category_maps.values()) + len(
            self.numeric_ranges
        )

    def feature_names(self) -> list[str]:
        """Output column names, in encoded-column order."""
        names: list[str] = []
        for pos in range(N_FEATURES):
            if pos in SYMBOLIC_POSITIONS:
                for category in self.category_maps[pos]:
                    names.append(f"{FEATURE_NAMES[pos]}={category}")
            else:
                names.append(FEATURE_NAMES[pos])
        return names

    def to_json(self) -> str:
        doc = {
            "format_version": FORMAT_VERSION,
            "category_maps": {
                str(pos): list(mapping) for pos, mapping in self.category_maps.items()
            },
            "numeric_ranges": {
                str(pos): [lo, hi] for pos, (lo, hi) in self.numeric_ranges.items()
            },
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PreprocessorState":
        doc = json.loads(text)
        if doc.get("format_version") != FORMAT_VERSION:
            raise ConfigError(
                f"unsupported preprocessor format_version: "
                f"{doc.get('format_version')!r}"
            )
        category_maps = {
            int(pos): {cat: i for i, cat in enumerate(cats)}
            for pos, cats in doc["category_maps"].items()
        }
        numeric_ranges = {
            int(pos): (float(lo), float(hi))
            for pos, (lo, hi) in doc["numeric_ranges"].items()
        }
        return cls(category_maps=category_maps, numeric_ranges=numeric_ranges)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "PreprocessorState":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class EncodedDataset:
    """Dense design matrix + binary labels (0 = normal, 1 = intrusion)."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


def fit_preprocessor(train: list[RawRecord]) -> PreprocessorState:
    """Fit category maps and numeric min/max ranges on training records."""
    if not train:
        raise ConfigError("cannot fit preprocessor on empty record list")
    category_maps: dict[int, dict[str, int]] = {
        pos: {} for pos in SYMBOLIC_POSITIONS
    }
    for record in train:
        for pos in SYMBOLIC_POSITIONS:
            mapping = category_maps[pos]
            value = record.features[pos]
            if value not in mapping:
                mapping[value] = len(mapping)
    numeric = np.array(
        [[rec.features[pos] for pos in NUMERIC_POSITIONS] for rec in train],
        dtype=np.float64,
    )
    mins = numeric.min(axis=0)
    maxs = numeric.max(axis=0)
    numeric_ranges = {
        pos: (float(mins[i]), float(maxs[i]))
        for i, pos in enumerate(NUMERIC_POSITIONS)
    }
    return PreprocessorState(
        category_maps=category_maps, numeric_ranges=numeric_ranges
    )


def transform(
    records: list[RawRecord], state: PreprocessorState
) -> EncodedDataset:
    """Encode records with a fitted state.

    Symbolic features one-hot (unseen category -> zero block), numeric
    features (x - min) / (max - min) with a degenerate range mapping to 0.
    Column layout depends only on ``state``. Out-of-range values on
    non-fitting sets are not clamped.
    """
    n = len(records)
    X = np.zeros((n, state.n_columns), dtype=np.float64)
    y = np.empty(n, dtype=np.int64)

    # Column offsets per feature position, in schema order.
    offsets: dict[int, int] = {}
    col = 0
    for pos in range(N_FEATURES):
        offsets[pos] = col
        col += len(state.category_maps[pos]) if pos in SYMBOLIC_POSITIONS else 1

    for row, record in enumerate(records):
        for pos in range(N_FEATURES):
            value = record.features[pos]
            if pos in SYMBOLIC_POSITIONS:
                idx = state.category_maps[pos].get(value)
                if idx is not None:
                    X[row, offsets[pos] + idx] = 1.0
            else:
                lo, hi = state.numeric_ranges[pos]
                span = hi - lo
                X[row, offsets[pos]] = (value - lo) / span if span > 0.0 else 0.0
        y[row] = binarize_label(record.attack_label)
    return EncodedDataset(X=X, y=y, feature_names=state.feature_names())


def dataset_stats(ds: EncodedDataset) -> tuple[float, float]:
    """(fraction labeled intrusion, fraction labeled normal)."""
    n = ds.n_samples
    if n == 0:
        raise ConfigError("dataset is empty")
    n_intrusion = int(np.count_nonzero(ds.y == 1))
    return n_intrusion / n, (n - n_intrusion) / n
