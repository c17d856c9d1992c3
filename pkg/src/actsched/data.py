"""Dataset assembly, train/validation/test splitting, label weights, CSV I/O.

File formats:
  schedules CSV  header `pid,act,start,end`, one row per episode, integer
                 minutes, episodes of one pid contiguous and ordered
  labels CSV     header `pid,<var1>,<var2>,...`, category strings
Lines starting with `#` are metadata comments (config hash) and are skipped.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schedules import (
    DEFAULT_L,
    EncodedSchedule,
    NonHomeBasedError,
    RawSchedule,
    encode_schedule,
    preprocess,
)
from .vocab import ActivityVocab, DEFAULT_LABEL_SCHEMA, DEFAULT_VOCAB, LabelSchema

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "val": VAL, "test": TEST}


@dataclass
class Dataset:
    """Encoded schedules with aligned labels, packed into arrays."""

    acts: np.ndarray  # (n, L) int64
    durs: np.ndarray  # (n, L) float64
    labels: np.ndarray  # (n, N_L) int64
    pids: list[str]
    vocab: ActivityVocab
    schema: LabelSchema
    split: np.ndarray = field(default=None)  # (n,) in {TRAIN, VAL, TEST}
    seed: int | None = None

    def __len__(self) -> int:
        return int(self.acts.shape[0])

    @property
    def L(self) -> int:
        return int(self.acts.shape[1])

    def indices(self, split: str | None = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self))
        if self.split is None:
            raise ValueError("dataset has no split assignment")
        return np.flatnonzero(self.split == SPLIT_NAMES[split])

    def schedule(self, i: int) -> EncodedSchedule:
        return EncodedSchedule(self.acts[i], self.durs[i])

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            acts=self.acts[idx],
            durs=self.durs[idx],
            labels=self.labels[idx],
            pids=[self.pids[int(i)] for i in idx],
            vocab=self.vocab,
            schema=self.schema,
            split=None if self.split is None else self.split[idx],
            seed=self.seed,
        )


def from_pairs(
    pairs: list[tuple[EncodedSchedule, tuple[int, ...]]],
    vocab: ActivityVocab = DEFAULT_VOCAB,
    schema: LabelSchema = DEFAULT_LABEL_SCHEMA,
    pids: list[str] | None = None,
) -> Dataset:
    if not pairs:
        raise ValueError("empty dataset")
    acts = np.stack([enc.acts for enc, _ in pairs])
    durs = np.stack([enc.durs for enc, _ in pairs])
    labels = np.array([vec for _, vec in pairs], dtype=np.int64)
    if pids is None:
        pids = [str(i) for i in range(len(pairs))]
    return Dataset(acts, durs, labels, pids, vocab, schema)


def split_dataset(dataset: Dataset, seed: int, fractions=(0.8, 0.1, 0.1)) -> Dataset:
    """Assign train/val/test tags; a pure function of (seed, pid order)."""
    n = len(dataset)
    if n < 10:
        raise ValueError(f"need at least 10 pairs to split, got {n}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    split = np.full(n, TEST, dtype=np.int64)
    split[perm[:n_train]] = TRAIN
    split[perm[n_train : n_train + n_val]] = VAL
    dataset.split = split
    dataset.seed = seed
    return dataset


def label_weights(dataset: Dataset) -> np.ndarray:
    """Raw per-sample inverse label-combination frequencies.

    Counted on the training split with a floor of one so combinations unseen
    in training still get a finite weight. Renormalization to mean one happens
    per batch at loss time, not here.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    train_idx = (
        dataset.indices("train") if dataset.split is not None else dataset.indices()
    )
    counts = Counter(tuple(row) for row in dataset.labels[train_idx])
    weights = np.array(
        [1.0 / max(counts[tuple(row)], 1) for row in dataset.labels],
        dtype=np.float64,
    )
    return weights


def batch_normalized(weights: np.ndarray) -> np.ndarray:
    """Scale a batch of raw weights to average exactly one."""
    return weights * (weights.shape[0] / weights.sum())


# ---------------------------------------------------------------------------
# CSV I/O


def _open_rows(path: str | Path):
    with open(path, newline="") as fh:
        for row in csv.reader(line for line in fh if not line.startswith("#")):
            if row:
                yield row


def read_schedules_csv(path: str | Path) -> list[RawSchedule]:
    rows = _open_rows(path)
    header = next(rows, None)
    if header != ["pid", "act", "start", "end"]:
        raise ValueError(f"{path}: expected header pid,act,start,end")
    schedules: list[RawSchedule] = []
    seen: set[str] = set()
    current: RawSchedule | None = None
    for pid, act, start, end in rows:
        if current is None or pid != current.pid:
            if pid in seen:
                raise ValueError(f"{path}: episodes of pid {pid} are not contiguous")
            seen.add(pid)
            current = RawSchedule(pid, [])
            schedules.append(current)
        current.episodes.append((act, int(start), int(end)))
    return schedules


def write_schedules_csv(
    path: str | Path, schedules: list[RawSchedule], config_hash: str | None = None
) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["pid", "act", "start", "end"])
        for sched in schedules:
            for act, start, end in sched.episodes:
                writer.writerow([sched.pid, act, start, end])


def read_labels_csv(path: str | Path, schema: LabelSchema) -> dict[str, tuple[int, ...]]:
    rows = _open_rows(path)
    header = next(rows, None)
    if header is None or header[0] != "pid":
        raise ValueError(f"{path}: expected header pid,<variables>")
    missing = [name for name in schema.names if name not in header[1:]]
    if missing:
        raise ValueError(f"{path}: missing label variables {missing}")
    cols = [header.index(name) for name in schema.names]
    out: dict[str, tuple[int, ...]] = {}
    for row in rows:
        out[row[0]] = schema.encode([row[c] for c in cols])
    return out


def write_labels_csv(
    path: str | Path,
    pids: list[str],
    vectors: np.ndarray,
    schema: LabelSchema,
    config_hash: str | None = None,
) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["pid"] + schema.names)
        for pid, vec in zip(pids, vectors):
            writer.writerow([pid] + schema.decode(tuple(int(v) for v in vec)))


def build_dataset(
    schedules: list[RawSchedule],
    labels: dict[str, tuple[int, ...]],
    vocab: ActivityVocab = DEFAULT_VOCAB,
    schema: LabelSchema = DEFAULT_LABEL_SCHEMA,
    L: int = DEFAULT_L,
    run_preprocess: bool = True,
) -> tuple[Dataset, int]:
    """Preprocess, encode, and align schedules with labels.

    Returns the dataset and the count of schedules dropped as non-home-based.
    """
    pairs = []
    pids = []
    dropped = 0
    for raw in schedules:
        if raw.pid not in labels:
            raise ValueError(f"pid {raw.pid} has no label row")
        if run_preprocess:
            try:
                raw = preprocess(raw)
            except NonHomeBasedError:
                dropped += 1
                continue
        pairs.append((encode_schedule(raw, vocab, L), labels[raw.pid]))
        pids.append(raw.pid)
    if not pairs:
        raise ValueError("no schedules left after preprocessing")
    return from_pairs(pairs, vocab, schema, pids), dropped
