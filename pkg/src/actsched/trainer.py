"""Training loop with validation monitoring and patience-based early stopping.

One seeded generator drives every stochastic choice in a run (shuffling,
latent draws, teacher-forcing coin flips, dropout), so a (model seed, train
seed) pair reproduces the history bit for bit. Validation is deterministic:
full teacher forcing, latent mean, no dropout, no label weighting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, batch_normalized, label_weights
from .models import LossBreakdown, ScheduleModel
from .nn import autodiff as ad
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.optim import Adam


class TrainDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 150
    batch_size: int = 1024
    patience: int = 10
    lr: float = 0.001
    seed: int = 0
    shuffle: bool = True

    def validate(self) -> None:
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch size, and patience must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class HistoryRow:
    epoch: int
    split: str
    losses: LossBreakdown


@dataclass
class TrainResult:
    history: list[HistoryRow] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = np.inf
    epochs_run: int = 0


def _batches(indices: np.ndarray, size: int):
    for start in range(0, len(indices), size):
        yield indices[start : start + size]


def _mean_breakdown(parts: list[tuple[int, LossBreakdown]]) -> LossBreakdown:
    n = sum(c for c, _ in parts)
    nll = sum(c * b.nll for c, b in parts) / n
    mse = sum(c * b.mse for c, b in parts) / n
    kld = sum(c * b.kld for c, b in parts) / n
    return LossBreakdown(nll=nll, mse=mse, kld=kld, total=nll + mse + kld)


def _validation_loss(model: ScheduleModel, dataset: Dataset, idx, batch_size) -> LossBreakdown:
    parts = []
    for batch in _batches(idx, batch_size):
        acts = dataset.acts[batch]
        durs = dataset.durs[batch]
        labels = dataset.labels[batch] if model.use_labels else None
        _, bd = model.loss_batch(acts, durs, labels, None, None, training=False)
        parts.append((len(batch), bd))
    return _mean_breakdown(parts)


def train(
    model: ScheduleModel,
    dataset: Dataset,
    tcfg: TrainConfig,
    history_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    tcfg.validate()
    if dataset.split is None:
        raise ValueError("dataset has no split assignment")
    rng = np.random.default_rng(tcfg.seed)
    opt = Adam(model.store, lr=tcfg.lr)
    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ValueError("train and validation splits must be non-empty")
    raw_w = label_weights(dataset)

    result = TrainResult()
    best_state = model.store.snapshot()
    bad_epochs = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        order = rng.permutation(train_idx) if tcfg.shuffle else train_idx
        parts = []
        for i, batch in enumerate(_batches(order, tcfg.batch_size)):
            acts = dataset.acts[batch]
            durs = dataset.durs[batch]
            labels = dataset.labels[batch] if model.use_labels else None
            weights = batch_normalized(raw_w[batch])
            model.store.zero_grads()
            with ad.record() as tape:
                loss, bd = model.loss_batch(acts, durs, labels, weights, rng, training=True)
                tape.backward(loss)
            if not np.isfinite(bd.total):
                raise TrainDivergedError(
                    f"non-finite loss at epoch {epoch} batch {i}: "
                    f"nll={bd.nll} mse={bd.mse} kld={bd.kld}"
                )
            opt.step()
            parts.append((len(batch), bd))
        result.history.append(HistoryRow(epoch, "train", _mean_breakdown(parts)))

        val = _validation_loss(model, dataset, val_idx, tcfg.batch_size)
        result.history.append(HistoryRow(epoch, "val", val))
        result.epochs_run = epoch
        if val.total < result.best_val:
            result.best_val = val.total
            result.best_epoch = epoch
            best_state = model.store.snapshot()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tcfg.patience:
                break

    model.store.load_state(best_state)
    if history_path is not None:
        write_history_csv(history_path, result.history)
    if checkpoint_path is not None:
        save_model(checkpoint_path, model, extra_meta={
            "best_epoch": result.best_epoch,
            "best_val": result.best_val,
            "epochs_run": result.epochs_run,
            "train_seed": tcfg.seed,
        })
    return result


def evaluate_losses(model: ScheduleModel, dataset: Dataset, split: str,
                    batch_size: int = 1024) -> LossBreakdown:
    """Unweighted reconstruction figures over a split: raw masked activity NLL,
    raw masked duration MSE, raw divergence, each a dataset mean."""
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    parts = []
    for batch in _batches(idx, batch_size):
        labels = dataset.labels[batch] if model.use_labels else None
        bd = model.evaluate_batch(dataset.acts[batch], dataset.durs[batch], labels)
        parts.append((len(batch), bd))
    return _mean_breakdown(parts)


# ---------------------------------------------------------------------------
# persistence


def save_model(path: str | Path, model: ScheduleModel, extra_meta: dict | None = None):
    meta = {"model": model.config_payload()}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, model.state_arrays(), meta)


def load_model(path: str | Path) -> ScheduleModel:
    from .models import ModelConfig, ScheduleModel
    from .vocab import ActivityVocab, LabelSchema

    arrays, meta = load_checkpoint(path)
    spec = meta["model"]
    cfg = ModelConfig(**spec["config"])
    vocab = ActivityVocab(tuple(spec["vocab"]))
    schema = None
    if spec["schema"] is not None:
        schema = LabelSchema([(name, tuple(cats)) for name, cats in spec["schema"]])
    model = ScheduleModel(spec["kind"], cfg, vocab, schema)
    model.load_state(arrays)
    return model


def write_history_csv(path: str | Path, history: list[HistoryRow],
                      config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "nll", "mse", "kld", "total"])
        for row in history:
            b = row.losses
            w.writerow([row.epoch, row.split,
                        repr(b.nll), repr(b.mse), repr(b.kld), repr(b.total)])


def read_history_csv(path: str | Path) -> list[HistoryRow]:
    out = []
    with open(path, newline="") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        for rec in csv.DictReader(lines):
            out.append(HistoryRow(
                int(rec["epoch"]), rec["split"],
                LossBreakdown(float(rec["nll"]), float(rec["mse"]),
                              float(rec["kld"]), float(rec["total"])),
            ))
    return out
