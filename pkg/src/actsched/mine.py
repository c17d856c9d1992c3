"""Mutual information estimation from the Donsker-Varadhan bound.

A statistics network scores input pairs; joint scores come from aligned pairs
and marginal scores from pairs with one side shuffled within the batch. Three
side encoders cover the cases that matter here: raw vectors pass through,
label vectors go through summed embeddings, schedules go through an LSTM.
Estimates are reported on a withheld test split, clipped at zero with the raw
value kept alongside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.optim import Adam
from .nn.params import ParameterStore

HEAD_HIDDEN = 256
LABEL_DIM = 64
SCHED_HIDDEN = 256


def dv_bound(scores_joint, scores_marginal) -> float:
    """mean(joint) - log mean exp(marginal), in nats."""
    j = np.asarray(scores_joint, dtype=np.float64).ravel()
    m = np.asarray(scores_marginal, dtype=np.float64).ravel()
    if j.size == 0 or m.size == 0:
        raise ValueError("both score sets must be non-empty")
    mx = m.max()
    lme = mx + np.log(np.mean(np.exp(m - mx)))
    out = float(j.mean() - lme)
    if not np.isfinite(out):
        raise ValueError("non-finite bound value")
    return out


# ---------------------------------------------------------------------------
# input sides


@dataclass
class VectorSide:
    data: np.ndarray  # (n, d) floats

    kind = "vector"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 1:
            self.data = self.data[:, None]

    def __len__(self):
        return len(self.data)


@dataclass
class LabelSide:
    data: np.ndarray  # (n, k) ints
    sizes: tuple[int, ...]

    kind = "labels"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.data.ndim == 1:
            self.data = self.data[:, None]
        if self.data.shape[1] != len(self.sizes):
            raise ValueError("label width does not match declared sizes")

    def __len__(self):
        return len(self.data)


@dataclass
class ScheduleSide:
    acts: np.ndarray
    durs: np.ndarray
    vocab_size: int

    kind = "schedule"

    def __len__(self):
        return len(self.acts)


def variant_name(a, b) -> str:
    return f"{a.kind}-{b.kind}"


# ---------------------------------------------------------------------------
# statistics network


class StatisticsNet:
    """Per-side encoders feeding a two-layer scoring head, hidden size 256."""

    def __init__(self, side_a, side_b, seed: int = 0):
        self.store = ParameterStore(dtype=np.float64)
        rng = np.random.default_rng(seed)
        self.enc_a, dim_a = self._build_encoder("a", side_a, rng)
        self.enc_b, dim_b = self._build_encoder("b", side_b, rng)
        self.h1_w, self.h1_b = self.store.linear("head.1", dim_a + dim_b, HEAD_HIDDEN, rng)
        self.h2_w, self.h2_b = self.store.linear("head.2", HEAD_HIDDEN, 1, rng)

    def _build_encoder(self, tag, side, rng):
        if side.kind == "vector":
            return None, side.data.shape[1]
        if side.kind == "labels":
            tables = [
                self.store.embedding(f"{tag}.emb.{i}", size, LABEL_DIM, rng)
                for i, size in enumerate(side.sizes)
            ]
            return tables, LABEL_DIM
        if side.kind == "schedule":
            parts = {
                "embed": self.store.embedding(
                    f"{tag}.embed", side.vocab_size, SCHED_HIDDEN - 1, rng
                ),
                "lstm": self.store.lstm_layer(f"{tag}.lstm", SCHED_HIDDEN, SCHED_HIDDEN, rng),
            }
            return parts, SCHED_HIDDEN
        raise ValueError(f"unknown side kind {side.kind!r}")

    def _encode(self, enc, side, idx) -> Tensor:
        if side.kind == "vector":
            return Tensor(side.data[idx])
        if side.kind == "labels":
            rows = side.data[idx]
            out = None
            for i, table in enumerate(enc):
                e = ad.embedding(table, rows[:, i])
                out = e if out is None else ad.add(out, e)
            return out
        acts, durs = side.acts[idx], side.durs[idx]
        B, L = acts.shape
        wx, wh, b = enc["lstm"]
        h = Tensor(np.zeros((B, SCHED_HIDDEN)))
        c = Tensor(np.zeros((B, SCHED_HIDDEN)))
        for j in range(L):
            tok = ad.embedding(enc["embed"], acts[:, j])
            x = ad.concat([tok, Tensor(durs[:, j : j + 1].astype(np.float64))], axis=1)
            gates = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(h, wh)), b)
            h, c = ad.lstm_gates(gates, c)
        return h

    def scores(self, side_a, side_b, idx_a, idx_b) -> Tensor:
        ea = self._encode(self.enc_a, side_a, idx_a)
        eb = self._encode(self.enc_b, side_b, idx_b)
        x = ad.concat([ea, eb], axis=1)
        x = ad.relu(ad.add(ad.matmul(x, self.h1_w), self.h1_b))
        return ad.add(ad.matmul(x, self.h2_w), self.h2_b)


# ---------------------------------------------------------------------------
# estimation


@dataclass
class MineConfig:
    max_epochs: int = 200
    batch_size: int = 512
    patience: int = 10
    lr: float = 0.001
    seed: int = 0

    def validate(self):
        if self.max_epochs < 1 or self.batch_size < 2 or self.patience < 1:
            raise ValueError("bad estimation config")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class MIEstimate:
    value: float  # zero-clipped
    raw: float
    variant: str
    best_epoch: int
    epochs_run: int


def _split_scores(net, side_a, side_b, idx, perm, chunk=1024) -> float:
    joint, marg = [], []
    for start in range(0, len(idx), chunk):
        sl = idx[start : start + chunk]
        joint.append(net.scores(side_a, side_b, sl, sl).value.ravel())
        marg.append(
            net.scores(side_a, side_b, sl, perm[start : start + chunk]).value.ravel()
        )
    return dv_bound(np.concatenate(joint), np.concatenate(marg))


def estimate_mi(side_a, side_b, cfg: MineConfig | None = None) -> MIEstimate:
    """Train a statistics net on 80% of the pairs, stop on 10%, report on 10%."""
    if cfg is None:
        cfg = MineConfig()
    cfg.validate()
    n = len(side_a)
    if len(side_b) != n:
        raise ValueError("sides are misaligned")
    if n < 1000:
        raise ValueError("need at least 1000 pairs")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_train, n_val = int(n * 0.8), int(n * 0.1)
    train_idx = perm[:n_train]
    val_idx = perm[n_train : n_train + n_val]
    test_idx = perm[n_train + n_val :]
    val_perm = rng.permutation(val_idx)
    test_perm = rng.permutation(test_idx)

    net = StatisticsNet(side_a, side_b, seed=cfg.seed)
    opt = Adam(net.store, lr=cfg.lr)
    best_val = -np.inf
    best_state = net.store.snapshot()
    best_epoch = 0
    bad = 0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(train_idx)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            if len(batch) < 2:
                continue
            shuffled = rng.permutation(batch)
            net.store.zero_grads()
            with ad.record() as tape:
                joint = net.scores(side_a, side_b, batch, batch)
                marg = net.scores(side_a, side_b, batch, shuffled)
                # maximize the bound: minimize logmeanexp(marginal) - mean(joint)
                loss = ad.sub(ad.logmeanexp(marg), ad.mean_(joint))
                tape.backward(loss)
            opt.step()
        val = _split_scores(net, side_a, side_b, val_idx, val_perm)
        if val > best_val:
            best_val = val
            best_state = net.store.snapshot()
            best_epoch = epoch
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    net.store.load_state(best_state)
    raw = _split_scores(net, side_a, side_b, test_idx, test_perm)
    return MIEstimate(
        value=max(raw, 0.0),
        raw=raw,
        variant=variant_name(side_a, side_b),
        best_epoch=best_epoch,
        epochs_run=epoch,
    )


# ---------------------------------------------------------------------------
# entanglement study


def _posterior_means(model, acts, durs, labels) -> np.ndarray:
    out = []
    for start in range(0, len(acts), 1024):
        sl = slice(start, start + 1024)
        lv = model._labels_vec(labels[sl]) if model.use_labels else None
        lp = model.encode(acts[sl], durs[sl], lv)
        out.append(lp.mu.value.astype(np.float64))
    return np.concatenate(out)


def _label_embedding(model, labels) -> np.ndarray:
    return model._labels_vec(labels).value.astype(np.float64)


def entanglement_study(
    actvae,
    genrnn,
    dataset,
    split: str = "test",
    cfg: MineConfig | None = None,
    runs: int = 1,
) -> list[dict]:
    """Table of I(x;y), I(z;y), I(z;x) per embedding model.

    Rows: the data itself, random latents, the two trained models, and two
    randomly initialized encoder upper-bound references.
    """
    from .models import assemble

    if cfg is None:
        cfg = MineConfig()
    idx = dataset.indices(split)
    acts, durs, labels = dataset.acts[idx], dataset.durs[idx], dataset.labels[idx]
    sizes = tuple(len(cats) for _, cats in dataset.schema.variables)
    vocab_size = dataset.vocab.size

    def sched():
        return ScheduleSide(acts, durs, vocab_size)

    def labs():
        return LabelSide(labels, sizes)

    z_act = _posterior_means(actvae, acts, durs, labels)
    z_gen = _posterior_means(genrnn, acts, durs, None)
    rand_latents = np.random.default_rng(cfg.seed + 1).standard_normal(z_act.shape)
    ref_label = assemble(actvae.kind, actvae.cfg, actvae.vocab, actvae.schema,
                         seed=cfg.seed + 2)
    ref_sched = assemble(actvae.kind, actvae.cfg, actvae.vocab, actvae.schema,
                         seed=cfg.seed + 3)
    e_label = _label_embedding(ref_label, labels)
    z_ref = _posterior_means(ref_sched, acts, durs, labels)

    jobs = [
        ("data", "I(x;y)", sched, labs),
        ("Random", "I(z;y)", lambda: VectorSide(rand_latents), labs),
        ("ActVAE", "I(z;y)", lambda: VectorSide(z_act), labs),
        ("ActVAE", "I(z;x)", lambda: VectorSide(z_act), sched),
        ("GenerativeRNN", "I(z;y)", lambda: VectorSide(z_gen), labs),
        ("GenerativeRNN", "I(z;x)", lambda: VectorSide(z_gen), sched),
        ("ActVAE label encoder", "I(z;y)", lambda: VectorSide(e_label), labs),
        ("ActVAE schedule encoder", "I(z;x)", lambda: VectorSide(z_ref), sched),
    ]
    rows = []
    for model_name, quantity, make_a, make_b in jobs:
        values, raws = [], []
        for r in range(runs):
            run_cfg = MineConfig(cfg.max_epochs, cfg.batch_size, cfg.patience,
                                 cfg.lr, cfg.seed + 17 * r)
            est = estimate_mi(make_a(), make_b(), run_cfg)
            values.append(est.value)
            raws.append(est.raw)
        rows.append({
            "embedding_model": model_name,
            "quantity": quantity,
            "estimate": float(np.mean(values)),
            "raw": float(np.mean(raws)),
            "variance": float(np.var(values)) if runs > 1 else 0.0,
            "runs": runs,
        })
    return rows


def write_mi_csv(path: str | Path, rows: list[dict],
                 config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["embedding_model", "quantity", "estimate", "raw", "variance", "runs"])
        for r in rows:
            w.writerow([r["embedding_model"], r["quantity"], repr(r["estimate"]),
                        repr(r["raw"]), repr(r["variance"]), r["runs"]])
