"""Encoder, decoder, the three model assemblies, and the combined loss.

Assemblies:
  ConditionalRNN  labels only; deterministic decoder, no latent
  GenerativeRNN   latent only; ignores labels entirely
  ActVAE          labels plus latent

Sequence convention: position 0 is the start token; the decoder runs L steps
where step j consumes position j and predicts position j+1. The final step
therefore has no target and is ignored by the loss and by generation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import blocks
from .blocks import LatentParams
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.params import ParameterStore
from .vocab import EOS, SOS, ActivityVocab, LabelSchema

KINDS = ("ConditionalRNN", "GenerativeRNN", "ActVAE")
MODES = ("add", "concat", "none")


@dataclass
class ModelConfig:
    depth: int = 4
    hidden: int = 256
    label_hidden: int = 64
    latent: int = 6
    alpha: float = 200.0
    beta: float = 0.01
    dropout: float = 0.0
    tf_ratio: float = 0.5
    enc_hidden: str = "add"
    enc_unembed: str = "none"
    dec_hidden: str = "add"
    dec_unembed: str = "none"
    label_weighting: bool = True
    L: int = 16
    dtype: str = "float32"

    def validate(self) -> None:
        if self.depth < 1 or self.hidden < 2 or self.L < 3:
            raise ValueError("depth, hidden size, or sequence length out of range")
        if self.latent < 0 or self.label_hidden < 0:
            raise ValueError("negative latent or label size")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.tf_ratio <= 1.0:
            raise ValueError("teacher-forcing ratio must be in [0, 1]")
        for site in (self.enc_hidden, self.enc_unembed, self.dec_hidden, self.dec_unembed):
            if site not in MODES:
                raise ValueError(f"unknown injection mode {site!r}")


def default_config(kind: str, **overrides) -> ModelConfig:
    if kind == "ActVAE":
        cfg = ModelConfig()
    elif kind == "ConditionalRNN":
        cfg = ModelConfig(hidden=128, label_hidden=32, latent=0, beta=0.0, dropout=0.1)
    elif kind == "GenerativeRNN":
        cfg = ModelConfig(
            label_hidden=0, dropout=0.1,
            enc_hidden="none", enc_unembed="none", dec_hidden="none", dec_unembed="none",
        )
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return replace(cfg, **overrides)


@dataclass
class LossBreakdown:
    nll: float
    mse: float
    kld: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def first_eos_index(acts: np.ndarray) -> np.ndarray:
    """Per-row index of the first end token; rows lacking one get L - 1."""
    is_eos = acts == EOS
    any_eos = is_eos.any(axis=1)
    k = np.where(any_eos, is_eos.argmax(axis=1), acts.shape[1] - 1)
    return k.astype(np.int64)


def loss_mask(acts: np.ndarray, dtype=np.float64) -> np.ndarray:
    """(B, L-1) mask over predicted positions 1..L-1, keeping those up to and
    including the first target end token."""
    L = acts.shape[1]
    k = first_eos_index(acts)
    positions = np.arange(1, L)
    return (positions[None, :] <= k[:, None]).astype(dtype)


def sequence_loss(
    steps: list[tuple[Tensor, Tensor]],
    target_acts: np.ndarray,
    target_durs: np.ndarray,
    weights: np.ndarray | None,
    alpha: float,
    beta: float,
    lp: LatentParams | None,
) -> tuple[Tensor, LossBreakdown]:
    """Masked cross-entropy plus alpha-weighted masked duration error plus
    beta-weighted divergence. `weights` must already be batch-normalized."""
    B, L = target_acts.shape
    dtype = steps[0][0].dtype
    mask = loss_mask(target_acts, dtype)
    inv_count = (1.0 / np.maximum(mask.sum(axis=1), 1.0)).astype(dtype)

    nll_cols = []
    mse_cols = []
    for j in range(L - 1):
        logits, dur = steps[j]
        nll_cols.append(ad.reshape(ad.softmax_ce(logits, target_acts[:, j + 1]), (B, 1)))
        target = Tensor(target_durs[:, j + 1 : j + 2].astype(dtype))
        mse_cols.append(ad.square(ad.sub(dur, target)))
    nll_mat = ad.concat(nll_cols, axis=1)
    mse_mat = ad.concat(mse_cols, axis=1)

    nll_s = ad.mul_const(ad.sum_(ad.mul_const(nll_mat, mask), axis=1), inv_count)
    mse_s = ad.mul_const(ad.sum_(ad.mul_const(mse_mat, mask), axis=1), inv_count)
    if weights is not None:
        w = weights.astype(dtype)
        nll_s = ad.mul_const(nll_s, w)
        mse_s = ad.mul_const(mse_s, w)

    nll_term = ad.mean_(nll_s)
    mse_term = ad.mul_const(ad.mean_(mse_s), alpha)
    total = ad.add(nll_term, mse_term)
    kld_value = 0.0
    if lp is not None:
        kld_term = ad.mul_const(blocks.kld(lp), beta)
        total = ad.add(total, kld_term)
        kld_value = float(kld_term.value)
    nll_value = float(nll_term.value)
    mse_value = float(mse_term.value)
    # the reported total is the exact sum of the reported components
    breakdown = LossBreakdown(
        nll=nll_value,
        mse=mse_value,
        kld=kld_value,
        total=nll_value + mse_value + kld_value,
    )
    return total, breakdown


def normalize_durations(
    acts: np.ndarray, durations: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Rescale per-row durations before the first end token to sum to one.

    Special positions get zero. Rows whose pre-end durations sum to <= 1e-8
    are assigned uniform durations and flagged.
    """
    single = acts.ndim == 1
    if single:
        acts = acts[None, :]
        durations = durations[None, :]
    B, L = acts.shape
    k = first_eos_index(acts)
    positions = np.arange(L)
    active = (positions[None, :] >= 1) & (positions[None, :] < k[:, None])
    out = np.where(active, durations, 0.0).astype(np.float64)
    totals = out.sum(axis=1)
    flags = np.zeros(B, dtype=bool)
    for b in range(B):
        n_active = int(active[b].sum())
        if n_active == 0:
            flags[b] = True
            out[b] = 0.0
        elif totals[b] <= 1e-8:
            flags[b] = True
            out[b, active[b]] = 1.0 / n_active
        else:
            out[b, active[b]] /= totals[b]
    if single:
        return out[0], flags[0]
    return out, flags


class ScheduleModel:
    """One trainable assembly over a shared parameter store."""

    def __init__(
        self,
        kind: str,
        cfg: ModelConfig,
        vocab: ActivityVocab,
        schema: LabelSchema | None,
        seed: int = 0,
    ):
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        cfg.validate()
        self.kind = kind
        self.cfg = cfg
        self.vocab = vocab
        self.schema = schema
        self.seed = seed
        self.use_latent = kind != "ConditionalRNN"
        self.use_labels = kind != "GenerativeRNN"
        self._check_consistency()

        self.Na = vocab.size
        S, N, H = cfg.hidden, cfg.depth, cfg.label_hidden
        self.state_size = 2 * N * S
        self.store = ParameterStore(dtype=np.dtype(cfg.dtype))
        rng = np.random.default_rng(seed)

        p = self.store
        self.embed = p.embedding("embed", self.Na, S - 1, rng)
        enc_in = S + (H if self.use_labels and cfg.enc_unembed == "concat" else 0)
        unembed_in = S + (H if self.use_labels and cfg.dec_unembed == "concat" else 0)
        self.dec_layers = [p.lstm_layer(f"dec.l{i}", S, S, rng) for i in range(N)]
        self.unembed_w, self.unembed_b = p.linear("unembed", unembed_in, self.Na + 1, rng)
        if self.use_labels:
            self.label_tables = [
                p.embedding(f"labels.{name}", len(cats), H, rng)
                for name, cats in schema.variables
            ]
            if cfg.enc_unembed == "add":
                self.enc_in_w, self.enc_in_b = p.linear("inj.enc_in", H, S, rng)
            if cfg.dec_unembed == "add":
                self.dec_out_w, self.dec_out_b = p.linear("inj.dec_out", H, S, rng)
        if self.use_latent:
            self.enc_layers = [
                p.lstm_layer(f"enc.l{i}", enc_in if i == 0 else S, S, rng)
                for i in range(N)
            ]
            self.enc_ff_w, self.enc_ff_b = p.linear("enc.ff", self.state_size, S, rng)
            self.mu_w, self.mu_b = p.linear("enc.mu", S, cfg.latent, rng)
            self.logvar_w, self.logvar_b = p.linear("enc.logvar", S, cfg.latent, rng)
            if self.use_labels and cfg.enc_hidden != "none":
                self.enc_init_w, self.enc_init_b = p.linear(
                    "enc.init", H, self.state_size, rng
                )
        if self.use_latent and self.use_labels and cfg.dec_hidden == "concat":
            self.dec_init_w, self.dec_init_b = p.linear(
                "dec.init", cfg.latent + H, self.state_size, rng
            )
        else:
            if self.use_latent:
                self.dec_init_z_w, self.dec_init_z_b = p.linear(
                    "dec.init.z", cfg.latent, self.state_size, rng
                )
            if self.use_labels and cfg.dec_hidden != "none":
                self.dec_init_label_w, self.dec_init_label_b = p.linear(
                    "dec.init.label", H, self.state_size, rng
                )

    def _check_consistency(self) -> None:
        cfg = self.cfg
        if self.use_latent and cfg.latent < 1:
            raise ValueError(f"{self.kind} needs a positive latent size")
        if not self.use_latent and cfg.latent != 0:
            raise ValueError(f"{self.kind} takes no latent block")
        if self.use_labels:
            if self.schema is None or cfg.label_hidden < 1:
                raise ValueError(f"{self.kind} needs labels and a label hidden size")
            sites = (cfg.enc_hidden, cfg.enc_unembed, cfg.dec_hidden, cfg.dec_unembed)
            if all(site == "none" for site in sites):
                raise ValueError(f"{self.kind} needs at least one label injection site")
        else:
            sites = (cfg.enc_hidden, cfg.enc_unembed, cfg.dec_hidden, cfg.dec_unembed)
            if cfg.label_hidden != 0 or any(site != "none" for site in sites):
                raise ValueError(f"{self.kind} ignores labels; disable label options")

    # -- architecture metadata ------------------------------------------------

    def config_payload(self) -> dict:
        return {
            "kind": self.kind,
            "config": asdict(self.cfg),
            "vocab": list(self.vocab.activities),
            "schema": None if self.schema is None else self.schema.variables,
        }

    def config_hash(self) -> str:
        import hashlib

        blob = json.dumps(self.config_payload(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- state flattening -----------------------------------------------------

    def _zero_states(self, B: int) -> list[list[Tensor]]:
        z = np.zeros((B, self.cfg.hidden), dtype=self.store.dtype)
        return [[Tensor(z.copy()), Tensor(z.copy())] for _ in range(self.cfg.depth)]

    def _unflatten_state(self, flat: Tensor) -> list[list[Tensor]]:
        S = self.cfg.hidden
        states = []
        for i in range(self.cfg.depth):
            h = ad.slice_cols(flat, 2 * i * S, (2 * i + 1) * S)
            c = ad.slice_cols(flat, (2 * i + 1) * S, (2 * i + 2) * S)
            states.append([h, c])
        return states

    def _flatten_state(self, states: list[list[Tensor]]) -> Tensor:
        parts = []
        for h, c in states:
            parts.extend([h, c])
        return ad.concat(parts, axis=1)

    # -- label and latent paths ----------------------------------------------

    def _labels_vec(self, labels: np.ndarray | None) -> Tensor | None:
        if not self.use_labels:
            return None
        if labels is None:
            raise ValueError(f"{self.kind} requires a label matrix")
        return blocks.encode_labels(self.label_tables, labels)

    def _stack_step(self, x, states, layers, rng, training):
        for i, (wx, wh, b) in enumerate(layers):
            gates = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(states[i][0], wh)), b)
            h, c = ad.lstm_gates(gates, states[i][1])
            states[i][0], states[i][1] = h, c
            x = h
            if training and self.cfg.dropout > 0.0 and i < len(layers) - 1:
                x = ad.dropout(x, self.cfg.dropout, rng)
        return x

    # -- encoder --------------------------------------------------------------

    def encode(
        self,
        acts: np.ndarray,
        durs: np.ndarray,
        label_vec: Tensor | None,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> LatentParams:
        cfg = self.cfg
        B, L = acts.shape
        durs = durs.astype(self.store.dtype)
        if label_vec is not None and cfg.enc_unembed == "add":
            inj = ad.add(ad.matmul(label_vec, self.enc_in_w), self.enc_in_b)
        if label_vec is not None and cfg.enc_hidden != "none":
            flat = ad.add(ad.matmul(label_vec, self.enc_init_w), self.enc_init_b)
            states = self._unflatten_state(flat)
        else:
            states = self._zero_states(B)
        for j in range(L):
            x = blocks.embed_step(self.embed, acts[:, j], Tensor(durs[:, j : j + 1]))
            if label_vec is not None and cfg.enc_unembed == "add":
                x = ad.add(x, inj)
            elif label_vec is not None and cfg.enc_unembed == "concat":
                x = ad.concat([x, label_vec], axis=1)
            self._stack_step(x, states, self.enc_layers, rng, training)
        hidden = ad.relu(
            ad.add(ad.matmul(self._flatten_state(states), self.enc_ff_w), self.enc_ff_b)
        )
        mu = ad.add(ad.matmul(hidden, self.mu_w), self.mu_b)
        logvar = ad.add(ad.matmul(hidden, self.logvar_w), self.logvar_b)
        return LatentParams(mu, logvar)

    # -- decoder --------------------------------------------------------------

    def _decoder_init(self, z: Tensor | None, label_vec: Tensor | None) -> Tensor | None:
        cfg = self.cfg
        if self.use_latent and label_vec is not None and cfg.dec_hidden == "concat":
            joined = ad.concat([z, label_vec], axis=1)
            return ad.add(ad.matmul(joined, self.dec_init_w), self.dec_init_b)
        flat = None
        if self.use_latent:
            flat = ad.add(ad.matmul(z, self.dec_init_z_w), self.dec_init_z_b)
        if label_vec is not None and cfg.dec_hidden != "none":
            lab = ad.add(ad.matmul(label_vec, self.dec_init_label_w), self.dec_init_label_b)
            flat = lab if flat is None else ad.add(flat, lab)
        return flat

    def decode(
        self,
        z: Tensor | None,
        label_vec: Tensor | None,
        teacher: tuple[np.ndarray, np.ndarray] | None,
        tf_ratio: float,
        rng: np.random.Generator | None,
        training: bool,
        B: int | None = None,
        guard_tokens: bool = False,
    ) -> list[tuple[Tensor, Tensor]]:
        """Run L decoder steps; step j's output predicts position j + 1.

        Per step the draw order is fixed: one teacher-forcing uniform (only
        when 0 < tf_ratio < 1), then dropout masks layer by layer.
        """
        cfg = self.cfg
        if teacher is not None:
            B = teacher[0].shape[0]
            teacher_durs = teacher[1].astype(self.store.dtype)
        if B is None:
            raise ValueError("batch size unknown: no teacher and no B")
        flat = self._decoder_init(z, label_vec)
        states = self._unflatten_state(flat) if flat is not None else self._zero_states(B)
        dec_inj = None
        if label_vec is not None and cfg.dec_unembed == "add":
            dec_inj = ad.add(ad.matmul(label_vec, self.dec_out_w), self.dec_out_b)

        tokens = np.full(B, SOS, dtype=np.int64)
        dur_in = Tensor(np.zeros((B, 1), dtype=self.store.dtype))
        steps: list[tuple[Tensor, Tensor]] = []
        for j in range(cfg.L):
            if j > 0:
                if teacher is not None and tf_ratio >= 1.0:
                    use_teacher = True
                elif teacher is not None and tf_ratio > 0.0:
                    use_teacher = bool(rng.random() < tf_ratio)
                else:
                    use_teacher = False
                if use_teacher:
                    tokens = teacher[0][:, j]
                    dur_in = Tensor(teacher_durs[:, j : j + 1])
                else:
                    logits, dur = steps[-1]
                    tokens = self._argmax_tokens(logits.value, position=j, guard=guard_tokens)
                    dur_in = dur
            x = blocks.embed_step(self.embed, tokens, dur_in)
            top = self._stack_step(x, states, self.dec_layers, rng, training)
            if dec_inj is not None:
                top = ad.add(top, dec_inj)
            elif label_vec is not None and cfg.dec_unembed == "concat":
                top = ad.concat([top, label_vec], axis=1)
            steps.append(blocks.unembed_step(top, self.unembed_w, self.unembed_b))
        return steps

    def _argmax_tokens(self, logits: np.ndarray, position: int, guard: bool) -> np.ndarray:
        if not guard:
            return logits.argmax(axis=1)
        masked = logits.copy()
        masked[:, SOS] = -np.inf
        if position == 1:
            masked[:, EOS] = -np.inf
        return masked.argmax(axis=1)

    # -- training and evaluation losses --------------------------------------

    def loss_batch(
        self,
        acts: np.ndarray,
        durs: np.ndarray,
        labels: np.ndarray | None,
        weights: np.ndarray | None,
        rng: np.random.Generator | None,
        training: bool = True,
    ) -> tuple[Tensor, LossBreakdown]:
        cfg = self.cfg
        B = acts.shape[0]
        label_vec = self._labels_vec(labels)
        lp = None
        z = None
        if self.use_latent:
            lp = self.encode(acts, durs, label_vec, rng, training)
            if training:
                eps = rng.standard_normal((B, cfg.latent))
            else:
                eps = np.zeros((B, cfg.latent))
            z = blocks.latent_sample(lp, eps)
        tf = cfg.tf_ratio if training else 1.0
        steps = self.decode(z, label_vec, (acts, durs), tf, rng, training)
        if not self.use_latent:
            lp = None
        return sequence_loss(
            steps, acts, durs,
            weights if cfg.label_weighting else None,
            cfg.alpha, cfg.beta, lp,
        )

    def evaluate_batch(
        self, acts: np.ndarray, durs: np.ndarray, labels: np.ndarray | None
    ) -> LossBreakdown:
        """Unweighted reconstruction figures: raw NLL, raw MSE, raw divergence."""
        label_vec = self._labels_vec(labels)
        lp = None
        z = None
        if self.use_latent:
            lp = self.encode(acts, durs, label_vec, None, False)
            z = lp.mu
        steps = self.decode(z, label_vec, (acts, durs), 1.0, None, False)
        _, breakdown = sequence_loss(steps, acts, durs, None, 1.0, 1.0, lp)
        return breakdown

    # -- generation -----------------------------------------------------------

    def generate(
        self,
        labels: np.ndarray | None = None,
        z: np.ndarray | None = None,
        n: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Generate encoded schedules; returns (acts, durs, degenerate flags)."""
        cfg = self.cfg
        if self.use_labels:
            if labels is None:
                raise ValueError(f"{self.kind} generation requires labels")
            B = labels.shape[0]
        elif z is not None:
            B = z.shape[0]
        elif n is not None:
            B = n
        else:
            raise ValueError("generation needs labels, z, or n")
        if self.use_latent and z is None:
            if rng is None:
                raise ValueError("latent generation needs z or a generator")
            z = rng.standard_normal((B, cfg.latent))
        label_vec = self._labels_vec(labels) if self.use_labels else None
        z_t = Tensor(z.astype(self.store.dtype)) if self.use_latent else None
        steps = self.decode(
            z_t, label_vec, None, 0.0, None, False, B=B, guard_tokens=True
        )

        acts = np.full((B, cfg.L), EOS, dtype=np.int64)
        acts[:, 0] = SOS
        raw_durs = np.zeros((B, cfg.L), dtype=np.float64)
        open_rows = np.ones(B, dtype=bool)
        for j in range(cfg.L - 1):
            logits, dur = steps[j]
            tokens = self._argmax_tokens(logits.value, position=j + 1, guard=True)
            acts[open_rows, j + 1] = tokens[open_rows]
            raw_durs[open_rows, j + 1] = dur.value[open_rows, 0]
            open_rows = open_rows & (tokens != EOS)
        # rows that never emitted an end token get one at the last position
        acts[open_rows, cfg.L - 1] = EOS
        raw_durs[acts == EOS] = 0.0
        durs, flags = normalize_durations(acts, raw_durs)
        return acts, durs, flags

    # -- persistence ----------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return self.store.state_arrays()

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.store.load_state(arrays)


def assemble(
    kind: str,
    cfg: ModelConfig | None,
    vocab: ActivityVocab,
    schema: LabelSchema | None,
    seed: int = 0,
) -> ScheduleModel:
    if cfg is None:
        cfg = default_config(kind)
    return ScheduleModel(kind, cfg, vocab, schema, seed)


def encoder_forward(
    model: ScheduleModel,
    acts: np.ndarray,
    durs: np.ndarray,
    labels: np.ndarray | None = None,
) -> LatentParams:
    return model.encode(acts, durs, model._labels_vec(labels))


def decoder_forward(
    model: ScheduleModel,
    z: np.ndarray | None,
    labels: np.ndarray | None,
    teacher: tuple[np.ndarray, np.ndarray] | None,
    tf_ratio: float,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> list[blocks.StepOutput]:
    label_vec = model._labels_vec(labels) if model.use_labels else None
    z_t = Tensor(z.astype(model.store.dtype)) if z is not None else None
    B = None
    if teacher is None:
        B = z.shape[0] if z is not None else labels.shape[0]
    steps = model.decode(z_t, label_vec, teacher, tf_ratio, rng, training, B=B)
    return [blocks.step_output(logits, dur) for logits, dur in steps]
