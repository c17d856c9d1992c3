"""Reusable model blocks: continuous embedding and un-embedding, the label
encoder, and the latent block.

All functions are batched: the leading axis is the sample axis. They operate
on autodiff tensors so gradients flow wherever a tape is active.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import autodiff as ad
from .nn.autodiff import Tensor


@dataclass
class StepOutput:
    """One decoder step: activity probabilities and a duration per sample."""

    probs: np.ndarray  # (B, N_a) rows on the simplex
    durations: np.ndarray  # (B,) in [0, 1]


@dataclass
class LatentParams:
    mu: Tensor  # (B, latent)
    logvar: Tensor  # (B, latent)


def embed_step(table: Tensor, tokens: np.ndarray, durations: Tensor) -> Tensor:
    """Token lookup of size S-1 concatenated with the raw duration scalar."""
    vocab_size = table.value.shape[0]
    if np.any(tokens < 0) or np.any(tokens >= vocab_size):
        raise IndexError(f"token out of vocabulary range 0..{vocab_size - 1}")
    return ad.concat([ad.embedding(table, tokens), durations], axis=1)


def unembed_step(hidden: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Linear map to N_a + 1; softmax-ready logits plus a sigmoid duration."""
    full = ad.add(ad.matmul(hidden, w), b)
    n_out = w.value.shape[1]
    logits = ad.slice_cols(full, 0, n_out - 1)
    duration = ad.sigmoid(ad.slice_cols(full, n_out - 1, n_out))
    return logits, duration


def step_output(logits: Tensor, duration: Tensor) -> StepOutput:
    return StepOutput(ad.softmax(logits.value), duration.value[:, 0])


def encode_labels(tables: list[Tensor], labels: np.ndarray) -> Tensor:
    """Per-variable embeddings of size H, combined through addition."""
    if labels.ndim != 2 or labels.shape[1] != len(tables):
        raise ValueError(
            f"label matrix has {labels.shape[-1]} variables, schema has {len(tables)}"
        )
    out = None
    for v, table in enumerate(tables):
        column = labels[:, v]
        if np.any(column < 0) or np.any(column >= table.value.shape[0]):
            raise ValueError(f"label token out of range for variable {v}")
        emb = ad.embedding(table, column)
        out = emb if out is None else ad.add(out, emb)
    return out


def latent_sample(lp: LatentParams, eps: np.ndarray) -> Tensor:
    """Reparametrised draw z = mu + exp(logvar / 2) * eps."""
    sigma = ad.exp(ad.mul_const(lp.logvar, 0.5))
    return ad.add(lp.mu, ad.mul(sigma, Tensor(eps.astype(lp.mu.dtype))))


def kld_per_sample(lp: LatentParams) -> Tensor:
    """0.5 * sum(mu^2 + exp(logvar) - 1 - logvar) per sample."""
    inner = ad.sub(
        ad.add(ad.square(lp.mu), ad.exp(lp.logvar)),
        ad.add_const(lp.logvar, 1.0),
    )
    return ad.mul_const(ad.sum_(inner, axis=1), 0.5)


def kld(lp: LatentParams) -> Tensor:
    """Batch-averaged divergence from the standard-normal prior."""
    return ad.mean_(kld_per_sample(lp))
