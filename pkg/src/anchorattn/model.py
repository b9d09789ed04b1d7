"""Small anchor-attention classifier used by the training demo.

Architecture per sample (tokens ``X``, n x D)::

    E = X @ W_emb
    E = E + tanh(MHA_b(E))          for each block b
    logits = mean_rows(E) @ W_cls + b_cls

The tanh keeps attention visible through the mean-pool: because the anchor
similarity matrix is symmetric and row-stochastic, its columns also sum to
one, so ``mean_rows(S_t @ V) == mean_rows(V)`` and a purely linear block
would make the anchors irrelevant to the prediction.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .anchor import AnchorCountWarning, MultiHeadParams, init_multi_head
from .autograd import (
    multi_head_backward,
    multi_head_forward,
    pack_multi_head,
    pack_multi_head_grads,
    sgd_step,
    unpack_multi_head,
)
from .data import SyntheticTask

log = logging.getLogger(__name__)


@dataclass
class ClassifierConfig:
    in_dim: int
    classes: int
    width: int = 8
    heads: int = 2
    anchors: int = 30
    blocks: int = 2
    shared_anchors: bool = False


def init_classifier(cfg: ClassifierConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Parameters as a flat name -> array mapping. The classifier head starts at zero."""
    params = {"W_emb": rng.standard_normal((cfg.in_dim, cfg.width)) / math.sqrt(cfg.in_dim)}
    for b in range(cfg.blocks):
        mh = init_multi_head(cfg.width, cfg.width, cfg.anchors, cfg.heads, rng, cfg.shared_anchors)
        params.update(pack_multi_head(mh, prefix=f"block{b}."))
    params["W_cls"] = np.zeros((cfg.width, cfg.classes))
    params["b_cls"] = np.zeros((1, cfg.classes))
    return params


class Classifier:
    def __init__(self, cfg: ClassifierConfig):
        self.cfg = cfg
        self._templates = [
            init_multi_head(cfg.width, cfg.width, 1, cfg.heads, np.random.default_rng(0), cfg.shared_anchors)
            for _ in range(cfg.blocks)
        ]

    def _block(self, params, b) -> MultiHeadParams:
        return unpack_multi_head(params, self._templates[b], prefix=f"block{b}.")

    def forward(self, params, X):
        E = X @ params["W_emb"]
        caches = []
        for b in range(self.cfg.blocks):
            mh = self._block(params, b)
            Y, cache = multi_head_forward(E, mh)
            T = np.tanh(Y)
            caches.append((E, mh, cache, T))
            E = E + T
        pooled = E.mean(axis=0, keepdims=True)
        logits = pooled @ params["W_cls"] + params["b_cls"]
        return logits[0], (X, caches, pooled)

    def loss_and_grads(self, params, X, label):
        logits, (X, caches, pooled) = self.forward(params, X)
        shifted = logits - logits.max()
        logp = shifted - math.log(np.exp(shifted).sum())
        loss = -float(logp[label])
        dlogits = np.exp(logp)
        dlogits[label] -= 1.0
        dlogits = dlogits[None, :]
        grads = {"W_cls": pooled.T @ dlogits, "b_cls": dlogits}
        n = X.shape[0]
        dE = np.repeat(dlogits @ params["W_cls"].T / n, n, axis=0)
        for b in reversed(range(self.cfg.blocks)):
            E_in, mh, cache, T = caches[b]
            dY = dE * (1.0 - T * T)
            g = multi_head_backward(E_in, mh, cache, dY)
            grads.update(pack_multi_head_grads(g, prefix=f"block{b}."))
            dE = dE + g.d_X
        grads["W_emb"] = X.T @ dE
        return loss, grads

    def predict(self, params, X) -> int:
        logits, _ = self.forward(params, X)
        return int(np.argmax(logits))

    def accuracy(self, params, task: SyntheticTask) -> float:
        if len(task) == 0:
            return float("nan")
        hits = sum(self.predict(params, x) == y for x, y in zip(task.X, task.labels))
        return hits / len(task)


@dataclass
class TrainResult:
    epoch_losses: list[float]
    train_accuracy: float
    holdout_accuracy: float
    params: dict[str, np.ndarray] = field(repr=False)
    diverged: bool = False


def train_classifier(
    train: SyntheticTask,
    holdout: SyntheticTask,
    cfg: ClassifierConfig,
    epochs: int = 10,
    lr: float = 0.1,
    batch_size: int = 16,
    seed: int = 0,
    on_epoch=None,
) -> TrainResult:
    """Minibatch SGD on mean cross-entropy; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    model = Classifier(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AnchorCountWarning)
        params = init_classifier(cfg, rng)
        losses = []
        for epoch in range(epochs):
            order = rng.permutation(len(train))
            total = 0.0
            for start in range(0, len(order), batch_size):
                batch = order[start:start + batch_size]
                acc = {k: np.zeros_like(v) for k, v in params.items()}
                for i in batch:
                    loss, grads = model.loss_and_grads(params, train.X[i], int(train.labels[i]))
                    total += loss
                    for k, g in grads.items():
                        acc[k] += g
                if not math.isfinite(total):
                    return TrainResult(losses + [total], float("nan"), float("nan"), params, diverged=True)
                params = sgd_step(params, {k: g / len(batch) for k, g in acc.items()}, lr)
                if not all(np.isfinite(v).all() for v in params.values()):
                    return TrainResult(losses + [float("nan")], float("nan"), float("nan"), params, diverged=True)
            losses.append(total / len(train))
            log.info("epoch %d loss %.6f", epoch + 1, losses[-1])
            if on_epoch is not None:
                on_epoch(epoch + 1, losses[-1])
        return TrainResult(
            epoch_losses=losses,
            train_accuracy=model.accuracy(params, train),
            holdout_accuracy=model.accuracy(params, holdout),
            params=params,
        )
