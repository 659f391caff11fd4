"""Supervised training: pixel cross-entropy, AdamW with a poly learning-rate
schedule, and mean intersection-over-union evaluation."""

from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .data import SyntheticSample
from .errors import DataError, NumericalError, UsageError
from .module import Module
from .rng import RandomSource
from .serialization import save_checkpoint
from .tensor import Tensor, log_softmax


def cross_entropy(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax(logits)[true class]."""
    B, K, H, W = logits.shape
    mask = np.asarray(mask)
    if mask.shape != (B, H, W):
        raise DataError(f"mask shape {mask.shape} does not match logits {logits.shape}")
    if mask.min() < 0 or mask.max() >= K:
        raise DataError(f"labels must lie in 0..{K - 1}, got [{mask.min()}, {mask.max()}]")
    onehot = np.zeros((B, K, H, W), dtype=logits.dtype)
    np.put_along_axis(onehot, mask[:, None], 1.0, axis=1)
    logp = log_softmax(logits, axis=1)
    return -(logp * Tensor(onehot)).sum() * (1.0 / (B * H * W))


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    if not 0 <= iteration < cfg.iterations:
        raise UsageError(
            f"iteration {iteration} outside 0..{cfg.iterations - 1}")
    return cfg.base_lr * (1.0 - iteration / cfg.iterations) ** cfg.poly_power


class AdamW:
    """Adam with decoupled weight decay (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, named_params, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self, lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (name, p) in enumerate(self.named_params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            p.data -= lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)


def miou(pred: np.ndarray, true: np.ndarray, K: int):
    """Per-class IoU and their mean; classes absent from both maps are
    excluded from the mean."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {true.shape}")
    ious = []
    present = []
    for c in range(K):
        p = pred == c
        t = true == c
        union = np.logical_or(p, t).sum()
        if union == 0:
            ious.append(None)
            continue
        inter = np.logical_and(p, t).sum()
        iou = inter / union
        ious.append(float(iou))
        present.append(iou)
    return ious, float(np.mean(present)) if present else 0.0


def evaluate(model: Module, samples: list[SyntheticSample], K: int) -> float:
    """Dataset mIoU from aggregated per-class intersection/union counts."""
    was_training = model.training
    model.eval()
    inter = np.zeros(K, dtype=np.int64)
    union = np.zeros(K, dtype=np.int64)
    for sample in samples:
        logits = model(Tensor(sample.image[None]))
        pred = logits.data.argmax(axis=1)[0]
        for c in range(K):
            p = pred == c
            t = sample.mask == c
            inter[c] += np.logical_and(p, t).sum()
            union[c] += np.logical_or(p, t).sum()
    if was_training:
        model.train()
    seen = union > 0
    return float((inter[seen] / union[seen]).mean()) if seen.any() else 0.0


def _format_row(iteration: int, lr: float, loss: float, val) -> str:
    m = "" if val is None else f"{val:.6f}"
    return f"{iteration},{lr:.10g},{loss:.10g},{m}"


def train_loop(model: Module, train_set: list[SyntheticSample],
               val_set: list[SyntheticSample], cfg: TrainConfig,
               metrics_path=None, checkpoint_path=None,
               log_fn=None) -> list[str]:
    """Run the optimization loop; returns the metrics CSV rows.

    On a non-finite loss the loop aborts with the last periodic checkpoint
    left in place.
    """
    cfg.validate()
    num_classes = model.decoder.cfg.num_classes
    # one fixed shuffle, then cyclic in-order batches: deterministic, and
    # equal-length windows of the loss curve cover identical data
    order = RandomSource(cfg.seed).spawn(999).choice(
        len(train_set), len(train_set), replace=False)
    optimizer = AdamW(model.named_parameters(), weight_decay=cfg.weight_decay)
    rows = ["iter,lr,loss,miou"]
    model.train()
    try:
        for iteration in range(cfg.iterations):
            lr = poly_lr(iteration, cfg)
            start = (iteration * cfg.batch_size) % len(order)
            idx = np.take(order, range(start, start + cfg.batch_size),
                          mode="wrap")
            images = np.stack([train_set[i].image for i in idx])
            masks = np.stack([train_set[i].mask for i in idx])

            logits = model(Tensor(images))
            loss = cross_entropy(logits, masks)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericalError(
                    f"loss became non-finite at iteration {iteration}")

            model.zero_grad()
            loss.backward()
            optimizer.step(lr)

            is_eval = ((iteration + 1) % cfg.eval_interval == 0
                       or iteration == cfg.iterations - 1)
            val = evaluate(model, val_set, num_classes) if is_eval else None
            row = _format_row(iteration, lr, loss_value, val)
            rows.append(row)
            if log_fn is not None:
                log_fn(row)
            if is_eval and checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model.state())
    finally:
        if metrics_path is not None:
            with open(metrics_path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(rows) + "\n")
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.state())
    return rows
