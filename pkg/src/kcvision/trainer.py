"""Self-supervised contrastive training (SimCLR-style NT-Xent)."""
from __future__ import annotations

import json
import logging
import math
import time

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import TrainConfig
from .images import resize_bilinear
from .numeric import AdamW, CosineAnnealing, Tensor, no_grad, ops

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# augmentation

def _crop_box(h, w, rng, scale_min, scale_max, ratio=(3 / 4, 4 / 3)):
    area = h * w
    for _ in range(10):
        target = area * rng.uniform(scale_min, scale_max)
        aspect = math.exp(rng.uniform(math.log(ratio[0]), math.log(ratio[1])))
        ch = int(round(math.sqrt(target / aspect)))
        cw = int(round(math.sqrt(target * aspect)))
        if 0 < ch <= h and 0 < cw <= w:
            y0 = int(rng.integers(0, h - ch + 1))
            x0 = int(rng.integers(0, w - cw + 1))
            return y0, x0, ch, cw
    side = max(1, min(h, w))  # fall back to a centred square
    return (h - side) // 2, (w - side) // 2, side, side


def augment(img, rng, cfg: TrainConfig, size=75):
    """One random view of a (2, H, W) image, resized to ``size``."""
    _, h, w = img.shape
    if cfg.crop_scale_min >= 1.0:
        view = img
    else:
        y0, x0, ch, cw = _crop_box(h, w, rng, cfg.crop_scale_min, cfg.crop_scale_max)
        view = img[:, y0:y0 + ch, x0:x0 + cw]
    view = resize_bilinear(view, size, size)
    if rng.random() < cfg.flip_p:
        view = view[:, :, ::-1]
    if cfg.brightness:
        view = view * (1.0 + rng.uniform(-cfg.brightness, cfg.brightness))
    if cfg.contrast:
        mean = view.mean()
        view = (view - mean) * (1.0 + rng.uniform(-cfg.contrast, cfg.contrast)) + mean
    if cfg.blur_p and rng.random() < cfg.blur_p:
        view = gaussian_filter(view, sigma=(0, cfg.blur_sigma, cfg.blur_sigma))
    return np.clip(view, 0.0, 1.0).astype(img.dtype, copy=False)


def augment_pair(img, cfg: TrainConfig, seed, size=75):
    """Two independently augmented views of the same image (seeded)."""
    rng = np.random.default_rng(seed)
    img = np.asarray(img, dtype=np.float32)
    return augment(img, rng, cfg, size), augment(img, rng, cfg, size)


def identity_augmentation():
    return TrainConfig(crop_scale_min=1.0, crop_scale_max=1.0, flip_p=0.0, brightness=0.0,
                       contrast=0.0, blur_p=0.0)


# ---------------------------------------------------------------------------
# loss

def nt_xent(kc1, kc2, temperature=0.5, eps=0.0):
    """Normalised temperature-scaled cross-entropy over 2B views.

    Rows are L2-normalised (a zero row is an error unless ``eps > 0``);
    self-similarities are masked to -inf and each row's target is its
    augmented partner ``i +/- B``.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    kc1, kc2 = ops.as_tensor(kc1), ops.as_tensor(kc2)
    if kc1.shape != kc2.shape or kc1.ndim != 2:
        raise ValueError(f"nt_xent: view shapes differ: {kc1.shape} vs {kc2.shape}")
    b = kc1.shape[0]
    z = ops.l2_normalize(ops.concat([kc1, kc2], axis=0), eps=eps)
    sim = ops.matmul(z, ops.transpose(z)) * (1.0 / temperature)
    sim = ops.fill_diagonal(sim, -np.inf)
    targets = np.concatenate([np.arange(b, 2 * b), np.arange(b)])
    return ops.cross_entropy(sim, targets)


# ---------------------------------------------------------------------------
# loop

def _views(images, idx, cfg, seed, epoch, size):
    v1, v2 = [], []
    for i in idx:
        a, b = augment_pair(images[i], cfg, (seed, epoch, int(i)), size)
        v1.append(a)
        v2.append(b)
    return np.stack(v1), np.stack(v2)


def batch_loss(model, x1, x2, cfg: TrainConfig, view_seed=0):
    if model.kind == "snn":
        _, r1 = model(x1, seed=(view_seed, 1))
        _, r2 = model(x2, seed=(view_seed, 2))
        return nt_xent(r1, r2, cfg.temperature, eps=1e-6)
    return nt_xent(model(x1, training=True), model(x2, training=True), cfg.temperature)


def snn_backward(model, x1, x2, cfg: TrainConfig, view_seed=0):
    """Accumulate the exact NT-Xent gradient of a spiking batch in bounded memory.

    Backprop through time keeps every time step of every layer alive, so a
    whole batch does not fit in memory.  The rate codes are first computed
    without a graph; the loss gradient with respect to them is then pushed
    back through one replayed chunk of ``cfg.snn_grad_chunk`` images at a time.
    The input rasters are drawn once per view, so replays see the same spikes
    and the result equals :func:`batch_loss` followed by ``backward()``.
    """
    chunk = cfg.snn_grad_chunk
    views = [(x, model.input_raster(x, seed=(view_seed, v))) for v, x in ((1, x1), (2, x2))]
    spans = [slice(i, i + chunk) for i in range(0, len(x1), chunk)]
    with no_grad():
        codes = [Tensor(np.concatenate([model(x[s], raster=r[:, s])[1].data for s in spans]),
                        requires_grad=True) for x, r in views]
    loss = nt_xent(codes[0], codes[1], cfg.temperature, eps=1e-6)
    if not np.isfinite(loss.item()):
        return loss
    loss.backward()
    for (x, r), code in zip(views, codes):
        for s in spans:
            _, rate = model(x[s], raster=r[:, s])
            rate.backward(code.grad[s])
    return loss


def train_epoch(model, images, cfg: TrainConfig, optimizer, epoch=0, batch_size=None):
    """One pass over ``images`` (N, 2, H, W); returns ``{"mean_loss", "lr"}``."""
    batch_size = batch_size or (cfg.snn_batch_size if model.kind == "snn" else cfg.batch_size)
    order = np.random.default_rng((cfg.seed, epoch)).permutation(len(images))
    size = model.cfg.input_size
    losses = []
    for bi, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        if len(idx) < 2:  # a lone sample has no negatives
            continue
        x1, x2 = _views(images, idx, cfg, cfg.seed, epoch, size)
        optimizer.zero_grad()
        view_seed = (cfg.seed, epoch, bi)
        if model.kind == "snn":
            loss = snn_backward(model, x1, x2, cfg, view_seed)
        else:
            loss = batch_loss(model, x1, x2, cfg, view_seed)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(
                f"non-finite loss {value} at epoch {epoch} batch {bi} (lr={optimizer.lr:g})")
        if model.kind != "snn":
            loss.backward()
        optimizer.step()
        losses.append(value)
        log.debug("epoch %d batch %d loss %.5f", epoch, bi, value)
    return {"mean_loss": float(np.mean(losses)) if losses else float("nan"),
            "lr": optimizer.lr}


def fit(model, images, cfg: TrainConfig, log_path=None, batch_size=None, callback=None):
    """Full training run with AdamW and per-epoch cosine annealing.

    Appends ``{epoch, mean_loss, lr, wall_seconds}`` JSON lines to
    ``log_path`` when given; returns the list of epoch records.
    """
    optimizer = AdamW(model.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    schedule = CosineAnnealing(optimizer, cfg.epochs)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        metrics = train_epoch(model, images, cfg, optimizer, epoch, batch_size)
        record = {"epoch": epoch + 1, "mean_loss": metrics["mean_loss"], "lr": metrics["lr"],
                  "wall_seconds": round(time.perf_counter() - t0, 3)}
        schedule.step()
        history.append(record)
        log.info("epoch %d: loss %.5f lr %.3g", record["epoch"], record["mean_loss"],
                 record["lr"])
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        if callback is not None:
            callback(record)
    return history
