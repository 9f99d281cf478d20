"""Training loop and inference for the segmentation network."""

import csv
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from hipscreen import augment as aug
from hipscreen.errors import ConfigError, EmptySplit, ShapeError
from hipscreen.metrics import overlap_metrics
from hipscreen.nnet import checkpoint as ckpt_io
from hipscreen.nnet.layers import softmax_ce_loss
from hipscreen.nnet.optim import Adam
from hipscreen.nnet.unet import UNetConfig, init_params, unet_backward, unet_forward

logger = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "train_loss", "val_loss", "val_mean_dsc", "seconds")
EVAL_BATCH = 16


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 0.001
    epochs: int = 50
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    final: ckpt_io.Checkpoint
    best: ckpt_io.Checkpoint
    log: list


def _stack(samples, dtype):
    images = np.stack([s.image for s in samples])[:, None].astype(dtype)
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    return images, masks


def new_checkpoint(unet_config, train_config, dtype=np.float32):
    rng = np.random.default_rng([train_config.seed, 0])
    params, bn_state = init_params(unet_config, rng, dtype)
    shuffle_rng = np.random.default_rng([train_config.seed, 1])
    return ckpt_io.Checkpoint(unet_config, params, bn_state,
                              rng_state=shuffle_rng.bit_generator.state,
                              train_config=train_config.to_dict())


def evaluate(ckpt, samples, classes=(1, 2, 3)):
    """``(mean loss, mean per-class DSC)`` in inference mode."""
    total_loss, dscs = 0.0, []
    dtype = ckpt.params["head.w"].dtype
    for i in range(0, len(samples), EVAL_BATCH):
        chunk = samples[i:i + EVAL_BATCH]
        images, masks = _stack(chunk, dtype)
        logits, _ = unet_forward(ckpt.unet_config, ckpt.params, ckpt.bn_state, images, "infer")
        loss, _ = softmax_ce_loss(logits, masks)
        total_loss += loss * len(chunk)
        pred = logits.argmax(axis=1)
        for p, g in zip(pred, masks):
            dscs.extend(overlap_metrics(p, g, c).dsc for c in classes)
    return total_loss / len(samples), float(np.mean(dscs))


def train_epoch(ckpt, optimizer, train_samples, train_config, augment_config):
    """One pass over ``train_samples``; mutates ``ckpt`` and ``optimizer``."""
    cfg = ckpt.unet_config
    dtype = ckpt.params["head.w"].dtype
    shuffle_rng = np.random.default_rng()
    shuffle_rng.bit_generator.state = ckpt.rng_state
    order = shuffle_rng.permutation(len(train_samples))
    ckpt.rng_state = shuffle_rng.bit_generator.state
    epoch = ckpt.epoch
    total = 0.0
    for start in range(0, len(order), train_config.batch_size):
        batch = []
        for idx in order[start:start + train_config.batch_size]:
            s = train_samples[idx]
            if augment_config is not None and augment_config.enabled:
                s = aug.augment(s, aug.sample_stream(augment_config.seed, int(idx), epoch), augment_config)
            batch.append(s)
        images, masks = _stack(batch, dtype)
        logits, cache = unet_forward(cfg, ckpt.params, ckpt.bn_state, images, "train")
        loss, dlogits = softmax_ce_loss(logits, masks)
        grads = unet_backward(cfg, cache, dlogits)
        optimizer.step(ckpt.params, grads)
        total += loss * len(batch)
    ckpt.epoch += 1
    ckpt.adam_t = optimizer.t
    ckpt.adam_state = optimizer.state_arrays()
    return total / len(order)


def train(train_samples, val_samples=(), unet_config=UNetConfig(), train_config=TrainConfig(),
          augment_config=None, resume=None, on_epoch=None):
    """Train for ``train_config.epochs`` epochs (counted from ``resume.epoch`` if given).

    Returns a :class:`TrainResult` carrying the final checkpoint, the
    checkpoint with the best validation mean DSC (the final one when there is
    no validation data) and one log row per epoch.
    """
    train_samples = list(train_samples)
    val_samples = list(val_samples)
    if not train_samples:
        raise EmptySplit("training split is empty")
    size = unet_config.input_size
    for s in train_samples + val_samples:
        if s.image.shape != (size, size):
            raise ShapeError(f"sample {s.id} is {s.image.shape}, network expects {size}x{size}")

    ckpt = resume.copy() if resume is not None else new_checkpoint(unet_config, train_config)
    ckpt.train_config = train_config.to_dict()
    optimizer = Adam(train_config.learning_rate, train_config.adam_beta1,
                     train_config.adam_beta2, train_config.adam_eps)
    optimizer.load_state_arrays(ckpt.adam_t, ckpt.adam_state)
    best = ckpt.copy()
    log = []
    while ckpt.epoch < train_config.epochs:
        t0 = time.perf_counter()
        train_loss = train_epoch(ckpt, optimizer, train_samples, train_config, augment_config)
        if val_samples:
            val_loss, val_dsc = evaluate(ckpt, val_samples)
        else:
            val_loss = val_dsc = float("nan")
        seconds = time.perf_counter() - t0
        if val_samples and (ckpt.best_val_dsc is None or val_dsc > ckpt.best_val_dsc):
            ckpt.best_val_dsc = val_dsc
            best = ckpt.copy()
        row = {"epoch": ckpt.epoch, "train_loss": train_loss, "val_loss": val_loss,
               "val_mean_dsc": val_dsc, "seconds": seconds}
        log.append(row)
        logger.info("epoch %d train_loss %.5f val_loss %.5f val_dsc %.4f (%.1fs)",
                    ckpt.epoch, train_loss, val_loss, val_dsc, seconds)
        if on_epoch is not None:
            on_epoch(row)
    if not val_samples:
        best = ckpt.copy()
    return TrainResult(ckpt, best, log)


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r["epoch"], f"{r['train_loss']:.8f}", f"{r['val_loss']:.8f}",
                        f"{r['val_mean_dsc']:.6f}", f"{r['seconds']:.3f}"])


def predict_logits(ckpt, images):
    images = np.asarray(images)
    batch = images[:, None] if images.ndim == 3 else images
    dtype = ckpt.params["head.w"].dtype
    out = []
    for i in range(0, len(batch), EVAL_BATCH):
        logits, _ = unet_forward(ckpt.unet_config, ckpt.params, ckpt.bn_state,
                                 batch[i:i + EVAL_BATCH].astype(dtype), "infer")
        out.append(logits)
    return np.concatenate(out)


def predict_masks(ckpt, images):
    """Label masks for a stack of images; ties resolve to the smaller class."""
    return predict_logits(ckpt, images).argmax(axis=1).astype(np.uint8)


def predict_mask(ckpt, image):
    image = np.asarray(image)
    size = ckpt.unet_config.input_size
    if image.shape != (size, size):
        raise ShapeError(f"image is {image.shape}, network expects {size}x{size}")
    return predict_masks(ckpt, image[None])[0]
