"""Training loop, evaluation, weight tracing, occlusion runs, and sweeps."""

import time
from dataclasses import dataclass, field

import numpy as np

from .config import LossConfig, ModelConfig
from .data import augment_batch, synth_dataset
from .errors import NumericalError
from .head import classification_loss
from .local_ensemble import plan_patches
from .model import LNLAttenNet
from .tensor import backward, no_grad


class Adam:
    """Adaptive moment estimation with standard defaults."""

    def __init__(self, store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def sgd_step(store, lr):
    """Plain gradient step (used by descent sanity checks)."""
    for _, p in store.items():
        if p.grad is not None:
            p.data -= lr * p.grad


@dataclass
class TrainRecord:
    m: int
    class_count: int
    iterations: list = field(default_factory=list)   # per-iteration dicts
    epochs: list = field(default_factory=list)       # (epoch, test_acc, confusion)
    # invariant watermarks, updated every iteration
    max_row_sum_err: float = 0.0
    max_wg_sum_err: float = 0.0
    gate_min: float = 1.0
    gate_max: float = 0.0
    clamped_total: int = 0
    wall_seconds: float = 0.0

    def wg_series(self):
        return np.array([it["wg"] for it in self.iterations])

    def loss_series(self):
        return np.array([it["loss_entropy"] for it in self.iterations])


def _mean_wg(out, batched):
    wg = out["wg"].data
    return wg.mean(axis=0) if batched else wg


def train(model_cfg: ModelConfig, train_cfg, dataset, test_dataset=None,
          dtype=np.float32, overlap_pixels=None, model=None, log=None):
    """Train a model; returns (model, TrainRecord).

    Deterministic given (config seeds, thread count): shuffling and
    augmentation use a dedicated RNG stream derived from the model seed.
    """
    if len(dataset) == 0:
        raise NumericalError("cannot train on an empty dataset")
    if dataset.labels.max() >= model_cfg.class_count:
        raise NumericalError("dataset labels exceed class_count")
    if model is None:
        model = LNLAttenNet(model_cfg, dtype=dtype, overlap_pixels=overlap_pixels)
    loss_cfg = LossConfig.from_model(model_cfg)
    batch = train_cfg.resolved_batch_size(model_cfg)
    rng = np.random.default_rng([model_cfg.seed, 7919])
    opt = Adam(model.store, train_cfg.learning_rate)
    weights = model.store.weights()
    record = TrainRecord(m=model_cfg.m, class_count=model_cfg.class_count)
    n = len(dataset)
    it = 0
    t_start = time.time()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = order[lo:lo + batch]
            images = dataset.images[idx].astype(model.dtype)
            labels = dataset.labels[idx]
            blank = train_cfg.patch_blank_fraction
            if train_cfg.horizontal_flip or train_cfg.random_crop or blank > 0:
                images = augment_batch(images, rng,
                                       horizontal_flip=train_cfg.horizontal_flip,
                                       random_crop=train_cfg.random_crop,
                                       patch_blank_fraction=blank,
                                       layout=model.layout)
            out = model.forward(images)
            loss, entropy, l2v, clamped = classification_loss(
                out["probs"], labels, weights, loss_cfg)
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite loss at iteration {it}")
            model.store.zero_grads()
            backward(loss)
            opt.step()

            probs = out["probs"].data
            acc = float((probs.argmax(axis=-1) == labels).mean())
            wg = _mean_wg(out, batched=True)
            rec = {"iter": it, "loss_entropy": entropy, "loss_l2": l2v,
                   "acc": acc, "wg": wg, "clamped": clamped}
            record.iterations.append(rec)
            record.clamped_total += clamped
            if out["r"] is not None:
                rs = out["r"].data.sum(axis=-1)
                record.max_row_sum_err = max(record.max_row_sum_err,
                                             float(np.abs(rs - 1.0).max()))
                ws = out["wg"].data.sum(axis=-1)
                record.max_wg_sum_err = max(record.max_wg_sum_err,
                                            float(np.abs(ws - 1.0).max()))
            if model.with_gates:
                gd = out["gates"].data
                record.gate_min = min(record.gate_min, float(gd.min()))
                record.gate_max = max(record.gate_max, float(gd.max()))
            it += 1
        opt.lr *= train_cfg.lr_decay_per_epoch
        if test_dataset is not None:
            acc, confusion = evaluate(model, test_dataset)
            record.epochs.append({"epoch": epoch, "test_acc": acc,
                                  "confusion": confusion})
            if log:
                log(f"epoch {epoch}: test_acc={acc:.4f} "
                    f"loss={record.iterations[-1]['loss_entropy']:.4f}")
    record.wall_seconds = time.time() - t_start
    return model, record


def evaluate(model, dataset, batch_size=32):
    """Accuracy and C x C confusion matrix (rows = true class), no augmentation."""
    c = model.cfg.class_count
    confusion = np.zeros((c, c), dtype=np.int64)
    with no_grad():
        for lo in range(0, len(dataset), batch_size):
            images = dataset.images[lo:lo + batch_size].astype(model.dtype)
            labels = dataset.labels[lo:lo + batch_size]
            pred = model.forward(images)["probs"].data.argmax(axis=-1)
            for t, p in zip(labels, pred):
                confusion[t, p] += 1
    acc = float(np.trace(confusion) / max(confusion.sum(), 1))
    return acc, confusion


def forward_stats(model, dataset, batch_size=32):
    """Mean per-region non-local weights and gates over a dataset."""
    wgs, gates = [], []
    with no_grad():
        for lo in range(0, len(dataset), batch_size):
            images = dataset.images[lo:lo + batch_size].astype(model.dtype)
            out = model.forward(images)
            wgs.append(out["wg"].data)
            gates.append(out["gates"].data[..., 0])
    return np.concatenate(wgs).mean(axis=0), np.concatenate(gates).mean(axis=0)


def trace_weights(record):
    """Per-region weight series plus first/last-decile variance summary."""
    series = record.wg_series()
    if len(series) == 0:
        raise NumericalError("empty train record")
    t = len(series)
    dec = max(t // 10, 1)
    first = series[:dec]
    last = series[-dec:]
    return {
        "series": series,
        "first_decile_var": float(first.var(axis=0).mean()),
        "last_decile_var": float(last.var(axis=0).mean()),
        "final_wg": series[-1],
    }


def occlude_patch(image, layout, patch_index):
    """Zero the pixels covered by the indexed patch (copy)."""
    r, c = layout.cells()[patch_index]
    p = layout.patch_size
    out = np.array(image, copy=True)
    out[..., r:r + p, c:c + p, :] = 0.0
    return out


def patch_neighbors(layout, patch_index):
    """Indices of patches sharing pixels with the given patch (overlap)."""
    cells = layout.cells()
    r0, c0 = cells[patch_index]
    p = layout.patch_size
    out = []
    for i, (r, c) in enumerate(cells):
        if i == patch_index:
            continue
        if abs(r - r0) < p and abs(c - c0) < p:
            out.append(i)
    return out


def occlusion_experiment(model, image, patch_index):
    """Gate vectors before/after zeroing one patch of the input image.

    Returns (gates_before, gates_after, changed) where changed lists the
    indices whose gate moved, split into the occluded patch, overlap
    neighbors, and the rest.
    """
    layout = model.layout
    with no_grad():
        before = model.forward(image[None])["gates"].data[0, :, 0]
        occluded = occlude_patch(image, layout, patch_index)
        after = model.forward(occluded[None])["gates"].data[0, :, 0]
    delta = after - before
    changed = [i for i in range(layout.m) if delta[i] != 0.0]
    neighbors = set(patch_neighbors(layout, patch_index))
    return before, after, {
        "delta": delta,
        "occluded_dropped": bool(delta[patch_index] < 0),
        "changed": changed,
        "changed_neighbors": sorted(set(changed) & neighbors),
        "changed_far": sorted(set(changed) - neighbors - {patch_index}),
    }


def sweep(parameter, values, model_cfg, train_cfg, samples_per_class=60,
          test_per_class=30, dtype=np.float32, log=None):
    """Train one model per value of alpha / m / overlap_pixels.

    Returns a list of row dicts (value, accuracy or skip reason)."""
    if parameter not in ("alpha", "m", "overlap_pixels"):
        raise NumericalError(f"unknown sweep parameter {parameter!r}")
    rows = []
    for value in values:
        kwargs = dict(profile=model_cfg.profile, variant=model_cfg.variant,
                      class_count=model_cfg.class_count, seed=model_cfg.seed,
                      alpha=model_cfg.alpha, m=model_cfg.m,
                      overlap_ratio=model_cfg.overlap_ratio,
                      input_channels=model_cfg.input_channels,
                      loss_balance=model_cfg.loss_balance,
                      l2_lambda=model_cfg.l2_lambda)
        overlap_pixels = None
        try:
            if parameter == "alpha":
                kwargs["alpha"] = float(value)
            elif parameter == "m":
                kwargs["m"] = int(value)
            else:
                overlap_pixels = int(value)
            cfg = ModelConfig(**kwargs)
            if overlap_pixels is not None:
                layout = plan_patches(cfg.image_extent, cfg.m, overlap_pixels=overlap_pixels)
            else:
                layout = plan_patches(cfg.image_extent, cfg.m, overlap_ratio=cfg.overlap_ratio)
        except Exception as e:                     # infeasible configuration
            rows.append({"parameter": parameter, "value": value,
                         "status": "skipped", "reason": str(e), "accuracy": ""})
            if log:
                log(f"{parameter}={value}: skipped ({e})")
            continue
        train_ds = synth_dataset(cfg.class_count, samples_per_class,
                                 seed=cfg.seed, layout=layout,
                                 channels=cfg.input_channels)
        test_ds = synth_dataset(cfg.class_count, test_per_class,
                                seed=cfg.seed + 10_000, layout=layout,
                                channels=cfg.input_channels,
                                crucial_cells=train_ds.crucial_cells)
        model, _ = train(cfg, train_cfg, train_ds, dtype=dtype,
                         overlap_pixels=overlap_pixels)
        acc, _ = evaluate(model, test_ds)
        rows.append({"parameter": parameter, "value": value,
                     "status": "ok", "reason": "", "accuracy": acc})
        if log:
            log(f"{parameter}={value}: accuracy={acc:.4f}")
    return rows
