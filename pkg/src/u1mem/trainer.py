"""Toy-scale training with a combined one-hot + unit-circle loss.

Every class gets a 2-d auxiliary label; the `unit_circle` kind draws one
angle per class and the network learns it through a small extra head with a
squared-L2 loss added to the usual cross-entropy.  The network is a dense
ReLU stack with manual forward/backward, Adam updates and a cosine-annealed
learning rate, kept deliberately small so gradients can be checked against
finite differences and runs stay reproducible.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError

LABEL_KINDS = ("centered", "discrete", "uniform", "unit_circle")
LOSS_MODES = ("combined", "onehot")
_CORNERS = ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0))


@dataclass(frozen=True)
class U1Label:
    class_id: int
    x: float
    y: float
    theta: float | None  # radians; None for the degenerate (0, 0) label


@dataclass(frozen=True)
class LabelConfig:
    kind: str = "unit_circle"
    seed: int = 0
    n_classes: int = 8

    def __post_init__(self):
        if self.kind not in LABEL_KINDS:
            raise ValueError(f"kind must be one of {LABEL_KINDS}")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")


def gen_labels(config: LabelConfig) -> list[U1Label]:
    """Deterministic per-class 2-d labels for the configured distribution."""
    rng = np.random.default_rng(config.seed)
    n = config.n_classes
    if config.kind == "unit_circle":
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        return [U1Label(i, math.cos(t), math.sin(t), float(t))
                for i, t in enumerate(theta)]
    if config.kind == "discrete":
        cycled = [_CORNERS[i % 4] for i in range(n)]
        order = rng.permutation(n)
        return [U1Label(i, *cycled[order[i]],
                        theta=math.atan2(cycled[order[i]][1], cycled[order[i]][0]))
                for i in range(n)]
    if config.kind == "uniform":
        xy = rng.uniform(-1.0, 1.0, (n, 2))
        return [U1Label(i, float(x), float(y),
                        theta=math.atan2(y, x) if (x, y) != (0.0, 0.0) else None)
                for i, (x, y) in enumerate(xy)]
    return [U1Label(i, 0.0, 0.0, theta=None) for i in range(n)]  # centered


def save_labels(path, labels: Sequence[U1Label], config: LabelConfig) -> None:
    payload = {
        "kind": config.kind,
        "seed": config.seed,
        "labels": [{"class_id": l.class_id, "theta": l.theta, "x": l.x, "y": l.y}
                   for l in labels],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_labels(path) -> tuple[list[U1Label], LabelConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    labels = [U1Label(int(l["class_id"]), float(l["x"]), float(l["y"]),
                      None if l["theta"] is None else float(l["theta"]))
              for l in payload["labels"]]
    config = LabelConfig(kind=payload["kind"], seed=int(payload["seed"]),
                         n_classes=len(labels))
    return labels, config


def label_matrix(labels: Sequence[U1Label]) -> np.ndarray:
    """(n_classes, 2) coordinates indexed by class id."""
    out = np.zeros((max(l.class_id for l in labels) + 1, 2))
    for l in labels:
        out[l.class_id] = (l.x, l.y)
    return out


# -- network ----------------------------------------------------------------


class ToyNet:
    """Dense ReLU trunk with a class head and a 2-output auxiliary head."""

    def __init__(self, in_dim: int, hidden: Sequence[int], n_classes: int,
                 u1_hidden: Sequence[int] = (), seed: int = 0):
        self.in_dim = in_dim
        self.hidden = tuple(hidden)
        self.n_classes = n_classes
        self.u1_hidden = tuple(u1_hidden)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        self.param_order: list[str] = []

        def add(name, fan_in, fan_out, gain):
            self.params["W" + name] = rng.standard_normal((fan_in, fan_out)) \
                * gain / math.sqrt(fan_in)
            self.params["b" + name] = np.zeros(fan_out)
            self.param_order += ["W" + name, "b" + name]

        prev = in_dim
        for i, width in enumerate(self.hidden):
            add(f"h{i}", prev, width, math.sqrt(2.0))
            prev = width
        add("c", prev, n_classes, 1.0)
        u_prev = prev
        for i, width in enumerate(self.u1_hidden):
            add(f"u{i}", u_prev, width, math.sqrt(2.0))
            u_prev = width
        add(f"u{len(self.u1_hidden)}", u_prev, 2, 1.0)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in self.param_order:
            digest.update(self.params[name].tobytes())
        return digest.hexdigest()


def forward(net: ToyNet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, dict]:
    """Logits, auxiliary 2-d prediction and the cache backward needs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != net.in_dim:
        raise ValueError(f"input dim {x.shape[1]} != network dim {net.in_dim}")
    h = x
    trunk_in, trunk_z = [], []
    for i in range(len(net.hidden)):
        z = h @ net.params[f"Wh{i}"] + net.params[f"bh{i}"]
        trunk_in.append(h)
        trunk_z.append(z)
        h = np.maximum(z, 0.0)
    logits = h @ net.params["Wc"] + net.params["bc"]
    t = h
    u1_in, u1_z = [], []
    for i in range(len(net.u1_hidden)):
        z = t @ net.params[f"Wu{i}"] + net.params[f"bu{i}"]
        u1_in.append(t)
        u1_z.append(z)
        t = np.maximum(z, 0.0)
    last = len(net.u1_hidden)
    u1_in.append(t)
    u1 = t @ net.params[f"Wu{last}"] + net.params[f"bu{last}"]
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(u1))):
        raise DivergenceError("non-finite activation in forward pass")
    cache = {"trunk_in": trunk_in, "trunk_z": trunk_z, "h": h,
             "u1_in": u1_in, "u1_z": u1_z}
    return logits, u1, cache


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def combined_loss(logits: np.ndarray, u1: np.ndarray, y: np.ndarray,
                  labels_xy: np.ndarray, lam: float) -> tuple[float, float, float]:
    """(total, cross-entropy term, auxiliary term), averaged over the batch."""
    y = np.asarray(y)
    if y.min() < 0 or y.max() >= labels_xy.shape[0]:
        raise ValueError("class id outside the label table")
    p = _softmax(logits)
    b = len(y)
    ce = float(-np.log(p[np.arange(b), y]).mean())
    target = labels_xy[y]
    u1_term = float(((u1 - target) ** 2).sum(axis=1).mean())
    return ce + lam * u1_term, ce, u1_term


def backward(net: ToyNet, cache: dict, dlogits: np.ndarray,
             du1: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients at the two heads."""
    grads: dict[str, np.ndarray] = {}
    h = cache["h"]
    grads["Wc"] = h.T @ dlogits
    grads["bc"] = dlogits.sum(axis=0)
    dh = dlogits @ net.params["Wc"].T

    last = len(net.u1_hidden)
    dt = du1
    grads[f"Wu{last}"] = cache["u1_in"][last].T @ dt
    grads[f"bu{last}"] = dt.sum(axis=0)
    dt = dt @ net.params[f"Wu{last}"].T
    for i in reversed(range(len(net.u1_hidden))):
        dz = dt * (cache["u1_z"][i] > 0.0)
        grads[f"Wu{i}"] = cache["u1_in"][i].T @ dz
        grads[f"bu{i}"] = dz.sum(axis=0)
        dt = dz @ net.params[f"Wu{i}"].T
    dh = dh + dt

    for i in reversed(range(len(net.hidden))):
        dz = dh * (cache["trunk_z"][i] > 0.0)
        grads[f"Wh{i}"] = cache["trunk_in"][i].T @ dz
        grads[f"bh{i}"] = dz.sum(axis=0)
        dh = dz @ net.params[f"Wh{i}"].T
    return grads


def loss_and_grads(net: ToyNet, x: np.ndarray, y: np.ndarray,
                   labels_xy: np.ndarray, lam: float,
                   loss_mode: str = "combined"):
    """One forward/backward pass; returns (total, ce, u1_term, grads)."""
    if loss_mode not in LOSS_MODES:
        raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
    logits, u1, cache = forward(net, x)
    y = np.asarray(y)
    b = len(y)
    if loss_mode == "onehot":
        _, ce, _ = combined_loss(logits, u1, y, labels_xy, 0.0)
        total, u1_term = ce, 0.0
        du1 = np.zeros_like(u1)
    else:
        total, ce, u1_term = combined_loss(logits, u1, y, labels_xy, lam)
        du1 = 2.0 * lam * (u1 - labels_xy[y]) / b
    p = _softmax(logits)
    p[np.arange(b), y] -= 1.0
    dlogits = p / b
    grads = backward(net, cache, dlogits, du1)
    return total, ce, u1_term, grads


# -- optimization -------------------------------------------------------------


def cosine_lr(epoch: int, total_epochs: int, lr0: float, lr_min: float = 0.0) -> float:
    """Annealed rate: lr_min + (lr0 - lr_min) * (1 + cos(pi * t / T)) / 2.

    Written as a convex combination so lr(0) == lr0 and lr(T) == lr_min hold
    exactly in floating point.
    """
    if total_epochs <= 0:
        return lr0
    w = 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))
    return lr0 * w + lr_min * (1.0 - w)


class Adam:
    def __init__(self, net: ToyNet, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in net.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in net.params.items()}

    def step(self, net: ToyNet, grads: dict[str, np.ndarray], lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name in net.param_order:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            net.params[name] -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    lr_min: float = 0.0
    batch_size: int = 32
    seed: int = 0
    lam: float = 1.0
    loss_mode: str = "combined"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")


@dataclass
class TrainResult:
    net: ToyNet
    metrics: list[dict] = field(repr=False, default_factory=list)


def mean_angular_error_deg(u1: np.ndarray, y: np.ndarray,
                           labels: Sequence[U1Label]) -> float:
    """Mean absolute wrapped angle between predictions and class labels.

    Classes whose label sits at the origin have no angle and are skipped;
    nan when nothing remains (the centered configuration).
    """
    theta_label = np.full(max(l.class_id for l in labels) + 1, np.nan)
    for l in labels:
        if l.theta is not None:
            theta_label[l.class_id] = math.atan2(l.y, l.x)
    target = theta_label[np.asarray(y)]
    ok = np.isfinite(target)
    if not ok.any():
        return float("nan")
    pred = np.arctan2(u1[ok, 1], u1[ok, 0])
    diff = np.angle(np.exp(1j * (pred - target[ok])))
    return float(np.degrees(np.abs(diff)).mean())


def train(net: ToyNet, x: np.ndarray, y: np.ndarray, labels: Sequence[U1Label],
          config: TrainConfig,
          augment_fn: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
          ) -> TrainResult:
    """Fixed-epoch minibatch training; single-threaded and seed-deterministic.

    Emits one metrics row per epoch (learning rate, loss terms, train
    accuracy, mean angular error of the auxiliary head) evaluated on the
    unaugmented training set after the epoch's updates.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    labels_xy = label_matrix(labels)
    if y.max() >= labels_xy.shape[0]:
        raise ValueError("dataset contains a class id with no label")
    rng = np.random.default_rng(config.seed)
    opt = Adam(net)
    n = len(x)
    metrics = []
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr, config.lr_min)
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sel = perm[start:start + config.batch_size]
            xb = x[sel]
            if augment_fn is not None:
                xb = augment_fn(xb, rng)
            total, _, _, grads = loss_and_grads(net, xb, y[sel], labels_xy,
                                                config.lam, config.loss_mode)
            if not math.isfinite(total):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            opt.step(net, grads, lr)
        logits, u1, _ = forward(net, x)
        total, ce, u1_term = combined_loss(
            logits, u1, y, labels_xy,
            config.lam if config.loss_mode == "combined" else 0.0)
        if not math.isfinite(total):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        acc = float((logits.argmax(axis=1) == y).mean())
        metrics.append({
            "epoch": epoch,
            "lr": lr,
            "loss": total,
            "ce": ce,
            "u1": u1_term,
            "accuracy": acc,
            "angular_error_deg": mean_angular_error_deg(u1, y, labels),
        })
    return TrainResult(net=net, metrics=metrics)


# -- toy datasets -------------------------------------------------------------


def make_blobs(n_classes: int = 8, dim: int = 16, n_per_class: int = 50,
               center_scale: float = 3.0, noise: float = 0.5,
               seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian class blobs with well-separated random centers."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, dim)) * center_scale
    x = np.concatenate([
        centers[c] + noise * rng.standard_normal((n_per_class, dim))
        for c in range(n_classes)
    ])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return x, y


def make_grid_dataset(n_classes: int = 4, size: int = 16, n_per_class: int = 32,
                      noise: float = 0.3, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic image-grid classes: one smooth random template per class.

    Returns images of shape (n, size, size); flatten for the dense network.
    Exists mainly to exercise the flip/crop augmentation path.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    templates = []
    for _ in range(n_classes):
        a, b, c, d = rng.uniform(-2.0, 2.0, 4)
        templates.append(np.sin(2 * np.pi * (a * xx + b * yy)) +
                         np.cos(2 * np.pi * (c * xx + d * yy)))
    images = np.concatenate([
        templates[c] + noise * rng.standard_normal((n_per_class, size, size))
        for c in range(n_classes)
    ])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return images, y


def augment_flip_crop(images: np.ndarray, rng: np.random.Generator,
                      pad: int = 2) -> np.ndarray:
    """Per-image random horizontal flip plus a random crop from edge padding."""
    out = np.empty_like(images)
    _, h, w = images.shape
    for i, img in enumerate(images):
        if rng.random() < 0.5:
            img = img[:, ::-1]
        padded = np.pad(img, pad, mode="edge")
        dr = rng.integers(0, 2 * pad + 1)
        dc = rng.integers(0, 2 * pad + 1)
        out[i] = padded[dr:dr + h, dc:dc + w]
    return out


def make_flip_crop_augmenter(height: int, width: int,
                             pad: int = 2) -> Callable[[np.ndarray, np.random.Generator], np.ndarray]:
    """Adapter applying flip/crop to rows that are flattened images."""

    def fn(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        images = batch.reshape(-1, height, width)
        return augment_flip_crop(images, rng, pad=pad).reshape(batch.shape)

    return fn


# -- ablation harness ----------------------------------------------------------


@dataclass
class AblationResult:
    table: list[dict]  # one row per kind: mean / std / n_seeds
    runs: list[dict]   # one row per (kind, seed)


def label_config_ablation(kinds: Sequence[str], seeds: Sequence[int],
                          n_classes: int = 8, dim: int = 16,
                          n_train_per_class: int = 50, n_test_per_class: int = 20,
                          blob_noise: float = 0.5,
                          hidden: Sequence[int] = (32,),
                          train_config: TrainConfig | None = None) -> AblationResult:
    """Test accuracy per label kind under identical budgets.

    For a given seed every kind sees the same train/test split and the same
    initial weights (verified via checksum); only the label set differs.
    """
    if len(seeds) < 2:
        raise ValueError("need at least 2 seeds per kind")
    base = train_config or TrainConfig()
    runs = []
    for seed in seeds:
        x_all, y_all = make_blobs(n_classes, dim,
                                  n_train_per_class + n_test_per_class,
                                  noise=blob_noise, seed=seed)
        per = n_train_per_class + n_test_per_class
        train_mask = np.zeros(len(x_all), dtype=bool)
        for c in range(n_classes):
            train_mask[c * per:c * per + n_train_per_class] = True
        xtr, ytr = x_all[train_mask], y_all[train_mask]
        xte, yte = x_all[~train_mask], y_all[~train_mask]
        for kind in kinds:
            net = ToyNet(dim, hidden, n_classes, seed=seed)
            checksum = net.checksum()
            labels = gen_labels(LabelConfig(kind=kind, seed=seed, n_classes=n_classes))
            mode = "onehot" if kind == "centered" else "combined"
            cfg = replace(base, seed=seed, loss_mode=mode)
            train(net, xtr, ytr, labels, cfg)
            logits, _, _ = forward(net, xte)
            runs.append({
                "kind": kind,
                "seed": seed,
                "test_accuracy": float((logits.argmax(axis=1) == yte).mean()),
                "init_checksum": checksum,
            })
    table = []
    for kind in kinds:
        accs = [r["test_accuracy"] for r in runs if r["kind"] == kind]
        table.append({
            "kind": kind,
            "mean": float(np.mean(accs)),
            "std": float(np.std(accs)),
            "n_seeds": len(accs),
        })
    return AblationResult(table=table, runs=runs)
