"""Training loop: composes the classification, queue-contrastive and
self-distillation losses, applies AdamW, and evaluates raw-only top-1.

Per sample and step the flow is: extract features, build the pattern map,
refine and pool the raw embedding, crop-augment the image from the mask,
re-extract/refine/pool the augmented embedding through the same extractor
and head, then combine

    total = l_cls + alpha * l_qc + beta * l_ssdt

The queue is read for the loss first and updated afterwards, so a batch is
never its own history. Evaluation runs the raw branch only; the augmented
branch counters are asserted to stay untouched.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from . import tensor as T
from .backbone import CsdModel
from .data import Dataset
from .ddl import EmbeddingBatch, EmbeddingEntry, MemoryQueue, build_pair_mask, queue_contrastive_loss
from .rng import Rng
from .ssdp import augment, binarize, largest_component_mask, pattern_map, refine
from .ssdt import LogitPair, predict, ssdt_loss
from .tensor import Tensor, no_grad


class TrainingDiverged(RuntimeError):
    """Raised when a step produces a non-finite loss; carries a dump."""

    def __init__(self, step: int, components: dict[str, float]):
        self.step = step
        self.components = components
        super().__init__(f"non-finite loss at step {step}: {components}")


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.4
    margin: float = 1.0
    queue_len: int = 2
    temperature: float = 1.0
    teacher: str = "aug"
    label_smoothing: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 12
    epochs: int = 30
    eval_every: int = 10
    seed: int = 0
    image_size: int = 64
    classes: int = 20
    cls_branches: str = "both"  # supervise raw+aug logits, or "raw" only
    square_mask: bool = False
    negative_sampling: str = "full"
    model_seed: int | None = None  # defaults to seed

    def validate(self) -> None:
        checks = [
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.beta >= 0, "beta must be >= 0"),
            (self.queue_len >= 0, "queue_len must be >= 0"),
            (self.temperature > 0, "temperature must be > 0"),
            (0 <= self.label_smoothing < 1, "label_smoothing must be in [0, 1)"),
            (self.lr >= 0, "lr must be >= 0"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.eval_every >= 1, "eval_every must be >= 1"),
            (self.image_size >= 8 and self.image_size % 8 == 0, "image_size must be a multiple of 8"),
            (self.classes >= 2, "classes must be >= 2"),
            (self.teacher in ("aug", "raw"), "teacher must be 'aug' or 'raw'"),
            (self.cls_branches in ("both", "raw"), "cls_branches must be 'both' or 'raw'"),
            (self.negative_sampling in ("full", "sampled"), "negative_sampling must be 'full' or 'sampled'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


@dataclass
class LossReport:
    step: int
    l_cls: float
    l_qc: float
    l_ssdt: float
    total: float
    acc: float | None = None

    def to_json(self) -> str:
        record: dict = {
            "step": self.step,
            "l_cls": self.l_cls,
            "l_qc": self.l_qc,
            "l_ssdt": self.l_ssdt,
            "total": self.total,
        }
        if self.acc is not None:
            record["acc"] = self.acc
        return json.dumps(record)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def label_smoothing_ce(logits: Tensor, label: int, smoothing: float) -> Tensor:
    """Cross entropy against (1 - eps) * onehot + eps / K targets.

    eps = 1 degenerates to the uniform-target cross entropy; training
    configs cap eps below 1 but the function accepts the boundary.
    """
    if not 0 <= smoothing <= 1:
        raise ValueError(f"label_smoothing_ce: smoothing must be in [0, 1], got {smoothing}")
    k = logits.shape[0]
    if not 0 <= label < k:
        raise ValueError(f"label_smoothing_ce: label {label} out of range for {k} classes")
    targets = np.full(k, smoothing / k)
    targets[label] += 1.0 - smoothing
    return T.neg(T.sum_all(T.mul(T.log_softmax(logits), Tensor(targets))))


def total_loss(l_cls, l_qc, l_ssdt, alpha: float, beta: float):
    """Weighted sum of the three components; works on floats and tensors."""
    return l_cls + alpha * l_qc + beta * l_ssdt


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

def adamw_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One decoupled-weight-decay Adam update with bias correction."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param = param - lr * weight_decay * param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, m, v


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adamw_step(
                p.data, grad, self.m[name], self.v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps, self.weight_decay,
            )


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def raw_forward(model: CsdModel, image: np.ndarray):
    """Raw branch: features, pattern map, refined embedding."""
    x = model.backbone.extract_features(Tensor(image))
    pm = pattern_map(x, model.kernel, image.shape[1], image.shape[2])
    e = T.global_avg_pool(refine(x, pm.p))
    return e, pm, x


def aug_forward(model: CsdModel, image: np.ndarray, pm, square_mask: bool = False):
    """Augmented branch: crop by the discrepancy mask, re-extract, refine."""
    mask = largest_component_mask(binarize(pm.p_img), square=square_mask)
    aug_img = augment(image, mask)
    diagnostics.bump("trainer.aug_forwards")
    x = model.backbone.extract_features(Tensor(aug_img))
    pm_aug = pattern_map(x, model.kernel, image.shape[1], image.shape[2])
    e = T.global_avg_pool(refine(x, pm_aug.p))
    return e, aug_img


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    model: CsdModel
    opt: AdamW
    queue: MemoryQueue
    step: int = 0


def init_state(cfg: TrainConfig) -> TrainState:
    cfg.validate()
    model_seed = cfg.seed if cfg.model_seed is None else cfg.model_seed
    model = CsdModel(cfg.classes, seed=model_seed)
    opt = AdamW(model.named_params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    return TrainState(model=model, opt=opt, queue=MemoryQueue(cfg.queue_len))


def compute_batch_loss(
    images: np.ndarray,
    labels: np.ndarray,
    model: CsdModel,
    queue: MemoryQueue,
    cfg: TrainConfig,
    step: int = 0,
):
    """Forward both branches for every sample and assemble the three losses.

    Returns (total, l_cls, l_qc, l_ssdt, batch) with the embedding batch
    ready for the post-update queue push.
    """
    ce_terms, kl_terms, entries = [], [], []
    for image, label in zip(images, labels):
        label = int(label)
        e_raw, pm, _ = raw_forward(model, image)
        y_raw = model.head.forward(e_raw)
        e_aug, _ = aug_forward(model, image, pm, square_mask=cfg.square_mask)
        y_aug = model.head.forward(e_aug)

        if cfg.cls_branches == "both":
            ce = T.mul_scalar(
                T.add(
                    label_smoothing_ce(y_raw, label, cfg.label_smoothing),
                    label_smoothing_ce(y_aug, label, cfg.label_smoothing),
                ),
                0.5,
            )
        else:
            ce = label_smoothing_ce(y_raw, label, cfg.label_smoothing)
        ce_terms.append(ce)
        kl_terms.append(ssdt_loss(LogitPair(y_raw, y_aug, cfg.temperature), teacher=cfg.teacher))
        # batch embedding order: augmented then raw, per sample
        entries.append(EmbeddingEntry(e_aug, label, "aug"))
        entries.append(EmbeddingEntry(e_raw, label, "raw"))

    l_cls = T.mul_scalar(T.sum_tensors(ce_terms), 1.0 / len(ce_terms))
    l_ssdt = T.mul_scalar(T.sum_tensors(kl_terms), 1.0 / len(kl_terms))

    batch = EmbeddingBatch(entries=entries, batch_index=step)
    pairs = build_pair_mask(batch, queue)
    neg_rng = (
        Rng.derive(cfg.seed, "neg-sample", step) if cfg.negative_sampling == "sampled" else None
    )
    l_qc = queue_contrastive_loss(pairs, cfg.margin, mode=cfg.negative_sampling, rng=neg_rng)
    total = total_loss(l_cls, l_qc, l_ssdt, cfg.alpha, cfg.beta)
    return total, l_cls, l_qc, l_ssdt, batch


def train_step(
    images: np.ndarray, labels: np.ndarray, state: TrainState, cfg: TrainConfig
) -> LossReport:
    if len(images) < 2:
        raise ValueError(f"train_step: batch size must be >= 2, got {len(images)}")
    total, l_cls, l_qc, l_ssdt, batch = compute_batch_loss(
        images, labels, state.model, state.queue, cfg, step=state.step
    )
    report = LossReport(
        step=state.step,
        l_cls=l_cls.item(),
        l_qc=l_qc.item(),
        l_ssdt=l_ssdt.item(),
        total=total.item(),
    )
    if not np.isfinite(report.total):
        raise TrainingDiverged(
            state.step,
            {"l_cls": report.l_cls, "l_qc": report.l_qc, "l_ssdt": report.l_ssdt},
        )

    state.opt.zero_grad()
    total.backward()
    state.opt.step()
    state.queue.push(batch)  # after the loss: a sample is never its own history
    state.step += 1
    return report


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(
    model: CsdModel,
    images: np.ndarray,
    labels: np.ndarray,
    dual_branch: bool = False,
    square_mask: bool = False,
) -> float:
    """Top-1 accuracy. The default raw-only path must leave the augmented
    branch counters untouched; the forced dual-branch path exists to measure
    what inference would cost if predictions still needed augmented views."""
    if len(images) == 0:
        raise ValueError("evaluate: empty split")
    before = (diagnostics.get("ssdp.augment_calls"), diagnostics.get("trainer.aug_forwards"))
    correct = 0
    with no_grad():
        for image, label in zip(images, labels):
            e_raw, pm, _ = raw_forward(model, image)
            if dual_branch:
                e_aug, _ = aug_forward(model, image, pm, square_mask=square_mask)
                logits = 0.5 * (model.head.forward(e_raw).data + model.head.forward(e_aug).data)
                pred = int(np.argmax(logits))
            else:
                pred = predict(e_raw, model.head)
            correct += pred == int(label)
    if not dual_branch:
        after = (diagnostics.get("ssdp.augment_calls"), diagnostics.get("trainer.aug_forwards"))
        assert after == before, "raw-only evaluation touched the augmented branch"
    return correct / len(images)


def timed_accuracy(
    model: CsdModel,
    images: np.ndarray,
    labels: np.ndarray,
    dual_branch: bool = False,
) -> tuple[float, float]:
    """(top-1 accuracy, images per second)."""
    start = time.perf_counter()
    acc = evaluate(model, images, labels, dual_branch=dual_branch)
    elapsed = time.perf_counter() - start
    return acc, len(images) / max(elapsed, 1e-9)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    state: TrainState
    reports: list[LossReport] = field(default_factory=list)

    def metrics_bytes(self) -> bytes:
        return ("\n".join(r.to_json() for r in self.reports) + "\n").encode("ascii")


def train(cfg: TrainConfig, dataset: Dataset) -> TrainResult:
    """Run the configured number of epochs over the dataset's train split."""
    cfg.validate()
    if dataset.classes != cfg.classes:
        raise ValueError(
            f"train: config expects {cfg.classes} classes, dataset has {dataset.classes}"
        )
    state = init_state(cfg)
    order_rng = Rng.derive(cfg.seed, "batch-order")
    reports: list[LossReport] = []
    train_idx = list(dataset.train_indices)
    test_idx = dataset.test_indices

    for epoch in range(1, cfg.epochs + 1):
        order = list(train_idx)
        order_rng.shuffle(order)
        for lo in range(0, len(order), cfg.batch_size):
            chunk = order[lo : lo + cfg.batch_size]
            if len(chunk) < 2:
                continue  # a 1-sample remainder has no in-batch pairs
            reports.append(
                train_step(dataset.images[chunk], dataset.labels[chunk], state, cfg)
            )
        if reports and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            reports[-1].acc = evaluate(
                state.model, dataset.images[test_idx], dataset.labels[test_idx]
            )
    return TrainResult(state=state, reports=reports)
