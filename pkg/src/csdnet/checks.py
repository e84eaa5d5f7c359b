"""Release-gate gradient suite: every differentiable op against central
finite differences, plus one end-to-end check through the full batch loss.

Each op appears exactly once in the report, keyed by its public name, with
the worst relative error observed over the seeds. Ops are resolved through
their modules at call time so a deliberately broken backward (a test
fixture) is picked up and named in the failure list.
"""

from __future__ import annotations

import numpy as np

from . import ddl, ssdp, ssdt
from . import tensor as T
from . import trainer
from .backbone import CsdModel
from .ddl import EmbeddingBatch, EmbeddingEntry, MemoryQueue, build_pair_mask
from .rng import Rng
from .ssdt import LogitPair
from .tensor import Tensor, grad_check

TOLERANCE = 1e-4

EXPECTED_OPS = (
    "conv2d_1x1",
    "conv2d_3x3",
    "add_channel_bias",
    "relu",
    "sigmoid",
    "softmax",
    "log_softmax",
    "l2_normalize",
    "dot",
    "matvec",
    "global_avg_pool",
    "scale_channels",
    "bilinear_resize",
    "refine_pattern_map",
    "label_smoothing_ce",
    "queue_contrastive_loss",
    "ssdt_loss",
    "end_to_end_total",
)


def _weights(rng: Rng, shape) -> Tensor:
    """Fixed random weights turning vector/map outputs into scalars."""
    return Tensor(rng.uniform_array(shape, -1.0, 1.0))


def _away_from_zero(arr: np.ndarray, gap: float = 0.1) -> np.ndarray:
    """Push values out of the +-gap band around relu/hinge kinks."""
    return np.sign(arr) * (np.abs(arr) + gap)


def run_gradient_suite(primitive_seeds: int = 20, loss_seeds: int = 5, e2e_seeds: int = 2):
    """Return {op name: worst relative error}, in fixed report order."""
    results: dict[str, float] = {name: 0.0 for name in EXPECTED_OPS}

    def record(name: str, err: float) -> None:
        results[name] = max(results[name], err)

    for seed in range(primitive_seeds):
        rng = Rng.derive(seed, "gradcheck")
        x3 = Tensor(rng.uniform_array((3, 4, 4), -2.0, 2.0))
        k3 = Tensor(rng.uniform_array(3, -1.0, 1.0))
        w_map = _weights(rng, (4, 4))
        record("conv2d_1x1", grad_check(lambda t: T.sum_all(T.mul(T.conv2d_1x1(t, k3), w_map)), x3))
        record("conv2d_1x1", grad_check(lambda t: T.sum_all(T.mul(T.conv2d_1x1(x3, t), w_map)), k3))

        stride = 1 + seed % 2
        xc = Tensor(rng.uniform_array((2, 5, 5), -2.0, 2.0))
        wc = Tensor(rng.uniform_array((3, 2, 3, 3), -1.0, 1.0))
        oh = (5 - 1) // stride + 1
        w_out = _weights(rng, (3, oh, oh))
        record(
            "conv2d_3x3",
            grad_check(lambda t: T.sum_all(T.mul(T.conv2d_3x3(t, wc, stride), w_out)), xc),
        )
        record(
            "conv2d_3x3",
            grad_check(lambda t: T.sum_all(T.mul(T.conv2d_3x3(xc, t, stride), w_out)), wc),
        )

        bias = Tensor(rng.uniform_array(2, -1.0, 1.0))
        w_full = _weights(rng, (2, 5, 5))
        record(
            "add_channel_bias",
            grad_check(lambda t: T.sum_all(T.mul(T.add_channel_bias(xc, t), w_full)), bias),
        )

        v6 = Tensor(_away_from_zero(rng.uniform_array(6, -2.0, 2.0)))
        w6 = _weights(rng, 6)
        record("relu", grad_check(lambda t: T.sum_all(T.mul(T.relu(t), w6)), v6))
        record("sigmoid", grad_check(lambda t: T.sum_all(T.mul(T.sigmoid(t), w6)), v6))
        record("softmax", grad_check(lambda t: T.sum_all(T.mul(T.softmax(t), w6)), v6))
        record("log_softmax", grad_check(lambda t: T.sum_all(T.mul(T.log_softmax(t), w6)), v6))
        record("l2_normalize", grad_check(lambda t: T.sum_all(T.mul(T.l2_normalize(t), w6)), v6))

        v6b = Tensor(rng.uniform_array(6, -2.0, 2.0))
        record("dot", grad_check(lambda t: T.dot(t, v6b), v6))
        wm = Tensor(rng.uniform_array((4, 6), -1.0, 1.0))
        w4 = _weights(rng, 4)
        record("matvec", grad_check(lambda t: T.sum_all(T.mul(T.matvec(wm, t), w4)), v6))
        record("matvec", grad_check(lambda t: T.sum_all(T.mul(T.matvec(t, v6), w4)), wm))

        w2 = _weights(rng, 2)
        record("global_avg_pool", grad_check(lambda t: T.sum_all(T.mul(T.global_avg_pool(t), w2)), xc))

        gate = Tensor(rng.uniform_array((5, 5), -2.0, 2.0))
        record(
            "scale_channels",
            grad_check(lambda t: T.sum_all(T.mul(T.scale_channels(t, gate), w_full)), xc),
        )
        record(
            "scale_channels",
            grad_check(lambda t: T.sum_all(T.mul(T.scale_channels(xc, t), w_full)), gate),
        )

        w_res = _weights(rng, (2, 7, 3))
        record(
            "bilinear_resize",
            grad_check(lambda t: T.sum_all(T.mul(T.bilinear_resize(t, 7, 3), w_res)), xc),
        )

        # the sigmoid-gated refinement driven by the content-aware kernel
        record(
            "refine_pattern_map",
            grad_check(
                lambda t: T.sum_all(T.mul(ssdp.refine(x3, T.conv2d_1x1(x3, t)), _weights(Rng.derive(seed, "rw"), (3, 4, 4)))),
                k3,
            ),
        )

    for seed in range(loss_seeds):
        rng = Rng.derive(seed, "gradcheck-loss")
        logits = Tensor(rng.uniform_array(5, -2.0, 2.0))
        record(
            "label_smoothing_ce",
            grad_check(lambda t: trainer.label_smoothing_ce(t, seed % 5, 0.1), logits),
        )

        teacher_logits = Tensor(rng.uniform_array(5, -2.0, 2.0))
        record(
            "ssdt_loss",
            grad_check(lambda t: ssdt.ssdt_loss(LogitPair(t, teacher_logits, 2.0)), logits),
        )

        # current batch of 3 embeddings over 2 labels plus one queued batch
        cur = [rng.uniform_array(4, -1.0, 1.0) for _ in range(3)]
        queue = MemoryQueue(1)
        queue.push(
            EmbeddingBatch(
                entries=[
                    EmbeddingEntry(Tensor(rng.uniform_array(4, -1.0, 1.0)), lab, "raw")
                    for lab in (0, 1)
                ],
                batch_index=0,
            )
        )

        def qc_loss(t: Tensor, position: int) -> Tensor:
            vectors = [Tensor(c) for c in cur]
            vectors[position] = t
            batch = EmbeddingBatch(
                entries=[
                    EmbeddingEntry(v, lab, "raw") for v, lab in zip(vectors, (0, 0, 1))
                ],
                batch_index=1,
            )
            return ddl.queue_contrastive_loss(build_pair_mask(batch, queue), margin=0.2)

        for position in range(3):
            record(
                "queue_contrastive_loss",
                grad_check(lambda t, p=position: qc_loss(t, p), Tensor(cur[position])),
            )

    for seed in range(e2e_seeds):
        record("end_to_end_total", _end_to_end_error(seed))

    return results


def _end_to_end_error(seed: int) -> float:
    """Gradient of the full 4-sample batch loss w.r.t. every parameter."""
    rng = Rng.derive(seed, "gradcheck-e2e")
    model = CsdModel(classes=2, seed=seed)
    images = rng.uniform_array((4, 3, 8, 8), 0.0, 1.0)
    labels = np.array([0, 1, 0, 1])
    cfg = trainer.TrainConfig(
        alpha=1.0, beta=0.4, margin=0.2, queue_len=1, classes=2, image_size=8, batch_size=4
    )

    queue = MemoryQueue(1)
    queue.push(
        EmbeddingBatch(
            entries=[
                EmbeddingEntry(Tensor(rng.uniform_array(32, -0.5, 0.5)), lab, "raw")
                for lab in (0, 1)
            ],
            batch_index=0,
        )
    )

    worst = 0.0
    for name, param in model.named_params().items():
        def f(t: Tensor, pname=name) -> Tensor:
            model.replace_param(pname, t)
            try:
                total, *_ = trainer.compute_batch_loss(images, labels, model, queue, cfg, step=1)
            finally:
                model.replace_param(pname, param)
            return total

        worst = max(worst, grad_check(f, param, max_coords=8))
    return worst


def failing_ops(results: dict[str, float]) -> list[str]:
    return [name for name, err in results.items() if err > TOLERANCE]
