"""Memory-queue contrastive learning over current plus historical embeddings.

A FIFO queue keeps the embeddings of the last ``capacity`` batches as
detached copies, so they enlarge the pair set without receiving gradient.
The loss walks all ordered pairs of the concatenated set: same-label pairs
pull similarities toward 1, cross-label pairs are hinged above a margin.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import diagnostics
from . import tensor as T
from .rng import Rng
from .tensor import Tensor


@dataclass
class EmbeddingEntry:
    vector: Tensor
    label: int
    origin: str  # "raw" or "aug"


@dataclass
class EmbeddingBatch:
    entries: list[EmbeddingEntry]
    batch_index: int


class MemoryQueue:
    """FIFO store of the most recent embedding batches, gradient-free."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError(f"MemoryQueue: capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self.batches: deque[EmbeddingBatch] = deque()

    def push(self, batch: EmbeddingBatch) -> None:
        """Drop the earliest batch when full, then append a detached copy."""
        if self.capacity == 0:
            return
        if len(self.batches) == self.capacity:
            self.batches.popleft()
        detached = EmbeddingBatch(
            entries=[
                EmbeddingEntry(e.vector.detach(), e.label, e.origin) for e in batch.entries
            ],
            batch_index=batch.batch_index,
        )
        self.batches.append(detached)

    def __len__(self) -> int:
        return len(self.batches)

    def entries(self) -> list[EmbeddingEntry]:
        """All stored entries, oldest batch first."""
        return [e for batch in self.batches for e in batch.entries]


@dataclass
class PairSet:
    """Ordered concatenation of current + queued entries with pair relations.

    ``positive[u, v]`` / ``negative[u, v]`` hold for ordered index pairs with
    u != v: positive when labels match (raw/aug origin combinations alike),
    negative when they differ. The diagonal is excluded.
    """

    entries: list[EmbeddingEntry]
    positive: np.ndarray
    negative: np.ndarray


def build_pair_mask(current: EmbeddingBatch, queue: MemoryQueue) -> PairSet:
    entries = list(current.entries) + queue.entries()
    labels = np.array([e.label for e in entries])
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(entries), dtype=bool)
    return PairSet(entries=entries, positive=same & off_diag, negative=~same & off_diag)


def queue_contrastive_loss(
    pairs: PairSet,
    margin: float,
    mode: str = "full",
    rng: Rng | None = None,
) -> Tensor:
    """Mean over ordered pairs of (1 - sim) for positives plus the hinged
    max(sim - margin, 0) for negatives, normalized by Q^2.

    Vectors are L2-normalized here, at loss time; similarity is the dot
    product. Queue entries are detached, so gradient reaches current-batch
    embeddings only. ``mode="sampled"`` keeps one random negative per anchor
    instead of all of them (the normalization stays Q^2). Fewer than two
    embeddings make the loss 0 and bump a diagnostics flag.
    """
    q = len(pairs.entries)
    if q < 2:
        diagnostics.bump("queue_loss.degenerate")
        return Tensor(0.0)

    negative = pairs.negative
    if mode == "sampled":
        if rng is None:
            raise ValueError("queue_contrastive_loss: sampled mode needs an rng")
        picked = np.zeros_like(negative)
        for u in range(q):
            cands = np.flatnonzero(negative[u])
            if cands.size:
                picked[u, cands[rng.randint(cands.size)]] = True
        negative = picked
    elif mode != "full":
        raise ValueError(f"queue_contrastive_loss: unknown mode {mode!r}")

    normed = [T.l2_normalize(e.vector) for e in pairs.entries]
    sims = T.gram(T.stack_rows(normed))
    pos_term = T.sum_all(T.mul(1.0 - sims, Tensor(pairs.positive.astype(np.float64))))
    neg_term = T.sum_all(T.mul(T.relu(sims - float(margin)), Tensor(negative.astype(np.float64))))
    return T.mul_scalar(T.add(pos_term, neg_term), 1.0 / (q * q))
