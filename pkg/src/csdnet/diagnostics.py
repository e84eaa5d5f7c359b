"""Process-wide counters for rare numeric events and branch accounting.

Counters currently in use:
  l2_normalize.clamped   near-zero norm hit the clamped denominator
  queue_loss.degenerate  contrastive loss asked for fewer than 2 embeddings
  ssdp.augment_calls     adaptive crop-augmentations performed
  trainer.aug_forwards   augmented-branch feature extractions performed
"""

from collections import Counter

COUNTERS: Counter = Counter()


def bump(name: str, n: int = 1) -> None:
    COUNTERS[name] += n


def get(name: str) -> int:
    return COUNTERS[name]


def reset(*names: str) -> None:
    """Zero the named counters, or all of them when called with no names."""
    if names:
        for name in names:
            COUNTERS[name] = 0
    else:
        COUNTERS.clear()
