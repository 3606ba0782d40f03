"""Seeded train/validation/test partitioning."""

from dataclasses import dataclass

import numpy as np


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list

    def __iter__(self):
        return iter((self.train, self.validation, self.test))


def split_indices(n, ratios=(6, 3, 1), seed=0):
    """Shuffled index arrays sized by largest-remainder rounding.

    217 items at 6:3:1 give 130/65/22: quotas 130.2/65.1/21.7 floor to
    130/65/21 and the leftover goes to the largest remainder.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if n < 10:
        raise ValueError(f"need at least 10 items to split, got {n}")
    total = float(sum(ratios))
    quotas = [n * r / total for r in ratios]
    base = [int(q) for q in quotas]
    leftover = n - sum(base)
    order = sorted(range(3), key=lambda i: quotas[i] - base[i], reverse=True)
    for i in range(leftover):
        base[order[i]] += 1

    perm = np.random.default_rng(seed).permutation(n)
    a, b = base[0], base[0] + base[1]
    return perm[:a], perm[a:b], perm[b:]


def split_dataset(items, ratios=(6, 3, 1), seed=0):
    tr, va, te = split_indices(len(items), ratios, seed)
    return DatasetSplit([items[i] for i in tr],
                        [items[i] for i in va],
                        [items[i] for i in te])
