"""Synthetic task generators.

A classification task is a pair of unit-variance Gaussians whose means sit
``separation`` apart along a random direction around a random centre, so the
Bayes boundary has a non-zero bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fl_core import Dataset, LossKind


@dataclass(frozen=True)
class TaskModel:
    direction: np.ndarray
    centre: np.ndarray
    separation: float
    loss: LossKind = LossKind.LOGISTIC_BINARY
    noise: float = 0.1

    @property
    def dim(self) -> int:
        return self.direction.shape[0]


def make_task_model(
    rng: np.random.Generator,
    dim: int,
    separation: float = 6.0,
    loss: LossKind = LossKind.LOGISTIC_BINARY,
) -> TaskModel:
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    centre = rng.uniform(-1.0, 1.0, size=dim)
    return TaskModel(direction=u, centre=centre, separation=float(separation), loss=loss)


def sample(task: TaskModel, rng: np.random.Generator, n: int, tag: str = "tabular") -> Dataset:
    if task.loss is LossKind.LOGISTIC_BINARY:
        y = (rng.random(n) < 0.5).astype(np.float64)
        sign = 2.0 * y - 1.0
        x = task.centre + np.outer(sign * task.separation / 2.0, task.direction)
        x = x + rng.standard_normal((n, task.dim))
        return Dataset(x, y, tag)
    # linear regression target along the same direction
    x = rng.standard_normal((n, task.dim)) + task.centre
    y = (x - task.centre) @ task.direction * task.separation + task.noise * rng.standard_normal(n)
    return Dataset(x, y, tag)


def two_gaussians(
    seed: int, n: int, dim: int = 2, separation: float = 6.0, tag: str = "tabular"
) -> Dataset:
    """Convenience wrapper for tests and scripts."""
    rng = np.random.default_rng(seed)
    return sample(make_task_model(rng, dim, separation), rng, n, tag)
