"""Attacks on the soft-smoothed classifier.

Both attacks ascend the objective J(x) = -log((1/m) sum_i F_y(x + delta_i)),
the negative log of the Monte Carlo soft-smoothed true-class probability over
one fixed noise batch (the same m draws are reused at every step):

- the unrestricted normalized-ascent attack takes T steps of exactly
  alpha_step in the direction grad J / ||grad J||, optionally projecting each
  iterate onto an l2 ball when a hard cap is configured;
- the constrained PGD variant takes normalized steps and projects onto the
  epsilon ball around the start point after every step.

Gradients flow through the Monte Carlo average exactly. When the gradient
norm falls below 1e-12 the step is skipped (the point repeats); this keeps
the procedure deterministic for degenerate classifiers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .nn import ModelParams, class_prob_grad_input, forward, softmax
from .smoothing import NoiseBatch

__all__ = [
    "AttackConfig",
    "AttackTrajectory",
    "attack_objective",
    "smoothmix_attack",
    "smoothadv_pgd",
    "l2_project",
]

GRAD_NORM_FLOOR = 1e-12
PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class AttackConfig:
    """Unrestricted-ascent parameters: step size, step count, optional l2 cap."""

    alpha_step: float
    steps: int
    epsilon_cap: float = None

    def __post_init__(self):
        if not self.alpha_step > 0:
            raise ValueError("alpha_step must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.epsilon_cap is not None and not self.epsilon_cap > 0:
            raise ValueError("epsilon_cap, when set, must be positive")


@dataclass(frozen=True)
class AttackTrajectory:
    """All iterates of one attack plus the smoothed soft predictions along them.

    points has shape (T+1, d) with points[0] == x; fhat_path has shape
    (T+1, C) holding the soft-smoothed prediction at every iterate under the
    shared noise batch; j_path holds J at every iterate.
    """

    points: np.ndarray
    fhat_path: np.ndarray
    j_path: np.ndarray
    noise: NoiseBatch

    @property
    def fhat_at_start(self) -> np.ndarray:
        return self.fhat_path[0]

    @property
    def steps(self) -> int:
        return self.points.shape[0] - 1


def l2_project(point: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Project point onto the closed l2 ball of given radius around center."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    point = np.asarray(point, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    diff = point - center
    dist = float(np.linalg.norm(diff))
    if dist <= radius:
        return point.copy()
    return center + diff * (radius / dist)


def _smoothed_probs(params: ModelParams, X: np.ndarray, noises: np.ndarray) -> np.ndarray:
    """Soft-smoothed predictions for B points under per-point noise (B, m, d)."""
    B, m, d = noises.shape
    noisy = (X[:, None, :] + noises).reshape(B * m, d)
    probs = softmax(forward(params, noisy))
    return probs.reshape(B, m, -1).mean(axis=1)


def _objective_and_grad(params: ModelParams, X: np.ndarray, y: np.ndarray,
                        noises: np.ndarray):
    """J and grad_x J for B points at once.

    grad J = -(sum_i grad F_y(x + delta_i)) / (m * Fhat_y), from the chain
    rule through the Monte Carlo mean. Returns (J (B,), grads (B, d),
    fhat (B, C)).
    """
    B, m, d = noises.shape
    noisy = (X[:, None, :] + noises).reshape(B * m, d)
    y_rows = np.repeat(np.asarray(y, dtype=np.intp), m)
    _, point_grads = class_prob_grad_input(params, noisy, y_rows)
    fhat = _smoothed_probs(params, X, noises)
    fy = np.maximum(fhat[np.arange(B), np.asarray(y, dtype=np.intp)], PROB_FLOOR)
    J = -np.log(fy)
    grads = -point_grads.reshape(B, m, d).sum(axis=1) / (m * fy)[:, None]
    return J, grads, fhat


def attack_objective(params: ModelParams, x: np.ndarray, y: int,
                     noise: NoiseBatch) -> float:
    """J(x) = -log of the mean true-class softmax probability over the batch.

    A mean probability below 1e-300 is clamped there (and reported via a
    RuntimeWarning) so the objective stays finite.
    """
    x = np.asarray(x, dtype=np.float64)
    fhat = _smoothed_probs(params, x[None, :], noise.deltas[None, :, :])[0]
    fy = float(fhat[int(y)])
    if fy < PROB_FLOOR:
        warnings.warn("mean true-class probability underflowed; clamped at 1e-300",
                      RuntimeWarning, stacklevel=2)
        fy = PROB_FLOOR
    return float(-np.log(fy))


def _ascend_batch(params: ModelParams, X: np.ndarray, y: np.ndarray,
                  noises: np.ndarray, alpha_step: float, steps: int,
                  epsilon_cap=None, project_each_step: bool = False):
    """Shared normalized-ascent loop over a batch of points.

    Returns (points (T+1, B, d), fhat_path (T+1, B, C), j_path (T+1, B)).
    With project_each_step the iterates stay in the epsilon_cap ball around
    the start (PGD); otherwise epsilon_cap, when set, caps each iterate the
    same way (hard-restriction ablation).
    """
    X0 = np.asarray(X, dtype=np.float64)
    cur = X0.copy()
    points = [cur.copy()]
    J, grads, fhat = _objective_and_grad(params, cur, y, noises)
    fhat_path, j_path = [fhat], [J]
    for _ in range(steps):
        norms = np.linalg.norm(grads, axis=1)
        move = norms > GRAD_NORM_FLOOR
        direction = np.where(move[:, None], grads / np.maximum(norms, GRAD_NORM_FLOOR)[:, None], 0.0)
        cur = cur + alpha_step * direction
        if epsilon_cap is not None or project_each_step:
            radius = epsilon_cap
            diff = cur - X0
            dist = np.linalg.norm(diff, axis=1)
            over = dist > radius
            if np.any(over):
                scale = np.where(over, radius / np.maximum(dist, GRAD_NORM_FLOOR), 1.0)
                cur = X0 + diff * scale[:, None]
        points.append(cur.copy())
        J, grads, fhat = _objective_and_grad(params, cur, y, noises)
        fhat_path.append(fhat)
        j_path.append(J)
    return np.stack(points), np.stack(fhat_path), np.stack(j_path)


def smoothmix_attack(params: ModelParams, x: np.ndarray, y: int,
                     noise: NoiseBatch, cfg: AttackConfig) -> AttackTrajectory:
    """T-step unrestricted normalized gradient ascent on J from x.

    Each step moves exactly alpha_step along grad J / ||grad J|| (skipped when
    the gradient vanishes); when cfg.epsilon_cap is set, every iterate is
    projected back onto that ball around x after the step. The given noise
    batch is reused for every step, and the soft-smoothed prediction is
    recorded at every iterate.
    """
    x = np.asarray(x, dtype=np.float64)
    points, fhat_path, j_path = _ascend_batch(
        params, x[None, :], np.array([int(y)]), noise.deltas[None, :, :],
        cfg.alpha_step, cfg.steps, epsilon_cap=cfg.epsilon_cap)
    return AttackTrajectory(points=points[:, 0, :], fhat_path=fhat_path[:, 0, :],
                            j_path=j_path[:, 0], noise=noise)


def smoothadv_pgd(params: ModelParams, x: np.ndarray, y: int, noise: NoiseBatch,
                  steps: int, step_size: float, epsilon: float) -> np.ndarray:
    """Projected normalized gradient ascent on J within the epsilon ball at x."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    points, _, _ = _ascend_batch(
        params, x[None, :], np.array([int(y)]), noise.deltas[None, :, :],
        step_size, steps, epsilon_cap=epsilon, project_each_step=True)
    return points[-1, 0, :]
