"""Training losses and loops: Gaussian augmentation, adversarial smoothing, SmoothMix.

Three training methods over the same optimizer and schedule:

- gaussian: L = (1/m) sum_i CE(f(x + delta_i), y) per example.
- smoothadv: the clean point is replaced by a PGD point found inside an l2
  epsilon ball around x (attacking the soft-smoothed classifier with the same
  noise batch used in the loss); epsilon ramps linearly over the first
  `warmup_epochs` epochs, reaching its full value exactly at the boundary.
- smoothmix: per example, sample one noise batch and one lambda ~ U([0, 1/2]),
  run the T-step unrestricted ascent, optionally replace the anchor with the
  first iterate (one-step variant, optionally capped), form the mix pair

      x_mix = (1 - lambda) * anchor + lambda * x_adv
      y_mix = (1 - lambda) * Fhat(anchor) + lambda * uniform

  and minimize (1/m) sum_i [ CE(f(anchor + delta_i), y)
                             + eta * CE(f(x_mix + delta_i), y_mix) ].

y_mix is a constant target: no parameter gradient flows through Fhat(anchor).
Per Alg-1 structure the one-step replacement happens before the mix pair is
built, so the anchor feeds the natural loss, the mix point, and y_mix alike.

Every example owns a private RNG stream (master_seed, "train", epoch, index)
that yields its noise batch first and lambda second, so paired runs of
different methods under one seed see identical noise. Minibatch gradients are
computed by one stacked backward pass per minibatch; the reduction order is
fixed, making training bit-reproducible for a given (config, seed).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .adversary import AttackConfig, _ascend_batch, _smoothed_probs, smoothmix_attack
from .data import Dataset
from .nn import (ModelParams, OptimizerState, _ce_rows, _grad_params_weighted, forward,
                 init_mlp, one_hot, sgd_nesterov_step, validate_soft_label)
from .rng import StreamId
from .smoothing import NoiseBatch

__all__ = [
    "GaussianConfig",
    "SmoothAdvConfig",
    "SmoothMixConfig",
    "MixPair",
    "TrainRunConfig",
    "gaussian_loss",
    "make_mix_pair",
    "smoothmix_loss",
    "smoothmix_loss_and_grads",
    "smoothmix_batch_loss",
    "train",
    "TRAIN_LOG_COLUMNS",
    "write_training_log",
]

METHODS = ("gaussian", "smoothadv", "smoothmix")


@dataclass(frozen=True)
class GaussianConfig:
    sigma: float
    m: int = 1

    def __post_init__(self):
        if not self.sigma > 0 or self.m < 1:
            raise ValueError("need sigma > 0 and m >= 1")


@dataclass(frozen=True)
class SmoothAdvConfig:
    sigma: float
    m: int
    epsilon: float
    steps: int
    warmup_epochs: int = 10
    step_size: float = None  # None -> 2 * epsilon_effective / steps

    def __post_init__(self):
        if not self.sigma > 0 or self.m < 1:
            raise ValueError("need sigma > 0 and m >= 1")
        if not self.epsilon > 0 or self.steps < 1 or self.warmup_epochs < 1:
            raise ValueError("need epsilon > 0, steps >= 1, warmup_epochs >= 1")

    def epsilon_at(self, epoch: int) -> float:
        """Linear warm-up: epsilon * (epoch+1)/warmup_epochs, capped at epsilon."""
        return self.epsilon * min(1.0, (epoch + 1) / self.warmup_epochs)


@dataclass(frozen=True)
class SmoothMixConfig:
    sigma: float
    eta: float
    attack: AttackConfig
    m: int
    use_one_step: bool = False
    one_step_cap: float = None

    def __post_init__(self):
        if not self.sigma > 0 or not self.eta > 0 or self.m < 1:
            raise ValueError("need sigma > 0, eta > 0, m >= 1")
        if self.one_step_cap is not None and not self.one_step_cap > 0:
            raise ValueError("one_step_cap, when set, must be positive")


@dataclass(frozen=True)
class MixPair:
    """Convex interpolation of an anchor point toward its adversarial point."""

    x_mix: np.ndarray
    y_mix: np.ndarray
    lam: float

    def __post_init__(self):
        if not (0.0 <= self.lam <= 0.5):
            raise ValueError(f"lambda must lie in [0, 1/2], got {self.lam}")
        validate_soft_label(self.y_mix)


@dataclass(frozen=True)
class TrainRunConfig:
    method: str
    epochs: int
    batch_size: int
    lr: float
    lr_milestones: tuple = ()
    lr_gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    hidden: tuple = None  # None -> (256, 256) for 784-dim inputs, else (64, 64)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0 or not (0 <= self.momentum < 1) or self.weight_decay < 0:
            raise ValueError("invalid optimizer settings")
        ms = tuple(self.lr_milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("lr_milestones must be strictly increasing")
        object.__setattr__(self, "lr_milestones", ms)
        if self.hidden is not None:
            object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for ms in self.lr_milestones if epoch >= ms)
        return self.lr * (self.lr_gamma ** drops)

    def hidden_for(self, input_dim: int) -> tuple:
        if self.hidden is not None:
            return self.hidden
        return (256, 256) if input_dim >= 784 else (64, 64)


def gaussian_loss(params: ModelParams, x: np.ndarray, y: int,
                  noise: NoiseBatch) -> float:
    """(1/m) sum_i CE(f(x + delta_i), onehot(y))."""
    x = np.asarray(x, dtype=np.float64)
    logits = forward(params, x[None, :] + noise.deltas)
    targets = np.tile(one_hot(y, params.class_count), (noise.m, 1))
    return float(_ce_rows(logits, targets).mean())


def make_mix_pair(x_base: np.ndarray, fhat_base: np.ndarray, x_adv: np.ndarray,
                  lam: float, class_count: int) -> MixPair:
    """x_mix = (1-lam) x_base + lam x_adv; y_mix = (1-lam) fhat_base + lam/C."""
    if not (0.0 <= lam <= 0.5):
        raise ValueError(f"lambda must lie in [0, 1/2], got {lam}")
    fhat_base = validate_soft_label(fhat_base)
    x_base = np.asarray(x_base, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_mix = (1.0 - lam) * x_base + lam * x_adv
    y_mix = (1.0 - lam) * fhat_base + lam / class_count
    return MixPair(x_mix=x_mix, y_mix=y_mix, lam=float(lam))


def smoothmix_loss(params: ModelParams, pair: MixPair, noise: NoiseBatch) -> float:
    """(1/m) sum_i CE(f(x_mix + delta_i), y_mix); y_mix is a constant target."""
    logits = forward(params, pair.x_mix[None, :] + noise.deltas)
    targets = np.tile(pair.y_mix, (noise.m, 1))
    return float(_ce_rows(logits, targets).mean())


def _example_randomness(stream: StreamId, m: int, dim: int, sigma: float):
    """One example's private draws, in fixed order: noise batch, then lambda."""
    gen = stream.generator()
    deltas = gen.standard_normal((m, dim)) * sigma
    lam = gen.uniform(0.0, 0.5)
    return deltas, lam


def _select_anchor(params: ModelParams, X0: np.ndarray, points: np.ndarray,
                   cfg: SmoothMixConfig) -> np.ndarray:
    """Anchor for the losses: x, or the first ascent iterate (optionally capped)."""
    if not cfg.use_one_step or cfg.attack.steps < 1:
        return X0
    anchor = points[1].copy()
    if cfg.one_step_cap is not None:
        diff = anchor - X0
        dist = np.linalg.norm(diff, axis=1)
        over = dist > cfg.one_step_cap
        if np.any(over):
            scale = np.where(over, cfg.one_step_cap / np.maximum(dist, 1e-300), 1.0)
            anchor = X0 + diff * scale[:, None]
    return anchor


def _stacked_loss_grads(params: ModelParams, nat_X: np.ndarray, nat_T: np.ndarray,
                        mix_X: np.ndarray, mix_T: np.ndarray, eta: float,
                        B: int, m: int):
    """Gradient of (1/(B m)) sum [CE_nat + eta CE_mix] via one backward pass.

    Returns (grads, mean natural loss, mean mix loss), means taken per example
    then averaged over the minibatch.
    """
    X = np.concatenate([nat_X, mix_X])
    T = np.concatenate([nat_T, mix_T])
    w = np.concatenate([np.full(B * m, 1.0 / (B * m)),
                        np.full(B * m, eta / (B * m))])
    grads, ce = _grad_params_weighted(params, X, T, w)
    loss_nat = float(ce[:B * m].mean())
    loss_mix = float(ce[B * m:].mean())
    return grads, loss_nat, loss_mix


def smoothmix_loss_and_grads(params: ModelParams, anchor: np.ndarray, y: int,
                             pair: MixPair, noise: NoiseBatch, eta: float):
    """Loss and parameter gradient for one example with a frozen mix pair.

    anchor, pair.x_mix and pair.y_mix are treated as constants; the gradient
    is exactly that of gaussian_loss(anchor) + eta * smoothmix_loss(pair).
    Returns (total loss, loss_nat, loss_mix, grads).
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    m = noise.m
    nat_X = anchor[None, :] + noise.deltas
    mix_X = pair.x_mix[None, :] + noise.deltas
    nat_T = np.tile(one_hot(y, params.class_count), (m, 1))
    mix_T = np.tile(pair.y_mix, (m, 1))
    grads, loss_nat, loss_mix = _stacked_loss_grads(
        params, nat_X, nat_T, mix_X, mix_T, eta, B=1, m=m)
    return loss_nat + eta * loss_mix, loss_nat, loss_mix, grads


def smoothmix_batch_loss(params: ModelParams, x: np.ndarray, y: int,
                         cfg: SmoothMixConfig, stream: StreamId):
    """Full per-example SmoothMix pipeline; returns (loss, diagnostics).

    Draws the example's noise and lambda from its stream, runs the ascent,
    applies the one-step substitution before building the mix pair, and
    returns L_nat + eta * L_mix averaged over the noise draws. Diagnostics
    carry lambda, the J path, both loss terms, the trajectory, the anchor,
    and the constructed pair.
    """
    x = np.asarray(x, dtype=np.float64)
    deltas, lam = _example_randomness(stream, cfg.m, x.shape[0], cfg.sigma)
    noise = NoiseBatch(deltas=deltas, sigma=cfg.sigma, stream=stream)
    traj = smoothmix_attack(params, x, y, noise, cfg.attack)
    anchor = _select_anchor(params, x[None, :], traj.points[:, None, :], cfg)[0]
    fhat_anchor = _smoothed_probs(params, anchor[None, :], deltas[None, :, :])[0]
    pair = make_mix_pair(anchor, fhat_anchor, traj.points[-1], lam,
                         params.class_count)
    loss, loss_nat, loss_mix, _ = smoothmix_loss_and_grads(
        params, anchor, y, pair, noise, cfg.eta)
    diagnostics = {
        "lambda": lam,
        "j_path": traj.j_path,
        "loss_nat": loss_nat,
        "loss_mix": loss_mix,
        "trajectory": traj,
        "anchor": anchor,
        "pair": pair,
    }
    return loss, diagnostics


def _minibatch_randomness(streams, m: int, dim: int, sigma: float):
    noises = np.empty((len(streams), m, dim))
    lams = np.empty(len(streams))
    for i, s in enumerate(streams):
        noises[i], lams[i] = _example_randomness(s, m, dim, sigma)
    return noises, lams


def _smoothmix_minibatch(params, X, Y, cfg: SmoothMixConfig, streams):
    B, dim = X.shape
    noises, lams = _minibatch_randomness(streams, cfg.m, dim, cfg.sigma)
    points, _, _ = _ascend_batch(params, X, Y, noises, cfg.attack.alpha_step,
                                 cfg.attack.steps, epsilon_cap=cfg.attack.epsilon_cap)
    x_adv = points[-1]
    anchor = _select_anchor(params, X, points, cfg)
    fhat_anchor = _smoothed_probs(params, anchor, noises)
    C = params.class_count
    X_mix = (1.0 - lams)[:, None] * anchor + lams[:, None] * x_adv
    Y_mix = (1.0 - lams)[:, None] * fhat_anchor + (lams / C)[:, None]
    nat_X = (anchor[:, None, :] + noises).reshape(B * cfg.m, dim)
    mix_X = (X_mix[:, None, :] + noises).reshape(B * cfg.m, dim)
    eye = np.eye(C)
    nat_T = np.repeat(eye[Y], cfg.m, axis=0)
    mix_T = np.repeat(Y_mix, cfg.m, axis=0)
    return _stacked_loss_grads(params, nat_X, nat_T, mix_X, mix_T, cfg.eta,
                               B=B, m=cfg.m)


def _gaussian_minibatch(params, X, Y, cfg: GaussianConfig, streams):
    B, dim = X.shape
    noises, _ = _minibatch_randomness(streams, cfg.m, dim, cfg.sigma)
    nat_X = (X[:, None, :] + noises).reshape(B * cfg.m, dim)
    nat_T = np.repeat(np.eye(params.class_count)[Y], cfg.m, axis=0)
    w = np.full(B * cfg.m, 1.0 / (B * cfg.m))
    grads, ce = _grad_params_weighted(params, nat_X, nat_T, w)
    return grads, float(ce.mean()), 0.0


def _smoothadv_minibatch(params, X, Y, cfg: SmoothAdvConfig, streams, epoch: int):
    B, dim = X.shape
    noises, _ = _minibatch_randomness(streams, cfg.m, dim, cfg.sigma)
    eps = cfg.epsilon_at(epoch)
    step = cfg.step_size if cfg.step_size is not None else 2.0 * eps / cfg.steps
    points, _, _ = _ascend_batch(params, X, Y, noises, step, cfg.steps,
                                 epsilon_cap=eps, project_each_step=True)
    X_hat = points[-1]
    nat_X = (X_hat[:, None, :] + noises).reshape(B * cfg.m, dim)
    nat_T = np.repeat(np.eye(params.class_count)[Y], cfg.m, axis=0)
    w = np.full(B * cfg.m, 1.0 / (B * cfg.m))
    grads, ce = _grad_params_weighted(params, nat_X, nat_T, w)
    return grads, float(ce.mean()), 0.0


TRAIN_LOG_COLUMNS = ["epoch", "loss_nat", "loss_mix", "lr", "seconds"]


def write_training_log(path, rows) -> None:
    """Epoch log CSV; the seconds column is measured wall time."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_COLUMNS)
        for r in rows:
            writer.writerow([int(r["epoch"]), f"{r['loss_nat']:.12g}",
                             f"{r['loss_mix']:.12g}", f"{r['lr']:.12g}",
                             f"{r['seconds']:.4f}"])


def train(dataset: Dataset, run_cfg: TrainRunConfig, method_cfg):
    """Minibatch SGD over the selected loss; returns (params, log rows).

    Deterministic given (dataset, configs, seed): initialization, the
    per-epoch shuffle, and every example's noise derive from named substreams
    of the master seed.
    """
    n = len(dataset.labels)
    if n == 0:
        raise ValueError("dataset is empty")
    expected = {"gaussian": GaussianConfig, "smoothadv": SmoothAdvConfig,
                "smoothmix": SmoothMixConfig}[run_cfg.method]
    if not isinstance(method_cfg, expected):
        raise ValueError(f"method {run_cfg.method!r} needs a {expected.__name__}")
    X_all = np.asarray(dataset.inputs, dtype=np.float64)
    Y_all = np.asarray(dataset.labels, dtype=np.intp)
    root = StreamId(run_cfg.seed)
    sizes = [X_all.shape[1], *run_cfg.hidden_for(X_all.shape[1]), dataset.class_count]
    params = init_mlp(sizes, root.child("init"))
    state = OptimizerState(lr=run_cfg.lr, momentum=run_cfg.momentum,
                           weight_decay=run_cfg.weight_decay)
    log_rows = []
    for epoch in range(run_cfg.epochs):
        t0 = time.perf_counter()
        state.lr = run_cfg.lr_at(epoch)
        order = root.child("shuffle", epoch).generator().permutation(n)
        nat_sum = mix_sum = 0.0
        seen = 0
        for start in range(0, n, run_cfg.batch_size):
            idx = order[start:start + run_cfg.batch_size]
            X, Y = X_all[idx], Y_all[idx]
            streams = [root.child("train", epoch, int(i)) for i in idx]
            if run_cfg.method == "gaussian":
                grads, loss_nat, loss_mix = _gaussian_minibatch(
                    params, X, Y, method_cfg, streams)
            elif run_cfg.method == "smoothadv":
                grads, loss_nat, loss_mix = _smoothadv_minibatch(
                    params, X, Y, method_cfg, streams, epoch)
            else:
                grads, loss_nat, loss_mix = _smoothmix_minibatch(
                    params, X, Y, method_cfg, streams)
            sgd_nesterov_step(params, grads, state)
            nat_sum += loss_nat * len(idx)
            mix_sum += loss_mix * len(idx)
            seen += len(idx)
        log_rows.append({
            "epoch": epoch,
            "loss_nat": nat_sum / seen,
            "loss_mix": mix_sum / seen,
            "lr": state.lr,
            "seconds": time.perf_counter() - t0,
        })
    return params, log_rows
