"""Desk-scale optimization loop: finite-difference descent plus curvature-gated splitting.

Gradients come from a central-difference contract instead of autodiff: the
renderer stays gradient-free and every probe is an ordinary forward render.
Scales step in log-space and opacities in logit-space so the primitive
invariants survive unconstrained updates. All randomness derives from the
state seed and iteration counter, so fixed-seed runs are bit-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import diagnostics
from .cameras import CameraView, DepthMap
from .losses import ConfidenceMap, LossWeights, confidence_weights, depth_loss, l1_rgb, ssim, total_loss
from .render import render_frame
from .splats import (
    GaussianSet,
    SplitSchedule,
    normal_alignment_loss,
    online_curvature,
    select_split_candidates,
    split_gaussian,
    split_threshold,
)

logger = logging.getLogger(__name__)

FD_ATTRIBUTES = ("mean", "log_scale", "logit_opacity", "color")


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 200
    densify_interval: int = 100
    lr_mean: float = 0.01
    lr_scale: float = 0.0
    lr_opacity: float = 0.0
    lr_color: float = 0.0
    fd_epsilon: float = 1e-4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    curvature_gate_mode: str = "AND"  # AND | OR | OFF
    grad_flag_percentile: float = 90.0
    curvature_k: int = 64
    prune_opacity: float = 0.005
    max_gaussians: int = 200_000
    include_normal_loss: bool = False
    weight_mode: str = "transmittance"

    def __post_init__(self):
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.densify_interval < 1:
            raise ValueError("densify_interval must be positive")
        for name in ("lr_mean", "lr_scale", "lr_opacity", "lr_color"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.fd_epsilon <= 0.0:
            raise ValueError("fd_epsilon must be positive")
        if self.curvature_gate_mode not in ("AND", "OR", "OFF"):
            raise ValueError("curvature_gate_mode must be AND, OR, or OFF")
        if not 0.0 < self.grad_flag_percentile < 100.0:
            raise ValueError("grad_flag_percentile must lie in (0, 100)")


@dataclass
class TrainState:
    gset: GaussianSet
    t: int
    schedule: SplitSchedule
    seed: int
    grad_flags: np.ndarray
    split_events: list = field(default_factory=list)

    def __post_init__(self):
        self.grad_flags = np.asarray(self.grad_flags, dtype=bool).reshape(len(self.gset))


def init_train_state(gset: GaussianSet, schedule: SplitSchedule, seed: int) -> TrainState:
    return TrainState(
        gset=gset,
        t=0,
        schedule=schedule,
        seed=seed,
        grad_flags=np.zeros(len(gset), dtype=bool),
    )


# ---------------------------------------------------------------------------
# Finite-difference gradient contract
# ---------------------------------------------------------------------------


def _get_attr(gset: GaussianSet, attr: str) -> np.ndarray:
    if attr == "mean":
        return gset.means.copy()
    if attr == "log_scale":
        return np.log(gset.scales)
    if attr == "logit_opacity":
        return np.log(gset.opacities / (1.0 - gset.opacities))
    if attr == "color":
        return gset.colors.copy()
    raise ValueError(f"unknown attribute {attr!r}; expected one of {FD_ATTRIBUTES}")


def _with_attr(gset: GaussianSet, attr: str, values: np.ndarray) -> GaussianSet:
    out = gset.copy()
    if attr == "mean":
        out.means = values
    elif attr == "log_scale":
        out.scales = np.exp(values)
    elif attr == "logit_opacity":
        out.opacities = 1.0 / (1.0 + np.exp(-values))
    elif attr == "color":
        out.colors = np.clip(values, 0.0, 1.0)
    else:
        raise ValueError(f"unknown attribute {attr!r}")
    return out


def finite_diff_grad(
    loss_evaluator: Callable[[GaussianSet], float],
    gset: GaussianSet,
    attr: str,
    eps: float,
) -> np.ndarray:
    """Central-difference gradient of the loss wrt one attribute array.

    Probes that produce a non-finite loss are skipped: their gradient entry
    stays 0 and the event is counted.
    """
    base = _get_attr(gset, attr)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] = flat[i] + eps
        f_plus = loss_evaluator(_with_attr(gset, attr, probe.reshape(base.shape)))
        probe[i] = flat[i] - eps
        f_minus = loss_evaluator(_with_attr(gset, attr, probe.reshape(base.shape)))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            diagnostics.record("fd_nonfinite_probe")
            continue
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(base.shape)


# ---------------------------------------------------------------------------
# Training step
# ---------------------------------------------------------------------------


def _step_rng(seed: int, t: int, tag: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, t, tag)))


def make_view_loss(
    view: CameraView,
    image: Optional[np.ndarray],
    lidar: Optional[DepthMap],
    cfg: TrainConfig,
    conf: Optional[ConfidenceMap] = None,
) -> Callable[[GaussianSet], float]:
    """Build the per-view loss evaluator used for both descent and FD probes.

    Returns inf when the render has no valid pixel so probes can flag it.
    """
    w = cfg.loss_weights
    if conf is None and lidar is not None and image is not None and lidar.valid.any():
        conf = confidence_weights(image, lidar.valid)

    def evaluate(gs: GaussianSet) -> float:
        frame = render_frame(gs, view, weight_mode=cfg.weight_mode)
        if not frame.depth.valid.any():
            return float("inf")
        rgb = l1_rgb(frame.color, image) if (w.lambda_rgb > 0.0 and image is not None) else 0.0
        ssim_loss = (
            1.0 - ssim(frame.color, image)
            if (w.lambda_ssim > 0.0 and image is not None)
            else 0.0
        )
        dl = (
            depth_loss(lidar, frame.depth, conf)
            if (w.lambda_depth > 0.0 and lidar is not None and conf is not None)
            else 0.0
        )
        normal = None
        if cfg.include_normal_loss and gs.lidar_normals is not None:
            normal = normal_alignment_loss(gs)
        return total_loss(rgb, ssim_loss, dl, w, normal=normal)

    return evaluate


def train_step(
    state: TrainState,
    views: Sequence[tuple[CameraView, Optional[np.ndarray], Optional[DepthMap]]],
    cfg: TrainConfig,
) -> TrainState:
    """One descent step on a sampled view; accumulates gradient flags.

    With every learning rate at zero the step is a pure iteration-counter
    increment (no probes, no flag churn).
    """
    if not views:
        raise ValueError("train_step needs at least one view")
    lrs = {
        "mean": cfg.lr_mean,
        "log_scale": cfg.lr_scale,
        "logit_opacity": cfg.lr_opacity,
        "color": cfg.lr_color,
    }
    if all(v == 0.0 for v in lrs.values()):
        return replace(state, t=state.t + 1)

    rng = _step_rng(state.seed, state.t)
    start = int(rng.integers(len(views)))
    chosen = None
    for off in range(len(views)):
        view, image, lidar = views[(start + off) % len(views)]
        evaluator = make_view_loss(view, image, lidar, cfg)
        if np.isfinite(evaluator(state.gset)):
            chosen = evaluator
            break
    if chosen is None:
        diagnostics.record("train_step_aborted")
        logger.warning("train_step: no view produced valid pixels at t=%d; step aborted", state.t)
        return replace(state, t=state.t + 1)

    gset = state.gset
    mean_grad = finite_diff_grad(chosen, gset, "mean", cfg.fd_epsilon)
    grads = {"mean": mean_grad}
    for attr in ("log_scale", "logit_opacity", "color"):
        if lrs[attr] > 0.0:
            grads[attr] = finite_diff_grad(chosen, gset, attr, cfg.fd_epsilon)

    new_set = gset
    for attr, grad in grads.items():
        if lrs[attr] == 0.0:
            continue
        new_set = _with_attr(new_set, attr, _get_attr(new_set, attr) - lrs[attr] * grad)

    norms = np.linalg.norm(mean_grad, axis=1)
    flags = state.grad_flags.copy()
    if norms.size:
        threshold = np.percentile(norms, cfg.grad_flag_percentile)
        flags |= (norms >= threshold) & (norms > 0.0)

    return TrainState(
        gset=new_set,
        t=state.t + 1,
        schedule=state.schedule,
        seed=state.seed,
        grad_flags=flags,
        split_events=state.split_events,
    )


# ---------------------------------------------------------------------------
# Densification
# ---------------------------------------------------------------------------


def densify_candidates(
    state: TrainState, cfg: TrainConfig, mode: Optional[str] = None
) -> tuple[np.ndarray, np.ndarray]:
    """(candidate ids, per-Gaussian curvature) under the given gate mode."""
    mode = cfg.curvature_gate_mode if mode is None else mode
    g = len(state.gset)
    k_eff = min(cfg.curvature_k, g - 1)
    if g >= 3 and k_eff >= 2:
        curv = online_curvature(state.gset, k_eff)
    else:
        curv = np.zeros(g)
    if mode == "OFF":
        return np.flatnonzero(state.grad_flags), curv
    gated = select_split_candidates(curv, state.grad_flags, state.t, state.schedule)
    if mode == "AND":
        return gated, curv
    theta = split_threshold(state.t, state.schedule)
    return np.flatnonzero(state.grad_flags | (curv > theta)), curv


def densify(state: TrainState, cfg: TrainConfig) -> TrainState:
    """Split gated candidates, prune faint Gaussians, reset gradient flags."""
    if state.t % cfg.densify_interval != 0:
        raise ValueError(
            f"densify called at t={state.t}, not a multiple of {cfg.densify_interval}"
        )
    candidates, curv = densify_candidates(state, cfg)
    g = len(state.gset)
    if g + len(candidates) > cfg.max_gaussians:
        diagnostics.record("split_cap_suppressed")
        logger.warning(
            "densify: cap %d would be exceeded (%d + %d splits); splitting suppressed",
            cfg.max_gaussians,
            g,
            len(candidates),
        )
        candidates = np.array([], dtype=np.int64)

    keep_mask = np.ones(g, dtype=bool)
    keep_mask[candidates] = False
    children = []
    child_normals = []
    events = list(state.split_events)
    for idx in candidates:
        idx = int(idx)
        seed = int(np.random.SeedSequence((state.seed, state.t, idx)).generate_state(1)[0])
        pair = split_gaussian(state.gset.gaussian(idx), seed)
        children.extend(pair)
        if state.gset.lidar_normals is not None:
            child_normals.extend([state.gset.lidar_normals[idx]] * 2)
        events.append(
            {
                "t": state.t,
                "parent_mean": state.gset.means[idx].copy(),
                "parent_curvature": float(curv[idx]),
            }
        )

    new_set = state.gset.select(np.flatnonzero(keep_mask))
    if children:
        child_set = GaussianSet.from_gaussians(
            children,
            lidar_normals=np.stack(child_normals) if child_normals else None,
        )
        new_set = new_set.concat(child_set)

    bright = new_set.opacities >= cfg.prune_opacity
    if not bright.all():
        new_set = new_set.select(np.flatnonzero(bright))

    return TrainState(
        gset=new_set,
        t=state.t,
        schedule=state.schedule,
        seed=state.seed,
        grad_flags=np.zeros(len(new_set), dtype=bool),
        split_events=events,
    )


def train_loop(
    state: TrainState,
    views: Sequence[tuple[CameraView, Optional[np.ndarray], Optional[DepthMap]]],
    cfg: TrainConfig,
    on_iteration: Optional[Callable[[TrainState, float], None]] = None,
) -> TrainState:
    """Run cfg.total_iters steps with densification at the configured cadence."""
    while state.t < cfg.total_iters:
        state = train_step(state, views, cfg)
        if on_iteration is not None:
            view, image, lidar = views[0]
            loss = make_view_loss(view, image, lidar, cfg)(state.gset)
            on_iteration(state, loss)
        if state.t % cfg.densify_interval == 0 and state.t < cfg.total_iters:
            state = densify(state, cfg)
    return state
