"""Gradient-descent drivers for raster-matching shape and pose fits.

The losses compare the rasterization of the current geometry with a fixed
target raster, so every gradient flows through the analytic backward pass.
Plain gradient descent with optional backtracking (halve the step while it
would increase the loss) keeps the recorded loss sequence non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .deform import ControlRig, PoseQuat, lbs_apply, lbs_pullback, quat_apply, quat_pullback
from .meshcore import SimplexMesh
from .pipeline import (
    RasterizeConfig,
    loss_mres,
    loss_smooth,
    rasterize,
    rasterize_backward,
)
from .spectral import Raster

VARIABLES = ("vertices", "rig", "pose")
LOSSES = ("l1", "l2", "mres_smooth")


class FitDivergedError(RuntimeError):
    """Optimization hit a non-finite loss."""


@dataclass
class Schedule:
    step: float
    max_iters: int = 500
    tol: float = 0.0
    backtrack: bool = True
    max_halvings: int = 20
    snapshot_every: int = 0

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step size must be positive")


@dataclass
class FitProblem:
    """One shape/pose fitting task.

    ``variable`` picks what moves: raw vertices, control-rig DOFs, or a
    quaternion pose.  ``loss`` is a raster L1/L2 against the target, or
    the multi-resolution + smoothness composite for polygon boundaries.
    ``target`` may be a raster or a mesh (rasterized once at ``config``).
    """

    mesh: SimplexMesh
    target: object
    config: RasterizeConfig
    schedule: Schedule
    variable: str = "vertices"
    loss: str = "l2"
    rig: ControlRig = None
    pose: PoseQuat = None
    smooth_weight: float = 0.0
    mres_resolutions: tuple = ()

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ValueError(f"variable must be one of {VARIABLES}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.variable == "rig" and self.rig is None:
            raise ValueError("rig variable needs a ControlRig")
        if self.variable == "pose" and self.pose is None:
            raise ValueError("pose variable needs a PoseQuat")
        if self.loss == "mres_smooth":
            if self.mesh.degree != 1 or self.mesh.dim != 2:
                raise ValueError("mres_smooth loss runs on a polygon boundary mesh")
            if not self.mres_resolutions:
                raise ValueError("mres_smooth loss needs resolutions")
        if self.smooth_weight < 0:
            raise ValueError("smoothness weight must be >= 0")

    def initial_state(self) -> np.ndarray:
        if self.variable == "vertices":
            return self.mesh.vertices.reshape(-1).copy()
        if self.variable == "rig":
            return self.rig.controls.reshape(-1).copy()
        return np.concatenate([self.pose.q, self.pose.t])

    def geometry(self, state: np.ndarray) -> SimplexMesh:
        """Mesh realized by a state vector."""
        if self.variable == "vertices":
            return self.mesh.with_vertices(state.reshape(self.mesh.vertices.shape))
        if self.variable == "rig":
            rig = replace(self.rig, controls=state.reshape(-1, 3))
            return self.mesh.with_vertices(lbs_apply(rig))
        pose = PoseQuat(state[:4], state[4:], self.pose.pivot)
        return self.mesh.with_vertices(quat_apply(pose, self.mesh.vertices))


@dataclass
class TrajectoryPoint:
    iteration: int
    loss: float
    grad_norm: float
    state: np.ndarray


@dataclass
class FitResult:
    trajectory: list = field(default_factory=list)
    state: np.ndarray = None
    converged: bool = False
    message: str = ""

    @property
    def losses(self) -> np.ndarray:
        return np.array([p.loss for p in self.trajectory])


def _target_raster(problem: FitProblem) -> Raster:
    if isinstance(problem.target, Raster):
        if problem.target.resolution != problem.config.resolution:
            raise ValueError("target raster resolution does not match config")
        return problem.target
    if isinstance(problem.target, SimplexMesh):
        return rasterize(problem.target, problem.config)
    raise TypeError("target must be a Raster or a SimplexMesh")


def _raster_objective(problem: FitProblem, target: Raster, state: np.ndarray,
                      need_grad: bool = True):
    mesh = problem.geometry(state)
    raster = rasterize(mesh, problem.config)
    diff = raster.values - target.values
    if problem.loss == "l1":
        value = float(np.abs(diff).sum())
        cot = np.sign(diff)
    else:
        value = float((diff ** 2).sum())
        cot = 2.0 * diff
    if not need_grad:
        return value, None
    grad = rasterize_backward(mesh, problem.config, cot)
    dv = grad.d_vertices
    if problem.variable == "vertices":
        return value, dv.reshape(-1)
    if problem.variable == "rig":
        rig = replace(problem.rig, controls=state.reshape(-1, 3))
        return value, lbs_pullback(rig, dv).reshape(-1)
    pose = PoseQuat(state[:4], state[4:], problem.pose.pivot)
    d_q, d_t = quat_pullback(pose, problem.mesh.vertices, dv)
    return value, np.concatenate([d_q, d_t])


def _mres_objective(problem: FitProblem, state: np.ndarray, need_grad: bool = True):
    polygon = state.reshape(-1, 2)
    target_poly = problem.target if not isinstance(problem.target, SimplexMesh) \
        else problem.target.vertices
    pairs = [(polygon, r) for r in problem.mres_resolutions]
    value, grads = loss_mres(pairs, target_poly, problem.config)
    grad = np.sum(grads, axis=0)
    if problem.smooth_weight > 0:
        s_val, s_grad = loss_smooth(polygon)
        value += problem.smooth_weight * s_val
        grad = grad + problem.smooth_weight * s_grad
    if not need_grad:
        return value, None
    return value, grad.reshape(-1)


def make_objective(problem: FitProblem):
    """Callable (state, need_grad=True) -> (loss, gradient-or-None)."""
    if problem.loss == "mres_smooth":
        if problem.variable != "vertices":
            raise ValueError("mres_smooth fits polygon vertices directly")
        return lambda state, need_grad=True: _mres_objective(problem, state, need_grad)
    target = _target_raster(problem)
    return lambda state, need_grad=True: _raster_objective(problem, target, state, need_grad)


def fit(problem: FitProblem) -> FitResult:
    """Minimize the problem's loss by gradient descent.

    Each iteration restarts from the scheduled step and halves it while
    the move would increase the loss (when backtracking is enabled), so
    recorded losses never increase.  Stops at the iteration cap, when no
    halving yields a decrease, when the loss hits zero, or when the loss
    improved by less than ``tol`` over the last 10 iterations.
    """
    objective = make_objective(problem)
    sched = problem.schedule
    state = problem.initial_state()
    loss, grad = objective(state)
    if not np.isfinite(loss):
        raise FitDivergedError("non-finite loss at the initial state")
    result = FitResult(trajectory=[
        TrajectoryPoint(0, loss, float(np.linalg.norm(grad)), state.copy())])
    for it in range(1, sched.max_iters + 1):
        if loss == 0.0:
            result.converged = True
            result.message = "loss reached zero"
            break
        step = sched.step
        accepted = False
        for _ in range(sched.max_halvings + 1):
            cand = state - step * grad
            cand_loss, _ = objective(cand, need_grad=False)
            if not np.isfinite(cand_loss):
                raise FitDivergedError(f"non-finite loss at iteration {it}")
            if cand_loss <= loss or not sched.backtrack:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            result.converged = True
            result.message = "no descent direction within the halving budget"
            break
        state, loss = cand, cand_loss
        _, grad = objective(state)
        result.trajectory.append(
            TrajectoryPoint(it, loss, float(np.linalg.norm(grad)), state.copy()))
        if len(result.trajectory) > 10:
            if result.trajectory[-11].loss - loss < sched.tol:
                result.converged = True
                result.message = "loss change below tolerance over 10 iterations"
                break
    else:
        result.message = "iteration cap reached"
    result.state = state
    return result


def iou(raster_a, raster_b, threshold: float = 0.5) -> float:
    """Intersection over union of the thresholded rasters; 1.0 if both empty."""
    a = raster_a.values if isinstance(raster_a, Raster) else np.asarray(raster_a)
    b = raster_b.values if isinstance(raster_b, Raster) else np.asarray(raster_b)
    if a.shape != b.shape:
        raise ValueError("rasters must have the same shape")
    sa = a > threshold
    sb = b > threshold
    union = np.logical_or(sa, sb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(sa, sb).sum() / union)
