"""Closed-loop pose-based visual servo executor.

Per step: render the current view, estimate the relative pose between goal
and current camera (through a pluggable estimator/switch policy), turn the
estimate into a camera twist with the proportional control law

    v = -lambda * R^T t        (linear, current-camera frame)
    w = -lambda * theta_u(R)   (angular)

and advance the camera by integrating the twist.  The loop stops at the step
budget or when the commanded twist norm falls below the stop threshold.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace

import numpy as np

from vservo.errors import DegenerateView, IncompatibleBundle, ShapeMismatch
from vservo.geometry import (
    Pose,
    Twist,
    axis_angle_from_rotation,
    integrate_twist,
    relative_pose,
    rotation_from_axis_angle,
    wrap_axis_angle,
)
from vservo.network import HeadId, ModelParams, forward
from vservo.scene import CameraIntrinsics, Scene, render
from vservo.train import Regime, TrainedBundle

__all__ = [
    "ServoConfig",
    "PolicyKind",
    "SwitchPolicy",
    "PolicyState",
    "StepRecord",
    "ServoTrace",
    "control_law",
    "photometric_mse",
    "estimate_step",
    "run_servo",
    "default_policy",
    "trace_to_csv",
]


@dataclass(frozen=True)
class ServoConfig:
    lambda_gain: float = 0.15
    dt: float = 1.0
    max_steps: int = 200
    stop_velocity_norm: float = 1e-5

    def __post_init__(self):
        if self.lambda_gain <= 0:
            raise ValueError("lambda_gain must be positive")
        if not self.lambda_gain * self.dt < 1.0:
            raise ValueError("lambda_gain * dt must be below 1 for a stable loop")


class PolicyKind(enum.Enum):
    ORACLE = "oracle"
    SINGLE_MODEL = "single"
    MSE_THRESHOLD = "mse"
    CLASSIFIER = "cls"


@dataclass(frozen=True)
class SwitchPolicy:
    """Estimator-selection rule used at every servo step.

    * oracle: exact relative pose from geometry (control-law testing);
    * single: one fixed regression head;
    * mse: photometric-error threshold with hysteresis — switch to the
      small-scale head below the threshold, back above threshold*hysteresis;
    * cls: classifier votes each step, majority over a sliding window.
    """

    kind: PolicyKind
    head: HeadId = HeadId.REG_LSD
    threshold: float = 0.01
    hysteresis: float = 2.0
    window: int = 3

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window length must be >= 1")
        if self.hysteresis < 1.0:
            raise ValueError("hysteresis factor must be >= 1")


@dataclass(frozen=True)
class PolicyState:
    active_head: HeadId = HeadId.REG_LSD
    votes: tuple[HeadId, ...] = ()


@dataclass(frozen=True)
class StepRecord:
    step: int
    pos_err_m: float
    rot_err_rad: float
    photometric_mse: float
    twist_norm: float
    active_head: str


@dataclass
class ServoTrace:
    records: list[StepRecord] = field(default_factory=list)
    final_pos_err_m: float = np.nan
    final_rot_err_rad: float = np.nan
    steps_used: int = 0
    failed: bool = False


def control_law(rel: Pose, lambda_gain: float) -> Twist:
    """Proportional twist driving the relative pose to identity."""
    v = -lambda_gain * (rel.rotation.T @ rel.translation)
    w = -lambda_gain * axis_angle_from_rotation(rel.rotation)
    return Twist(v, w)


def photometric_mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def _bundle_regressor(bundle: TrainedBundle, head: HeadId) -> ModelParams:
    if bundle.regime in (Regime.VANILLA_SWITCH, Regime.CNN_SWITCH):
        return bundle.models[0] if head == HeadId.REG_LSD else bundle.models[1]
    return bundle.models[0]


def _bundle_classifier(bundle: TrainedBundle) -> ModelParams:
    if bundle.regime == Regime.CNN_SWITCH:
        return bundle.models[2]
    return bundle.models[0]


def _prediction_to_pose(output: np.ndarray) -> Pose:
    t = output[:3]
    aa = wrap_axis_angle(output[3:])
    return Pose(rotation_from_axis_angle(aa), t)


def estimate_step(
    bundle: TrainedBundle | None,
    policy: SwitchPolicy,
    state: PolicyState,
    ref: np.ndarray,
    cur: np.ndarray,
    true_relative: Pose | None = None,
) -> tuple[Pose, HeadId, PolicyState]:
    """One estimation step; returns (pose estimate, active head, new state)."""
    if policy.kind == PolicyKind.ORACLE:
        if true_relative is None:
            raise IncompatibleBundle("oracle policy needs the true relative pose")
        return true_relative, state.active_head, state

    if bundle is None:
        raise IncompatibleBundle("learned policies need a bundle")

    if policy.kind == PolicyKind.SINGLE_MODEL:
        head, new_state = policy.head, replace(state, active_head=policy.head)
    elif policy.kind == PolicyKind.MSE_THRESHOLD:
        mse = photometric_mse(ref, cur)
        head = state.active_head
        if head != HeadId.REG_SSD and mse < policy.threshold:
            head = HeadId.REG_SSD
        elif head == HeadId.REG_SSD and mse > policy.threshold * policy.hysteresis:
            head = HeadId.REG_LSD
        new_state = replace(state, active_head=head)
    elif policy.kind == PolicyKind.CLASSIFIER:
        cls_model = _bundle_classifier(bundle)
        logits = forward(cls_model, (ref, cur), HeadId.CLS)
        vote = HeadId.REG_SSD if logits[1] > logits[0] else HeadId.REG_LSD
        votes = (state.votes + (vote,))[-policy.window :]
        ssd_votes = sum(1 for v in votes if v == HeadId.REG_SSD)
        lsd_votes = len(votes) - ssd_votes
        if ssd_votes > lsd_votes:
            head = HeadId.REG_SSD
        elif lsd_votes > ssd_votes:
            head = HeadId.REG_LSD
        else:
            head = state.active_head
        new_state = PolicyState(active_head=head, votes=votes)
    else:  # pragma: no cover
        raise IncompatibleBundle(f"unknown policy kind {policy.kind!r}")

    model = _bundle_regressor(bundle, head)
    output = forward(model, (ref, cur), head)
    return _prediction_to_pose(output), head, new_state


def default_policy(regime: Regime, threshold: float | None = None) -> SwitchPolicy:
    """Runtime policy each regime uses in the comparison harness."""
    if regime in (Regime.LSD_ONLY, Regime.COMB, Regime.IMPLICIT_SWITCH):
        return SwitchPolicy(PolicyKind.SINGLE_MODEL, head=HeadId.REG_LSD)
    if regime == Regime.VANILLA_SWITCH:
        if threshold is None:
            raise IncompatibleBundle("vanilla switching needs a calibrated threshold")
        return SwitchPolicy(PolicyKind.MSE_THRESHOLD, threshold=threshold)
    return SwitchPolicy(PolicyKind.CLASSIFIER)


def run_servo(
    scene: Scene,
    goal_pose: Pose,
    start_pose: Pose,
    bundle: TrainedBundle | None,
    policy: SwitchPolicy,
    intr: CameraIntrinsics,
    cfg: ServoConfig = ServoConfig(),
) -> ServoTrace:
    """Run one closed-loop servo episode and return its trace.

    A DegenerateView mid-run marks the trace as failed and keeps the last
    valid errors as the final ones.
    """
    goal_img = render(scene, goal_pose, intr)
    pose = start_pose
    state = PolicyState()
    trace = ServoTrace()

    for step in range(cfg.max_steps):
        try:
            cur_img = render(scene, pose, intr)
        except DegenerateView:
            trace.failed = True
            break
        true_rel = relative_pose(goal_pose, pose)
        pos_err = float(np.linalg.norm(true_rel.translation))
        rot_err = float(np.linalg.norm(axis_angle_from_rotation(true_rel.rotation)))
        mse = photometric_mse(goal_img, cur_img)

        est, head, state = estimate_step(bundle, policy, state, goal_img, cur_img, true_rel)
        twist = control_law(est, cfg.lambda_gain)
        trace.records.append(StepRecord(step, pos_err, rot_err, mse, twist.norm, head.value))

        if twist.norm < cfg.stop_velocity_norm:
            break
        pose = integrate_twist(pose, twist, cfg.dt)

    trace.steps_used = len(trace.records)
    if trace.failed and trace.records:
        trace.final_pos_err_m = trace.records[-1].pos_err_m
        trace.final_rot_err_rad = trace.records[-1].rot_err_rad
    elif trace.failed:
        start_rel = relative_pose(goal_pose, start_pose)
        trace.final_pos_err_m = float(np.linalg.norm(start_rel.translation))
        trace.final_rot_err_rad = float(np.linalg.norm(axis_angle_from_rotation(start_rel.rotation)))
    else:
        final_rel = relative_pose(goal_pose, pose)
        trace.final_pos_err_m = float(np.linalg.norm(final_rel.translation))
        trace.final_rot_err_rad = float(np.linalg.norm(axis_angle_from_rotation(final_rel.rotation)))
    return trace


def trace_to_csv(trace: ServoTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "pos_err_m", "rot_err_rad", "photometric_mse", "twist_norm", "active_head"])
        for r in trace.records:
            writer.writerow(
                [r.step, repr(r.pos_err_m), repr(r.rot_err_rad), repr(r.photometric_mse), repr(r.twist_norm), r.active_head]
            )
