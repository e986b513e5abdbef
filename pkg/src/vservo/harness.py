"""Batch experiment runner: paired scenario comparisons and the
domain-randomization ablation, with CSV and plot emission.

Every experiment index deterministically derives one scene, one goal pose,
and one start offset from the master seed, and every bundle in the batch is
evaluated on exactly that episode — so regime comparisons are paired.
"""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass

import numpy as np

from vservo.dataset import DatasetKind, OffsetLimits, generate_dataset, offset_to_pose
from vservo.errors import IoFailure
from vservo.geometry import Pose, compose
from vservo.scene import CameraIntrinsics, DrConfig, base_camera_rotation, make_scene
from vservo.servo import (
    PolicyKind,
    ServoConfig,
    ServoTrace,
    SwitchPolicy,
    default_policy,
    run_servo,
    trace_to_csv,
)
from vservo.plotting import line_plot
from vservo.streams import split_seed, stream
from vservo.train import MamlConfig, TrainConfig, TrainedBundle, build_bundle

__all__ = [
    "Scenario",
    "scenario_limits",
    "ComparisonRow",
    "ExperimentDraw",
    "draw_experiment",
    "run_batch",
    "ablation_batch",
    "emit_outputs",
    "dr_variant_name",
]

GOAL_JITTER = 0.05
NOMINAL_HEIGHT = 0.6


class Scenario(enum.Enum):
    PROXIMAL = "proximal"
    DISTAL = "distal"


_SCENARIO_LIMITS = {
    Scenario.PROXIMAL: OffsetLimits(0.15, 0.10, 0.07, 0.15),
    Scenario.DISTAL: OffsetLimits(0.30, 0.20, 0.15, 0.40),
}

# Guard against accidental edits: the evaluation ranges are fixed constants.
assert _SCENARIO_LIMITS[Scenario.PROXIMAL] == OffsetLimits(0.15, 0.10, 0.07, 0.15)
assert _SCENARIO_LIMITS[Scenario.DISTAL] == OffsetLimits(0.30, 0.20, 0.15, 0.40)


def scenario_limits(scenario: Scenario) -> OffsetLimits:
    return _SCENARIO_LIMITS[scenario]


@dataclass(frozen=True)
class ComparisonRow:
    regime: str
    model_size_bytes: int
    runs: int
    failures: int
    pos_err_mean_m: float
    pos_err_std_m: float
    rot_err_mean_rad: float
    rot_err_std_rad: float


@dataclass(frozen=True)
class ExperimentDraw:
    scene: object
    goal_pose: Pose
    start_pose: Pose
    offset6: np.ndarray


def draw_experiment(master_seed: int, index: int, scenario: Scenario) -> ExperimentDraw:
    """Scene + goal + start offset for one experiment index (full DR)."""
    scene = make_scene(split_seed(master_seed, "eval-scene", index))
    rng = stream(master_seed, "eval-offset", index)
    jitter = rng.uniform(-GOAL_JITTER, GOAL_JITTER, size=2)
    goal = Pose(base_camera_rotation(), np.array([jitter[0], jitter[1], NOMINAL_HEIGHT]))
    bounds = scenario_limits(scenario).bounds6()
    offset6 = rng.uniform(-bounds, bounds)
    start = compose(goal, offset_to_pose(offset6[:3], offset6[3:]))
    return ExperimentDraw(scene, goal, start, offset6)


def _policy_for(bundle: TrainedBundle | None) -> SwitchPolicy:
    if bundle is None:
        return SwitchPolicy(PolicyKind.ORACLE)
    return default_policy(bundle.regime, bundle.threshold)


def _row_name(bundle: TrainedBundle | None) -> str:
    return "oracle" if bundle is None else bundle.regime.value


def run_batch(
    bundles: list[TrainedBundle | None],
    scenario: Scenario,
    n: int,
    master_seed: int,
    intr: CameraIntrinsics | None = None,
    cfg: ServoConfig = ServoConfig(),
) -> tuple[list[ComparisonRow], dict[tuple[str, int], ServoTrace]]:
    """Paired evaluation of the bundles over n experiments.

    ``None`` stands for the ground-truth (oracle) estimator.  Failures stay
    in the statistics at their last valid error.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    intr = intr or CameraIntrinsics.default()
    draws = [draw_experiment(master_seed, i, scenario) for i in range(n)]

    rows: list[ComparisonRow] = []
    traces: dict[tuple[str, int], ServoTrace] = {}
    for bundle in bundles:
        name = _row_name(bundle)
        policy = _policy_for(bundle)
        pos, rot, failures = [], [], 0
        for i, d in enumerate(draws):
            trace = run_servo(d.scene, d.goal_pose, d.start_pose, bundle, policy, intr, cfg)
            traces[(name, i)] = trace
            pos.append(trace.final_pos_err_m)
            rot.append(trace.final_rot_err_rad)
            failures += trace.failed
        rows.append(
            ComparisonRow(
                regime=name,
                model_size_bytes=0 if bundle is None else bundle.serialized_size(),
                runs=n,
                failures=failures,
                pos_err_mean_m=float(np.mean(pos)),
                pos_err_std_m=float(np.std(pos)),
                rot_err_mean_rad=float(np.mean(rot)),
                rot_err_std_rad=float(np.std(rot)),
            )
        )
    return rows, traces


def dr_variant_name(dr: DrConfig) -> str:
    if dr == DrConfig():
        return "full"
    parts = []
    if not dr.randomize_texture:
        parts.append("no-texture")
    if not dr.include_distractors:
        parts.append("no-distractors")
    if not dr.randomize_lighting:
        parts.append("no-lighting")
    return "+".join(parts) or "full"


def ablation_batch(
    dr_variants: list[DrConfig],
    regime,
    scenario: Scenario,
    n: int,
    seed: int,
    train_n: int = 512,
    cfg: TrainConfig | None = None,
    mcfg: MamlConfig | None = None,
    net_cfg=None,
) -> list[ComparisonRow]:
    """Train one bundle per DR variant, evaluate all on fully randomized scenes.

    The variant toggles apply to the training data only; evaluation scenes
    always use full randomization, so each row measures robustness to the
    randomization held out during training.
    """
    from vservo.network import NetConfig
    from vservo.train import DESK_MAML, DESK_TRAIN

    cfg = cfg or DESK_TRAIN
    mcfg = mcfg or DESK_MAML
    net_cfg = net_cfg or NetConfig()
    intr = CameraIntrinsics.default(net_cfg.image_size)

    rows = []
    for dr in dr_variants:
        lsd = generate_dataset(DatasetKind.LSD, train_n, split_seed(seed, "ablation-lsd"), dr, intr)
        ssd = generate_dataset(DatasetKind.SSD, train_n, split_seed(seed, "ablation-ssd"), dr, intr)
        bundle = build_bundle(regime, lsd, ssd, cfg, mcfg, net_cfg, seed=split_seed(seed, "ablation-train"))
        batch_rows, _ = run_batch([bundle], scenario, n, split_seed(seed, "ablation-eval"), intr=intr)
        row = batch_rows[0]
        rows.append(
            ComparisonRow(
                regime=f"{row.regime}/{dr_variant_name(dr)}",
                model_size_bytes=row.model_size_bytes,
                runs=row.runs,
                failures=row.failures,
                pos_err_mean_m=row.pos_err_mean_m,
                pos_err_std_m=row.pos_err_std_m,
                rot_err_mean_rad=row.rot_err_mean_rad,
                rot_err_std_rad=row.rot_err_std_rad,
            )
        )
    return rows


def emit_outputs(rows: list[ComparisonRow], traces: dict[tuple[str, int], ServoTrace], out_dir) -> list[str]:
    """Write comparison.csv, per-run trace CSVs, and the two step plots.

    Returns the list of written file names.  Floats are printed with repr,
    so re-parsing the CSVs reproduces every value exactly.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
        written = []

        comparison = os.path.join(out_dir, "comparison.csv")
        with open(comparison, "w", newline="") as fh:
            fh.write("# rotation error metric: Euclidean norm of the final axis-angle vector (radians)\n")
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "regime",
                    "model_size_bytes",
                    "runs",
                    "failures",
                    "pos_err_mean_m",
                    "pos_err_std_m",
                    "rot_err_mean_rad",
                    "rot_err_std_rad",
                ]
            )
            for r in rows:
                writer.writerow(
                    [
                        r.regime,
                        r.model_size_bytes,
                        r.runs,
                        r.failures,
                        repr(r.pos_err_mean_m),
                        repr(r.pos_err_std_m),
                        repr(r.rot_err_mean_rad),
                        repr(r.rot_err_std_rad),
                    ]
                )
        written.append("comparison.csv")

        for (name, run), trace in sorted(traces.items()):
            fname = f"trace_{name.replace('/', '_')}_{run}.csv"
            trace_to_csv(trace, os.path.join(out_dir, fname))
            written.append(fname)

        if traces:
            names = sorted({name for name, _ in traces})
            photometric = [
                (name, np.array([rec.photometric_mse for rec in traces[(name, 0)].records]))
                for name in names
                if (name, 0) in traces
            ]
            twist = [
                (name, np.array([rec.twist_norm for rec in traces[(name, 0)].records]))
                for name in names
                if (name, 0) in traces
            ]
            line_plot(photometric, os.path.join(out_dir, "photometric.ppm"))
            line_plot(twist, os.path.join(out_dir, "twistnorm.ppm"))
            written += ["photometric.ppm", "twistnorm.ppm"]
        return written
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
