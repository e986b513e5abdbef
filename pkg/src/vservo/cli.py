"""Command-line interface.

Subcommands:

* ``gen-data``  generate an LSD or SSD dataset file;
* ``train``     train one regime from dataset files into a bundle;
* ``servo``     run a single servo episode and write its trace CSV;
* ``eval``      paired batch comparison of bundles, CSV + plots.

All commands are deterministic in their flags: identical invocations write
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import sys

from vservo.dataset import DatasetKind, generate_dataset, load_dataset, save_dataset
from vservo.harness import Scenario, draw_experiment, emit_outputs, run_batch
from vservo.network import HeadId, NetConfig
from vservo.scene import CameraIntrinsics, DrConfig
from vservo.servo import PolicyKind, ServoConfig, SwitchPolicy, run_servo, trace_to_csv
from vservo.train import (
    DESK_MAML,
    DESK_TRAIN,
    MamlConfig,
    Regime,
    TrainConfig,
    build_bundle,
    load_bundle,
    save_bundle,
)

__all__ = ["main"]


def _dr_from_args(args) -> DrConfig:
    return DrConfig(
        randomize_texture=not args.no_texture,
        include_distractors=not args.no_distractors,
        randomize_lighting=not args.no_lighting,
    )


def _cmd_gen_data(args) -> int:
    kind = DatasetKind.LSD if args.kind == "lsd" else DatasetKind.SSD
    dataset = generate_dataset(kind, args.n, args.seed, _dr_from_args(args))
    save_dataset(dataset, args.out)
    print(f"wrote {args.out}: {len(dataset)} {kind.name} samples")
    return 0


def _cmd_train(args) -> int:
    regime = Regime(args.regime)
    lsd = load_dataset(args.lsd) if args.lsd else None
    ssd = load_dataset(args.ssd) if args.ssd else None
    cfg = TrainConfig(
        learning_rate=args.lr,
        fine_learning_rate=args.fine_lr,
        weight_decay=args.weight_decay,
        epochs_main=args.epochs_main,
        epochs_fine=args.epochs_fine,
        batch_size=args.batch_size,
        master_seed=args.seed,
    )
    mcfg = MamlConfig(
        alpha=args.maml_alpha,
        beta_meta=args.maml_beta,
        k_shot=args.k_shot,
        iterations=args.maml_iterations,
    )
    bundle = build_bundle(regime, lsd, ssd, cfg, mcfg, NetConfig(), args.seed, args.first_order)
    save_bundle(bundle, args.out)
    with open(str(args.out) + ".log.csv", "w") as fh:
        fh.write(bundle.log + "\n")
    print(f"wrote {args.out}: {regime.value}, {len(bundle.models)} model(s), {bundle.serialized_size()} bytes")
    return 0


def _parse_policy(text: str, bundle) -> SwitchPolicy:
    if text == "oracle":
        return SwitchPolicy(PolicyKind.ORACLE)
    if text == "single-lsd":
        return SwitchPolicy(PolicyKind.SINGLE_MODEL, head=HeadId.REG_LSD)
    if text == "single-ssd":
        return SwitchPolicy(PolicyKind.SINGLE_MODEL, head=HeadId.REG_SSD)
    if text == "cls":
        return SwitchPolicy(PolicyKind.CLASSIFIER)
    if text.startswith("mse"):
        if ":" in text:
            threshold = float(text.split(":", 1)[1])
        elif bundle is not None and bundle.threshold is not None:
            threshold = bundle.threshold
        else:
            raise ValueError("mse policy needs a threshold (mse:VALUE) or a calibrated bundle")
        return SwitchPolicy(PolicyKind.MSE_THRESHOLD, threshold=threshold)
    raise ValueError(f"unknown policy {text!r}")


def _cmd_servo(args) -> int:
    bundle = load_bundle(args.bundle) if args.bundle else None
    policy = _parse_policy(args.policy, bundle)
    if policy.kind != PolicyKind.ORACLE and bundle is None:
        raise SystemExit("--bundle is required for learned policies")
    draw = draw_experiment(args.seed, 0, Scenario(args.scenario))
    cfg = ServoConfig(lambda_gain=args.gain, max_steps=args.max_steps)
    trace = run_servo(
        draw.scene, draw.goal_pose, draw.start_pose, bundle, policy, CameraIntrinsics.default(), cfg
    )
    trace_to_csv(trace, args.trace)
    print(
        f"wrote {args.trace}: {trace.steps_used} steps, final pos err "
        f"{trace.final_pos_err_m:.6f} m, rot err {trace.final_rot_err_rad:.6f} rad"
        + (" (failed)" if trace.failed else "")
    )
    return 0


def _cmd_eval(args) -> int:
    bundles = []
    for path in args.bundles.split(","):
        path = path.strip()
        bundles.append(None if path == "oracle" else load_bundle(path))
    rows, traces = run_batch(bundles, Scenario(args.scenario), args.n, args.seed)
    written = emit_outputs(rows, traces, args.out)
    for row in rows:
        print(
            f"{row.regime}: pos {row.pos_err_mean_m:.4f} +/- {row.pos_err_std_m:.4f} m, "
            f"rot {row.rot_err_mean_rad:.4f} +/- {row.rot_err_std_rad:.4f} rad, "
            f"{row.failures}/{row.runs} failed"
        )
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vservo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset file")
    p.add_argument("--kind", choices=["lsd", "ssd"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-texture", action="store_true")
    p.add_argument("--no-distractors", action="store_true")
    p.add_argument("--no-lighting", action="store_true")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a regime into a bundle")
    p.add_argument("--regime", choices=[r.value for r in Regime], required=True)
    p.add_argument("--lsd", help="LSD dataset path")
    p.add_argument("--ssd", help="SSD dataset path")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--first-order", action="store_true", help="first-order meta-gradients")
    p.add_argument("--lr", type=float, default=DESK_TRAIN.learning_rate)
    p.add_argument("--fine-lr", type=float, default=DESK_TRAIN.fine_learning_rate)
    p.add_argument("--weight-decay", type=float, default=DESK_TRAIN.weight_decay)
    p.add_argument("--epochs-main", type=int, default=DESK_TRAIN.epochs_main)
    p.add_argument("--epochs-fine", type=int, default=DESK_TRAIN.epochs_fine)
    p.add_argument("--batch-size", type=int, default=DESK_TRAIN.batch_size)
    p.add_argument("--maml-alpha", type=float, default=DESK_MAML.alpha)
    p.add_argument("--maml-beta", type=float, default=DESK_MAML.beta_meta)
    p.add_argument("--k-shot", type=int, default=DESK_MAML.k_shot)
    p.add_argument("--maml-iterations", type=int, default=DESK_MAML.iterations)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("servo", help="run one servo episode")
    p.add_argument("--bundle", help="bundle path (optional for the oracle policy)")
    p.add_argument("--policy", required=True, help="oracle|single-lsd|single-ssd|mse[:THRESH]|cls")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--trace", required=True, help="output CSV path")
    p.add_argument("--scenario", choices=[s.value for s in Scenario], default=Scenario.DISTAL.value)
    p.add_argument("--gain", type=float, default=0.15)
    p.add_argument("--max-steps", type=int, default=200)
    p.set_defaults(func=_cmd_servo)

    p = sub.add_parser("eval", help="paired batch comparison")
    p.add_argument("--scenario", choices=[s.value for s in Scenario], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--bundles", required=True, help="comma-separated bundle paths ('oracle' allowed)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
