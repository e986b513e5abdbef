"""Training regimes for the pose-regression network.

Six regimes are supported, mirroring the comparison models:

* ``lsd-only``        one model, large-displacement head on LSD data;
* ``comb``            one model, large-displacement head on LSD+SSD data;
* ``vanilla-switch``  two models (LSD head on LSD, SSD head on SSD) plus a
                      calibrated photometric-error threshold;
* ``cnn-switch``      the two regressor models plus a separate classifier
                      model;
* ``implicit-switch`` one model, regression head on combined data jointly
                      with the auxiliary origin classifier;
* ``meta-switch``     one model meta-trained on all three tasks (regression
                      on each scale plus classification) with a first-order
                      or exact second-order inner step, then per-head
                      finetuning with the trunk frozen.

Supervised phases use an adaptive-moment optimizer with decoupled weight
decay and a two-phase learning-rate schedule; the meta update applies the
plain gradient-descent rule with auto-balanced task losses.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from vservo import autodiff as ad
from vservo.dataset import (
    Dataset,
    LSD_LIMITS,
    SSD_LIMITS,
    concat_datasets,
    generate_pair,
    sample_offset,
)
from vservo.errors import (
    ChecksumMismatch,
    DivergenceDetected,
    EmptyDataset,
    EmptyValidation,
    FormatVersionMismatch,
    IoFailure,
)
from vservo.geometry import Pose
from vservo.losses import loss_autobalance, loss_cls_batch, loss_pose_batch
from vservo.network import (
    HeadId,
    ModelParams,
    NetConfig,
    deserialize_model,
    encode_weights,
    head_weights,
    init_params,
    serialize_model,
)
from vservo.scene import CameraIntrinsics, DrConfig, base_camera_rotation, make_scene
from vservo.streams import split_seed, stream

__all__ = [
    "TrainConfig",
    "MamlConfig",
    "DESK_TRAIN",
    "DESK_MAML",
    "Regime",
    "TrainedBundle",
    "train_supervised",
    "maml_train",
    "finetune_heads",
    "calibrate_vanilla_threshold",
    "make_calibration_pairs",
    "build_bundle",
    "serialize_bundle",
    "save_bundle",
    "load_bundle",
]

GRAD_CLIP_NORM = 10.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    fine_learning_rate: float = 1e-5
    weight_decay: float = 4e-5
    epochs_main: int = 50
    epochs_fine: int = 20
    batch_size: int = 32
    beta: float = 0.2
    master_seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.fine_learning_rate, self.beta) <= 0:
            raise ValueError("rates and beta must be positive")


# Scaled-down schedule that keeps the two-phase shape but fits a CPU budget.
DESK_TRAIN = TrainConfig(epochs_main=6, epochs_fine=1)


@dataclass(frozen=True)
class MamlConfig:
    alpha: float = 0.01
    beta_meta: float = 1e-4
    k_shot: int = 8
    iterations: int = 2000

    def __post_init__(self):
        if self.alpha <= 0 or self.beta_meta <= 0 or self.k_shot < 1:
            raise ValueError("alpha, beta_meta must be positive and k_shot >= 1")


DESK_MAML = MamlConfig(alpha=0.01, beta_meta=0.02, k_shot=8, iterations=1500)


class Regime(enum.Enum):
    LSD_ONLY = "lsd-only"
    COMB = "comb"
    VANILLA_SWITCH = "vanilla-switch"
    CNN_SWITCH = "cnn-switch"
    IMPLICIT_SWITCH = "implicit-switch"
    META_SWITCH = "meta-switch"


_REGIME_MODEL_COUNT = {
    Regime.LSD_ONLY: 1,
    Regime.COMB: 1,
    Regime.VANILLA_SWITCH: 2,
    Regime.CNN_SWITCH: 3,
    Regime.IMPLICIT_SWITCH: 1,
    Regime.META_SWITCH: 1,
}


@dataclass
class TrainedBundle:
    regime: Regime
    models: list[ModelParams]
    threshold: float | None = None
    log: str = ""
    file_size: int | None = None  # set when loaded from disk

    def __post_init__(self):
        expected = _REGIME_MODEL_COUNT[self.regime]
        if len(self.models) != expected:
            raise ValueError(f"{self.regime.value} bundle needs {expected} models, got {len(self.models)}")

    def serialized_size(self) -> int:
        return self.file_size if self.file_size is not None else len(serialize_bundle(self))


def _stacked(dataset: Dataset):
    refs = np.stack([s.reference_image for s in dataset.samples])
    curs = np.stack([s.current_image for s in dataset.samples])
    labels = np.stack([s.label6() for s in dataset.samples])
    origins = np.array([int(s.origin) for s in dataset.samples])
    return refs, curs, labels, origins


def _norm_stats(refs: np.ndarray, curs: np.ndarray):
    both = np.concatenate([refs, curs]).astype(np.float64) / 255.0
    mean = both.mean(axis=(0, 1, 2))
    std = both.std(axis=(0, 1, 2))
    return mean, np.maximum(std, 1e-6)


def _batch_tensors(refs, curs, idx, mean, std):
    r = (refs[idx].astype(np.float64) / 255.0 - mean) / std
    c = (curs[idx].astype(np.float64) / 255.0 - mean) / std
    return ad.Tensor(r), ad.Tensor(c)


class _Adam:
    """Adaptive-moment optimizer with decoupled weight decay and global-norm
    gradient clipping; decay applies to weight matrices only."""

    def __init__(self, names, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        self.names = list(names)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: None for n in self.names}
        self.v = {n: None for n in self.names}
        self.t = 0
        self.clip_events = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        total = np.sqrt(sum(float(np.sum(grads[n] * grads[n])) for n in self.names))
        scale = 1.0
        if total > GRAD_CLIP_NORM:
            scale = GRAD_CLIP_NORM / total
            self.clip_events += 1
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for n in self.names:
            g = grads[n] * scale
            if self.m[n] is None:
                self.m[n] = np.zeros_like(g)
                self.v[n] = np.zeros_like(g)
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            update = (self.m[n] / b1t) / (np.sqrt(self.v[n] / b2t) + self.eps)
            params[n] = params[n] - self.lr * update
            if self.weight_decay and n.endswith(".w"):
                params[n] = params[n] - self.lr * self.weight_decay * params[n]


_HEAD_LABEL_DATA = {HeadId.REG_LSD: "pose", HeadId.REG_SSD: "pose", HeadId.CLS: "origin"}


def _head_loss(weights, feat, head, labels_t, origins, beta):
    out = head_weights(weights, feat, head)
    if head == HeadId.CLS:
        return loss_cls_batch(out, origins)
    return loss_pose_batch(out, labels_t, beta)


def _check_finite(value: float, where: str) -> None:
    if not np.isfinite(value):
        raise DivergenceDetected(f"non-finite loss during {where}")


def _log_line(cols) -> str:
    parts = []
    for c in cols:
        if isinstance(c, (float, np.floating)):
            parts.append(repr(float(c)))
        else:
            parts.append(str(c))
    return ",".join(parts)


def train_supervised(
    dataset: Dataset,
    heads_active: list[HeadId],
    cfg: TrainConfig,
    net_cfg: NetConfig = NetConfig(),
    seed: int = 0,
) -> tuple[ModelParams, list[str]]:
    """Two-phase supervised training of the given heads on one dataset.

    Heads not listed stay at their initialization.  With more than one
    active head the per-head losses are combined through the learnable
    auto-balance; with a single head the raw loss is used.
    """
    if len(dataset) == 0:
        raise EmptyDataset("no samples to train on")
    refs, curs, labels, origins = _stacked(dataset)
    mean, std = _norm_stats(refs, curs)

    params = init_params(net_cfg, split_seed(seed, "init"))
    params.norm_mean, params.norm_std = mean, std
    values = {k: v.copy() for k, v in params.groups.items()}

    trainable = [k for k in values if k.startswith("trunk.")]
    for head in heads_active:
        trainable += params.head_group_names(head)
    multi = len(heads_active) > 1
    s_hat = np.zeros(len(heads_active))

    log = ["epoch,phase,lr,loss," + ",".join(f"loss_{h.value}" for h in heads_active) + ","
           + ",".join(f"s_{i}" for i in range(len(heads_active))) + ",clipped"]

    order_rng = stream(seed, "train", "order")
    n = len(dataset)
    schedule = [("main", cfg.learning_rate, cfg.epochs_main), ("fine", cfg.fine_learning_rate, cfg.epochs_fine)]
    epoch_counter = 0
    first_epoch_loss = None
    for phase, lr, epochs in schedule:
        opt = _Adam(trainable + (["s_hat"] if multi else []), lr, cfg.weight_decay)
        for _ in range(epochs):
            perm = order_rng.permutation(n)
            epoch_loss = 0.0
            head_sums = np.zeros(len(heads_active))
            batches = 0
            for start in range(0, n, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                r, c = _batch_tensors(refs, curs, idx, mean, std)
                weights = {k: ad.Tensor(values[k], requires_grad=(k in trainable)) for k in values}
                feat = encode_weights(weights, net_cfg, r, c)
                labels_t = ad.Tensor(labels[idx])
                head_losses = [
                    _head_loss(weights, feat, h, labels_t, origins[idx], cfg.beta)
                    for h in heads_active
                ]
                if multi:
                    s_t = ad.Tensor(s_hat, requires_grad=True)
                    total = loss_autobalance(head_losses, s_t)
                    wrt = [weights[k] for k in trainable] + [s_t]
                else:
                    total = head_losses[0]
                    wrt = [weights[k] for k in trainable]
                _check_finite(total.item(), "supervised training")
                gs = ad.grad(total, wrt)
                grads = {k: g.data for k, g in zip(trainable, gs)}
                if multi:
                    grads["s_hat"] = gs[-1].data
                    holder = {k: values[k] for k in trainable}
                    holder["s_hat"] = s_hat
                    opt.step(holder, grads)
                    s_hat = holder.pop("s_hat")
                    values.update(holder)
                else:
                    holder = {k: values[k] for k in trainable}
                    opt.step(holder, grads)
                    values.update(holder)
                epoch_loss += total.item()
                head_sums += [hl.item() for hl in head_losses]
                batches += 1
            epoch_loss /= batches
            head_means = head_sums / batches
            if first_epoch_loss is None:
                first_epoch_loss = epoch_loss
            log.append(_log_line([epoch_counter, phase, lr, epoch_loss, *head_means, *s_hat, opt.clip_events]))
            epoch_counter += 1

    params.groups = values
    params.s_hat = s_hat if multi else np.zeros(0)
    return params, log


def maml_train(
    lsd: Dataset,
    ssd: Dataset,
    mcfg: MamlConfig,
    cfg: TrainConfig,
    net_cfg: NetConfig = NetConfig(),
    seed: int = 0,
    first_order: bool = False,
) -> tuple[ModelParams, list[str]]:
    """Meta-training over the three tasks with auto-balanced task losses.

    Each dataset is split into two disjoint halves; inner (adaptation) steps
    draw from the first half, the meta-objective from the second.  The meta
    update is the plain gradient-descent rule; set ``first_order=True`` to
    drop the second-order term of the inner step.
    """
    if len(lsd) == 0 or len(ssd) == 0:
        raise EmptyDataset("meta-training needs both datasets")
    refs_l, curs_l, labels_l, origins_l = _stacked(lsd)
    refs_s, curs_s, labels_s, origins_s = _stacked(ssd)
    mean, std = _norm_stats(np.concatenate([refs_l, refs_s]), np.concatenate([curs_l, curs_s]))

    def halves(refs, curs, labels, origins):
        h = len(refs) // 2
        inner = (refs[:h], curs[:h], labels[:h], origins[:h])
        meta = (refs[h:], curs[h:], labels[h:], origins[h:])
        return inner, meta

    lsd_inner, lsd_meta = halves(refs_l, curs_l, labels_l, origins_l)
    ssd_inner, ssd_meta = halves(refs_s, curs_s, labels_s, origins_s)

    def combine(a, b):
        return tuple(np.concatenate([x, y]) for x, y in zip(a, b))

    tasks = [
        (HeadId.REG_LSD, lsd_inner, lsd_meta),
        (HeadId.REG_SSD, ssd_inner, ssd_meta),
        (HeadId.CLS, combine(lsd_inner, ssd_inner), combine(lsd_meta, ssd_meta)),
    ]

    params = init_params(net_cfg, split_seed(seed, "init"))
    params.norm_mean, params.norm_std = mean, std
    values = {k: v.copy() for k, v in params.groups.items()}
    names = list(values)
    s_hat = np.zeros(len(tasks))

    log = ["iteration," + ",".join(f"loss_{h.value}" for h, _, _ in tasks) + ","
           + ",".join(f"s_{i}" for i in range(len(tasks)))]
    task_rng = stream(seed, "train", "maml-batches")

    def task_loss(weights, head, data, idx):
        refs, curs, labels, origins = data
        r, c = _batch_tensors(refs, curs, idx, mean, std)
        feat = encode_weights(weights, net_cfg, r, c)
        return _head_loss(weights, feat, head, ad.Tensor(labels[idx]), origins[idx], cfg.beta)

    for it in range(mcfg.iterations):
        weights = {k: ad.Tensor(values[k], requires_grad=True) for k in names}
        s_t = ad.Tensor(s_hat, requires_grad=True)
        outer_losses = []
        for head, inner_data, meta_data in tasks:
            inner_idx = task_rng.integers(0, len(inner_data[0]), size=mcfg.k_shot)
            meta_idx = task_rng.integers(0, len(meta_data[0]), size=mcfg.k_shot)
            inner_loss = task_loss(weights, head, inner_data, inner_idx)
            inner_grads = ad.grad(inner_loss, [weights[k] for k in names], create_graph=not first_order)
            adapted = {
                k: ad.sub(weights[k], ad.mul(mcfg.alpha, g)) for k, g in zip(names, inner_grads)
            }
            outer_losses.append(task_loss(adapted, head, meta_data, meta_idx))
        objective = loss_autobalance(outer_losses, s_t)
        _check_finite(objective.item(), "meta-training")
        gs = ad.grad(objective, [weights[k] for k in names] + [s_t])
        for k, g in zip(names, gs):
            values[k] = values[k] - mcfg.beta_meta * g.data
        s_hat = s_hat - mcfg.beta_meta * gs[-1].data
        if it % 50 == 0 or it == mcfg.iterations - 1:
            log.append(_log_line([it, *[ol.item() for ol in outer_losses], *s_hat]))

    params.groups = values
    params.s_hat = s_hat
    return params, log


def _encode_dataset(params: ModelParams, refs, curs, batch: int = 64) -> np.ndarray:
    feats = []
    with ad.no_grad():
        for start in range(0, len(refs), batch):
            r, c = _batch_tensors(refs, curs, slice(start, start + batch), params.norm_mean, params.norm_std)
            weights = {k: ad.Tensor(v) for k, v in params.groups.items()}
            feats.append(encode_weights(weights, params.config, r, c).data)
    return np.concatenate(feats)


def finetune_heads(
    params: ModelParams,
    lsd: Dataset,
    ssd: Dataset,
    cfg: TrainConfig,
    seed: int = 0,
) -> tuple[ModelParams, list[str]]:
    """Finetune each head separately at the fine learning rate, trunk frozen.

    Because the trunk never changes, features are encoded once per dataset
    and head training runs on the cached features.  A 10% tail split serves
    as validation; the head state with the best validation loss is kept
    (the pre-finetune state is a candidate, so validation loss never gets
    worse).
    """
    out = params.copy()
    log = ["head,epoch,train_loss,val_loss,kept"]
    combined = concat_datasets(lsd, ssd)
    plans = [(HeadId.REG_LSD, lsd), (HeadId.REG_SSD, ssd), (HeadId.CLS, combined)]
    beta = cfg.beta

    for head, data in plans:
        refs, curs, labels, origins = _stacked(data)
        feats = _encode_dataset(out, refs, curs)
        n = len(feats)
        n_val = max(1, n // 10) if n > 1 else 0
        n_train = n - n_val
        head_names = out.head_group_names(head)
        values = {k: out.groups[k].copy() for k in head_names}

        def eval_loss(vals, sl) -> float:
            with ad.no_grad():
                weights = {k: ad.Tensor(v) for k, v in vals.items()}
                feat_t = ad.Tensor(feats[sl])
                if head == HeadId.CLS:
                    return loss_cls_batch(head_weights(weights, feat_t, head), origins[sl]).item()
                return loss_pose_batch(head_weights(weights, feat_t, head), ad.Tensor(labels[sl]), beta).item()

        val_slice = slice(n_train, n)
        best_vals = {k: v.copy() for k, v in values.items()}
        best_val = eval_loss(values, val_slice) if n_val else np.inf
        log.append(_log_line([head.value, -1, np.nan, best_val, 1]))

        opt = _Adam(head_names, cfg.fine_learning_rate, cfg.weight_decay)
        order_rng = stream(seed, "finetune", head.value)
        for epoch in range(cfg.epochs_fine):
            perm = order_rng.permutation(n_train)
            epoch_loss, batches = 0.0, 0
            for start in range(0, n_train, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                weights = {k: ad.Tensor(values[k], requires_grad=True) for k in head_names}
                feat_t = ad.Tensor(feats[idx])
                if head == HeadId.CLS:
                    loss = loss_cls_batch(head_weights(weights, feat_t, head), origins[idx])
                else:
                    loss = loss_pose_batch(head_weights(weights, feat_t, head), ad.Tensor(labels[idx]), beta)
                _check_finite(loss.item(), "head finetuning")
                gs = ad.grad(loss, [weights[k] for k in head_names])
                opt.step(values, {k: g.data for k, g in zip(head_names, gs)})
                epoch_loss += loss.item()
                batches += 1
            val = eval_loss(values, val_slice) if n_val else np.inf
            kept = 0
            if val < best_val:
                best_val = val
                best_vals = {k: v.copy() for k, v in values.items()}
                kept = 1
            log.append(_log_line([head.value, epoch, epoch_loss / max(batches, 1), val, kept]))
        if cfg.epochs_fine > 0 and n_val:
            for k in head_names:
                out.groups[k] = best_vals[k]
        elif cfg.epochs_fine > 0:
            for k in head_names:
                out.groups[k] = values[k]
    return out, log


def calibrate_vanilla_threshold(
    model_lsd: ModelParams | None,
    model_ssd: ModelParams | None,
    validation_pairs,
    candidates=None,
) -> float:
    """Photometric-error threshold maximizing balanced accuracy.

    ``validation_pairs`` is a sequence of (reference image, current image,
    is_small_scale) with float images; the decision rule is
    "use the small-scale model when the photometric MSE is below the
    threshold".  The models are accepted for interface symmetry with the
    bundle builder; the photometric rule does not consult them.
    """
    from vservo.servo import photometric_mse

    pairs = list(validation_pairs)
    if not pairs:
        raise EmptyValidation("no validation pairs")
    mses = np.array([photometric_mse(ref, cur) for ref, cur, _ in pairs])
    labels = np.array([bool(flag) for _, _, flag in pairs])

    if candidates is None:
        uniq = np.unique(mses)
        mids = (uniq[1:] + uniq[:-1]) / 2.0 if len(uniq) > 1 else np.array([])
        candidates = np.concatenate([[uniq[0] * 0.5], mids, [uniq[-1] * 2.0 + 1e-12]])
    candidates = np.asarray(list(candidates), dtype=np.float64)

    n_small = max(int(labels.sum()), 1)
    n_large = max(int((~labels).sum()), 1)
    best_thr, best_acc = float(candidates[0]), -1.0
    for thr in candidates:
        pred_small = mses < thr
        tpr = float(np.sum(pred_small & labels)) / n_small
        tnr = float(np.sum(~pred_small & ~labels)) / n_large
        acc = 0.5 * (tpr + tnr)
        if acc > best_acc:
            best_acc, best_thr = acc, float(thr)
    return best_thr


def make_calibration_pairs(seed: int, n_per_class: int = 48, intr: CameraIntrinsics | None = None):
    """Rendered validation pairs at small-scale and large-scale offsets.

    Large-scale draws falling inside the small-scale bounds are redrawn so
    the two classes are separated by construction.
    """
    intr = intr or CameraIntrinsics.default()
    pairs = []
    for i in range(n_per_class * 2):
        small = i % 2 == 0
        rng = stream(seed, "calibration", i)
        scene = make_scene(split_seed(seed, "calibration-scene", i))
        base = Pose(base_camera_rotation(), np.array([0.0, 0.0, 0.6]))
        limits = SSD_LIMITS if small else LSD_LIMITS
        for _ in range(64):
            t, r, _tag = sample_offset(limits, rng)
            if not small and SSD_LIMITS.contains(t, r):
                continue
            break
        ref, cur = generate_pair(scene, base, (t, r), intr)
        pairs.append((ref.astype(np.float64) / 255.0, cur.astype(np.float64) / 255.0, small))
    return pairs


def build_bundle(
    regime: Regime,
    lsd: Dataset | None,
    ssd: Dataset | None,
    cfg: TrainConfig,
    mcfg: MamlConfig,
    net_cfg: NetConfig = NetConfig(),
    seed: int = 0,
    first_order: bool = False,
) -> TrainedBundle:
    """Train everything the given regime needs and package it."""
    if lsd is None or (regime != Regime.LSD_ONLY and ssd is None):
        raise EmptyDataset(f"{regime.value} needs its datasets")

    def sup(dataset, heads, tag):
        model, log = train_supervised(dataset, heads, cfg, net_cfg, split_seed(seed, "regime", tag))
        return model, [f"# model {tag}"] + log

    if regime == Regime.LSD_ONLY:
        model, log = sup(lsd, [HeadId.REG_LSD], "lsd")
        return TrainedBundle(regime, [model], log="\n".join(log))

    if regime == Regime.COMB:
        model, log = sup(concat_datasets(lsd, ssd), [HeadId.REG_LSD], "comb")
        return TrainedBundle(regime, [model], log="\n".join(log))

    if regime == Regime.VANILLA_SWITCH:
        model_lsd, log_a = sup(lsd, [HeadId.REG_LSD], "lsd")
        model_ssd, log_b = sup(ssd, [HeadId.REG_SSD], "ssd")
        pairs = make_calibration_pairs(split_seed(seed, "calibration"))
        threshold = calibrate_vanilla_threshold(model_lsd, model_ssd, pairs)
        return TrainedBundle(regime, [model_lsd, model_ssd], threshold, "\n".join(log_a + log_b))

    if regime == Regime.CNN_SWITCH:
        model_lsd, log_a = sup(lsd, [HeadId.REG_LSD], "lsd")
        model_ssd, log_b = sup(ssd, [HeadId.REG_SSD], "ssd")
        model_cls, log_c = sup(concat_datasets(lsd, ssd), [HeadId.CLS], "cls")
        return TrainedBundle(regime, [model_lsd, model_ssd, model_cls], log="\n".join(log_a + log_b + log_c))

    if regime == Regime.IMPLICIT_SWITCH:
        model, log = sup(concat_datasets(lsd, ssd), [HeadId.REG_LSD, HeadId.CLS], "implicit")
        return TrainedBundle(regime, [model], log="\n".join(log))

    if regime == Regime.META_SWITCH:
        model, log_a = maml_train(lsd, ssd, mcfg, cfg, net_cfg, split_seed(seed, "regime", "meta"), first_order)
        model, log_b = finetune_heads(model, lsd, ssd, cfg, split_seed(seed, "regime", "meta-finetune"))
        return TrainedBundle(regime, [model], log="\n".join(["# meta"] + log_a + ["# finetune"] + log_b))

    raise ValueError(f"unknown regime {regime!r}")  # pragma: no cover


_BUNDLE_MAGIC = b"VSBD"
_BUNDLE_VERSION = 1
_REGIME_CODES = {r: i for i, r in enumerate(Regime)}


def serialize_bundle(bundle: TrainedBundle) -> bytes:
    log_blob = bundle.log.encode("utf-8")
    thr = bundle.threshold
    out = [
        _BUNDLE_MAGIC,
        struct.pack(
            "<HBBBd",
            _BUNDLE_VERSION,
            _REGIME_CODES[bundle.regime],
            len(bundle.models),
            0 if thr is None else 1,
            0.0 if thr is None else float(thr),
        ),
        struct.pack("<I", len(log_blob)),
        log_blob,
    ]
    for model in bundle.models:
        blob = serialize_model(model)
        out.append(struct.pack("<I", len(blob)))
        out.append(blob)
    payload = b"".join(out)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_bundle(bundle: TrainedBundle, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(serialize_bundle(bundle))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_bundle(path) -> TrainedBundle:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(blob) < 8:
        raise ChecksumMismatch("bundle too short")
    payload, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if crc != zlib.crc32(payload):
        raise ChecksumMismatch("CRC32 mismatch")
    if payload[:4] != _BUNDLE_MAGIC:
        raise FormatVersionMismatch("bad magic")
    pos = 4
    version, regime_code, n_models, has_thr, thr = struct.unpack_from("<HBBBd", payload, pos)
    pos += struct.calcsize("<HBBBd")
    if version != _BUNDLE_VERSION:
        raise FormatVersionMismatch(f"unsupported version {version}")
    (log_len,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    log = payload[pos : pos + log_len].decode("utf-8")
    pos += log_len
    models = []
    for _ in range(n_models):
        (blob_len,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        models.append(deserialize_model(payload[pos : pos + blob_len]))
        pos += blob_len
    if pos != len(payload):
        raise ChecksumMismatch("trailing bytes in bundle")
    regime = list(Regime)[regime_code]
    return TrainedBundle(regime, models, thr if has_thr else None, log, file_size=len(blob))
