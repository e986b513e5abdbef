import numpy as np
import pytest

from vservo import autodiff as ad
from vservo.dataset import (
    Dataset,
    DatasetKind,
    LSD_LIMITS,
    SSD_LIMITS,
    Sample,
    SamplerTag,
    concat_datasets,
    generate_dataset,
)
from vservo.errors import DivergenceDetected, EmptyDataset, EmptyValidation
from vservo.network import HeadId, NetConfig, init_params, forward
from vservo.scene import CameraIntrinsics
from vservo.train import (
    MamlConfig,
    Regime,
    TrainConfig,
    TrainedBundle,
    build_bundle,
    calibrate_vanilla_threshold,
    finetune_heads,
    load_bundle,
    maml_train,
    save_bundle,
    serialize_bundle,
    train_supervised,
)

SMALL_INTR = CameraIntrinsics.default(16)
SMALL_NET = NetConfig(image_size=16, widths=(2, 3, 3, 4), feature_dim=8, head_hidden=6)
FAST = TrainConfig(learning_rate=1e-3, fine_learning_rate=1e-4, epochs_main=2, epochs_fine=1, batch_size=16)
FAST_MAML = MamlConfig(alpha=0.01, beta_meta=3e-3, k_shot=4, iterations=30)


@pytest.fixture(scope="module")
def small_data():
    lsd = generate_dataset(DatasetKind.LSD, 64, 21, intr=SMALL_INTR)
    ssd = generate_dataset(DatasetKind.SSD, 64, 22, intr=SMALL_INTR)
    return lsd, ssd


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        MamlConfig(alpha=-1.0)


def test_empty_dataset_rejected():
    empty = Dataset(DatasetKind.LSD, [], 0, LSD_LIMITS, 16, 16)
    with pytest.raises(EmptyDataset):
        train_supervised(empty, [HeadId.REG_LSD], FAST, SMALL_NET, 0)


def test_single_head_training_leaves_other_heads_at_init(small_data):
    lsd, _ = small_data
    model, log = train_supervised(lsd, [HeadId.REG_LSD], FAST, SMALL_NET, seed=3)
    fresh = init_params(SMALL_NET, __import__("vservo.streams", fromlist=["split_seed"]).split_seed(3, "init"))
    for k in model.head_group_names(HeadId.REG_SSD):
        assert np.array_equal(model.groups[k], fresh.groups[k])
    for k in model.head_group_names(HeadId.CLS):
        assert np.array_equal(model.groups[k], fresh.groups[k])
    assert any(
        not np.array_equal(model.groups[k], fresh.groups[k]) for k in model.trunk_group_names()
    )
    assert model.s_hat.size == 0
    assert len(log) >= FAST.epochs_main + FAST.epochs_fine


def test_multi_head_training_uses_autobalance(small_data):
    lsd, ssd = small_data
    comb = concat_datasets(lsd, ssd)
    model, _ = train_supervised(comb, [HeadId.REG_LSD, HeadId.CLS], FAST, SMALL_NET, seed=4)
    assert model.s_hat.size == 2
    assert np.all(np.isfinite(model.s_hat))
    assert np.any(model.s_hat != 0.0)


def test_training_is_reproducible(small_data):
    lsd, _ = small_data
    a, log_a = train_supervised(lsd, [HeadId.REG_LSD], FAST, SMALL_NET, seed=7)
    b, log_b = train_supervised(lsd, [HeadId.REG_LSD], FAST, SMALL_NET, seed=7)
    for k in a.groups:
        assert np.array_equal(a.groups[k], b.groups[k])
    assert log_a == log_b


def test_training_loss_decreases_on_learnable_problem(small_data):
    lsd, ssd = small_data
    cfg = TrainConfig(learning_rate=3e-3, fine_learning_rate=3e-4, epochs_main=6, epochs_fine=0, batch_size=16)
    comb = concat_datasets(lsd, ssd)
    _, log = train_supervised(comb, [HeadId.CLS], cfg, SMALL_NET, seed=8)
    rows = [line.split(",") for line in log[1:]]
    first, last = float(rows[0][3]), float(rows[-1][3])
    assert last < first


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_detected(small_data):
    lsd, _ = small_data
    cfg = TrainConfig(learning_rate=1e12, fine_learning_rate=1e11, epochs_main=3, epochs_fine=0, batch_size=16)
    with pytest.raises(DivergenceDetected):
        train_supervised(lsd, [HeadId.REG_LSD], cfg, SMALL_NET, seed=9)


def test_cls_only_training_separable_toy_problem():
    # Bright-vs-dark current images: linearly separable from pixels.
    rng = np.random.default_rng(0)
    samples = []
    for i in range(96):
        origin = DatasetKind.LSD if i % 2 == 0 else DatasetKind.SSD
        base = rng.uniform(0.2, 0.35) if origin == DatasetKind.LSD else rng.uniform(0.65, 0.8)
        ref = np.full((16, 16, 3), 128, dtype=np.uint8)
        cur = np.round(
            np.clip(base + rng.normal(scale=0.02, size=(16, 16, 3)), 0, 1) * 255
        ).astype(np.uint8)
        samples.append(
            Sample(ref, cur, np.zeros(3), np.zeros(3), origin, SamplerTag.UNIFORM)
        )
    toy = Dataset(DatasetKind.COMBINED, samples, 0, LSD_LIMITS, 16, 16)
    cfg = TrainConfig(learning_rate=3e-3, fine_learning_rate=3e-4, epochs_main=8, epochs_fine=0, batch_size=16)
    model, _ = train_supervised(toy, [HeadId.CLS], cfg, SMALL_NET, seed=10)

    refs = np.stack([s.reference_image for s in samples])
    curs = np.stack([s.current_image for s in samples])
    logits = forward(model, (refs, curs), HeadId.CLS)
    pred = np.argmax(logits, axis=1)
    truth = np.array([int(s.origin) for s in samples])
    assert np.mean(pred == truth) >= 0.99


# ---------------------------------------------------------------------------
# MAML


def test_maml_alpha_zero_inner_step_is_identity():
    # With alpha = 0 the adapted parameters equal theta bit-for-bit.
    rng = np.random.default_rng(1)
    w = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    loss = ad.tsum(ad.mul(w, w))
    (g,) = ad.grad(loss, [w], create_graph=True)
    adapted = ad.sub(w, ad.mul(0.0, g))
    assert np.array_equal(adapted.data, w.data)


def test_maml_trains_and_is_reproducible(small_data):
    lsd, ssd = small_data
    a, log_a = maml_train(lsd, ssd, FAST_MAML, FAST, SMALL_NET, seed=11)
    b, log_b = maml_train(lsd, ssd, FAST_MAML, FAST, SMALL_NET, seed=11)
    for k in a.groups:
        assert np.array_equal(a.groups[k], b.groups[k])
    assert log_a == log_b
    assert a.s_hat.size == 3


def test_maml_first_order_differs_from_exact(small_data):
    lsd, ssd = small_data
    exact, _ = maml_train(lsd, ssd, FAST_MAML, FAST, SMALL_NET, seed=12)
    fo, _ = maml_train(lsd, ssd, FAST_MAML, FAST, SMALL_NET, seed=12, first_order=True)
    assert any(not np.array_equal(exact.groups[k], fo.groups[k]) for k in exact.groups)


def test_maml_split_halves_disjoint(small_data):
    lsd, _ = small_data
    h = len(lsd) // 2
    inner_ids = {id(s) for s in lsd.samples[:h]}
    meta_ids = {id(s) for s in lsd.samples[h:]}
    assert inner_ids.isdisjoint(meta_ids)


def test_first_order_update_matches_hand_rolled_arithmetic():
    # One first-order iteration with s_hat = 0 must equal
    # beta * sum_i grad at the inner-adapted point, on a tiny quadratic net.
    rng = np.random.default_rng(2)
    theta = rng.normal(size=10)
    tasks = [rng.normal(size=10) for _ in range(3)]
    alpha, beta = 0.05, 0.1

    def task_loss_np(th, c):
        return 0.5 * np.sum((th - c) ** 2)

    # Hand-rolled: adapted_i = th - alpha (th - c_i); grad at adapted_i = adapted_i - c_i.
    update = np.zeros(10)
    for c in tasks:
        adapted = theta - alpha * (theta - c)
        update += adapted - c
    expected_new = theta - beta * update

    t = ad.Tensor(theta, requires_grad=True)
    total = None
    for c in tasks:
        (g,) = ad.grad(
            ad.mul(ad.tsum(ad.mul(ad.sub(t, c), ad.sub(t, c))), 0.5), [t], create_graph=False
        )
        adapted = ad.sub(t, ad.mul(alpha, g))
        term = ad.mul(ad.tsum(ad.mul(ad.sub(adapted, c), ad.sub(adapted, c))), 0.5)
        total = term if total is None else ad.add(total, term)
    (meta_g,) = ad.grad(total, [t])
    got_new = theta - beta * meta_g.data
    np.testing.assert_allclose(got_new, expected_new, atol=1e-12)


# ---------------------------------------------------------------------------
# finetuning


def test_finetune_keeps_trunk_bytes(small_data):
    lsd, ssd = small_data
    model, _ = maml_train(lsd, ssd, FAST_MAML, FAST, SMALL_NET, seed=13)
    before = {k: model.groups[k].tobytes() for k in model.trunk_group_names()}
    tuned, log = finetune_heads(model, lsd, ssd, FAST, seed=13)
    for k in tuned.trunk_group_names():
        assert tuned.groups[k].tobytes() == before[k]
    assert len(log) > 1


def test_finetune_zero_epochs_returns_unchanged(small_data):
    lsd, ssd = small_data
    model, _ = maml_train(lsd, ssd, FAST_MAML, FAST, SMALL_NET, seed=14)
    cfg = TrainConfig(learning_rate=1e-3, fine_learning_rate=1e-4, epochs_main=1, epochs_fine=0)
    tuned, _ = finetune_heads(model, lsd, ssd, cfg, seed=14)
    for k in model.groups:
        assert np.array_equal(tuned.groups[k], model.groups[k])


def test_finetune_never_worsens_validation(small_data):
    lsd, ssd = small_data
    model, _ = maml_train(lsd, ssd, FAST_MAML, FAST, SMALL_NET, seed=15)
    _, log = finetune_heads(model, lsd, ssd, FAST, seed=15)
    # Per head the last kept validation loss must be <= the initial one.
    rows = [line.split(",") for line in log[1:]]
    for head in ("reg_lsd", "reg_ssd", "cls"):
        head_rows = [r for r in rows if r[0] == head]
        initial = float(head_rows[0][3])
        kept = [float(r[3]) for r in head_rows if r[4] == "1"]
        assert min(kept) <= initial + 1e-12


# ---------------------------------------------------------------------------
# threshold calibration


def test_calibrate_separable_case():
    small = [(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.05), True) for _ in range(10)]
    large = [(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.8), False) for _ in range(10)]
    thr = calibrate_vanilla_threshold(None, None, small + large)
    assert 0.05**2 < thr < 0.8**2


def test_calibrate_single_candidate():
    pairs = [(np.zeros((2, 2, 3)), np.full((2, 2, 3), 0.1), True)]
    thr = calibrate_vanilla_threshold(None, None, pairs, candidates=[0.42])
    assert thr == 0.42


def test_calibrate_overlapping_matches_sweep_oracle():
    rng = np.random.default_rng(3)
    pairs = []
    for _ in range(60):
        small = bool(rng.integers(0, 2))
        level = abs(rng.normal(0.1 if small else 0.25, 0.08))
        pairs.append((np.zeros((3, 3, 3)), np.full((3, 3, 3), level), small))
    thr = calibrate_vanilla_threshold(None, None, pairs)

    from vservo.servo import photometric_mse

    mses = np.array([photometric_mse(a, b) for a, b, _ in pairs])
    labels = np.array([s for _, _, s in pairs])

    def balanced_acc(t):
        pred = mses < t
        tpr = np.sum(pred & labels) / labels.sum()
        tnr = np.sum(~pred & ~labels) / (~labels).sum()
        return (tpr + tnr) / 2

    grid = np.arange(0.0, mses.max() + 2e-4, 1e-4)
    best_grid = max(balanced_acc(t) for t in grid)
    assert balanced_acc(thr) >= best_grid - 1e-12


def test_calibrate_empty_validation_rejected():
    with pytest.raises(EmptyValidation):
        calibrate_vanilla_threshold(None, None, [])


# ---------------------------------------------------------------------------
# bundles


@pytest.mark.parametrize(
    "regime,count",
    [
        (Regime.LSD_ONLY, 1),
        (Regime.COMB, 1),
        (Regime.VANILLA_SWITCH, 2),
        (Regime.CNN_SWITCH, 3),
        (Regime.IMPLICIT_SWITCH, 1),
        (Regime.META_SWITCH, 1),
    ],
)
def test_bundle_model_counts(small_data, regime, count):
    lsd, ssd = small_data
    tiny = TrainConfig(learning_rate=1e-3, fine_learning_rate=1e-4, epochs_main=1, epochs_fine=1, batch_size=32)
    tiny_maml = MamlConfig(alpha=0.01, beta_meta=1e-3, k_shot=4, iterations=5)
    bundle = build_bundle(regime, lsd, ssd, tiny, tiny_maml, SMALL_NET, seed=16)
    assert len(bundle.models) == count
    if regime == Regime.VANILLA_SWITCH:
        assert bundle.threshold is not None and bundle.threshold > 0
    else:
        assert bundle.threshold is None


def test_bundle_wrong_model_count_rejected(small_data):
    lsd, _ = small_data
    model = init_params(SMALL_NET, 0)
    with pytest.raises(ValueError):
        TrainedBundle(Regime.VANILLA_SWITCH, [model])


def test_bundle_roundtrip(tmp_path, small_data):
    lsd, ssd = small_data
    tiny = TrainConfig(learning_rate=1e-3, fine_learning_rate=1e-4, epochs_main=1, epochs_fine=0, batch_size=32)
    tiny_maml = MamlConfig(alpha=0.01, beta_meta=1e-3, k_shot=4, iterations=3)
    bundle = build_bundle(Regime.VANILLA_SWITCH, lsd, ssd, tiny, tiny_maml, SMALL_NET, seed=17)
    path = tmp_path / "b.vsbd"
    save_bundle(bundle, path)
    loaded = load_bundle(path)
    assert loaded.regime == bundle.regime
    assert loaded.threshold == bundle.threshold
    assert loaded.log == bundle.log
    assert loaded.file_size == path.stat().st_size
    assert serialize_bundle(loaded) == serialize_bundle(bundle)
