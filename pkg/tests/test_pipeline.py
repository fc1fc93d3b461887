import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fd import analytic_grads, elementwise_rel_err, numeric_grad
from oracles import auc_pairs, cindex_pairs, cox_scalar
from tilemil.core import Tensor
from tilemil.engine import ModelConfig, forward_detail, init_model
from tilemil.errors import (
    ConfigError, DegenerateBatchError, FormatError, LabelRangeError, SpecError, UndefinedMetricError,
)
from tilemil.hilbert import SurvivalLabel, TileBag
from tilemil.pipeline import (
    AblationReport, SyntheticSpec, TrainConfig, attention_scores, auc, c_index, cosine_lr,
    coxph_loss, cross_entropy, export_attention, generate_bag, generate_dataset, load_dataset,
    macro_f1, metrics, read_bag, run_ablation, save_dataset, split_indices, train, write_bag,
    write_bag_csv,
)
from tilemil.pipeline.synthetic import grow_region, tissue_mask


# -- losses --------------------------------------------------------------------

def test_cross_entropy_uniform():
    for c in (2, 3, 7):
        assert float(cross_entropy(Tensor(np.zeros(c)), 1).data) == pytest.approx(math.log(c), abs=1e-15)


def test_cross_entropy_confident():
    assert float(cross_entropy(Tensor(np.array([40.0, 0.0])), 0).data) < 1e-15


def test_cross_entropy_label_range():
    with pytest.raises(LabelRangeError):
        cross_entropy(Tensor(np.zeros(3)), 3)


def test_cross_entropy_shift_and_gradient():
    rng = np.random.default_rng(0)
    z = Tensor(rng.standard_normal(4), requires_grad=True)
    base = float(cross_entropy(z, 2).data)
    assert abs(float(cross_entropy(Tensor(z.data + 13.0), 2).data) - base) < 1e-10
    (g,) = analytic_grads(lambda: cross_entropy(z, 2), [z])
    fd = numeric_grad(lambda: float(cross_entropy(Tensor(z.data), 2).data), z.data)
    assert elementwise_rel_err(g, fd) < 1e-6


def test_cox_equal_risks_two_samples():
    assert float(coxph_loss(Tensor(np.zeros(2)), [1.0, 2.0], [1, 0]).data) == pytest.approx(math.log(2), abs=1e-15)


def test_cox_three_sample_hand_value():
    risks, times, events = [1.0, 0.5, 0.0], [1.0, 2.0, 3.0], [1, 1, 0]
    # By hand: events at t=1 (risk set all three) and t=2 (last two).
    hand = -((1.0 - math.log(math.e + math.exp(0.5) + 1.0)) + (0.5 - math.log(math.exp(0.5) + 1.0))) / 2
    got = float(coxph_loss(Tensor(np.array(risks)), times, events).data)
    assert abs(got - hand) < 1e-10
    assert abs(got - cox_scalar(risks, times, events)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.1, 100), st.booleans()), min_size=2, max_size=15),
       st.floats(-20, 20))
def test_cox_matches_oracle_and_shift_invariant(rows, c):
    risks, times, events = (np.array(v) for v in zip(*rows))
    if not events.any():
        events[0] = True
    got = float(coxph_loss(Tensor(risks), times, events).data)
    assert abs(got - cox_scalar(risks, times, events)) < 1e-9
    assert abs(float(coxph_loss(Tensor(risks + c), times, events).data) - got) < 1e-10


def test_cox_no_events():
    with pytest.raises(DegenerateBatchError):
        coxph_loss(Tensor(np.zeros(3)), [1, 2, 3], [0, 0, 0])


def test_cox_gradient():
    rng = np.random.default_rng(1)
    r = Tensor(rng.standard_normal(6), requires_grad=True)
    times, events = rng.uniform(1, 10, 6), np.array([1, 0, 1, 1, 0, 1])
    (g,) = analytic_grads(lambda: coxph_loss(r, times, events), [r])
    fd = numeric_grad(lambda: float(coxph_loss(Tensor(r.data), times, events).data), r.data)
    assert elementwise_rel_err(g, fd) < 1e-5


# -- metrics -------------------------------------------------------------------

def test_auc_four_point_toy():
    scores, labels = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    assert auc(np.array(scores), np.array(labels)) == auc_pairs(scores, labels) == 0.75


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**31), st.booleans())
def test_auc_matches_pair_enumeration(n, seed, coarse):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    scores = rng.integers(0, 4, n).astype(float) if coarse else rng.standard_normal(n)
    assert auc(scores, labels) == pytest.approx(auc_pairs(scores, labels), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**31), st.booleans())
def test_cindex_matches_pair_enumeration(n, seed, coarse):
    rng = np.random.default_rng(seed)
    times = rng.integers(1, 8, n).astype(float) if coarse else rng.uniform(0, 10, n)
    events = rng.integers(0, 2, n)
    risks = rng.integers(0, 3, n).astype(float) if coarse else rng.standard_normal(n)
    i = int(np.argmin(times))
    events[i] = 1
    if np.all(times == times[i]):
        times[(i + 1) % n] += 1
    assert c_index(risks, times, events) == pytest.approx(cindex_pairs(risks, times, events), abs=1e-12)


def test_cindex_perfect_and_null():
    t = np.arange(1, 21, dtype=float)
    assert c_index(-t, t, np.ones(20)) == 1.0
    rng = np.random.default_rng(2)
    n = 3000
    assert abs(c_index(rng.standard_normal(n), rng.uniform(0, 1, n), rng.integers(0, 2, n)) - 0.5) < 0.03


def test_metric_errors():
    with pytest.raises(UndefinedMetricError):
        auc(np.array([0.1, 0.2]), np.array([1, 1]))
    with pytest.raises(UndefinedMetricError):
        c_index([1.0, 2.0], [1.0, 2.0], [0, 0])


def test_macro_f1_and_dispatch():
    assert macro_f1([0, 1, 1, 0], [0, 1, 0, 0], 2) == pytest.approx((2 * 2 / 5 + 2 / 3) / 2)
    out = metrics(np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.array([0, 1, 1]))
    assert set(out) == {"accuracy", "auc", "macro_f1"}
    assert out["accuracy"] == pytest.approx(2 / 3)
    assert metrics(np.array([3.0, 1.0]), (np.array([1.0, 2.0]), np.array([1, 1]))) == {"c_index": 1.0}


# -- synthetic data ------------------------------------------------------------

def test_single_planted_tile_noise_free():
    spec = SyntheticSpec(noise=0.0, region_tiles=1, grid=16)
    bag = generate_bag(spec, 0, label=1)
    from tilemil.pipeline.synthetic import signal_vectors
    np.testing.assert_array_equal(bag.features[bag.truth][0], signal_vectors(spec)[0])
    assert np.all(bag.features[~bag.truth] == 0)


def test_generator_deterministic():
    spec = SyntheticSpec(grid=32, seed=4)
    a, b = generate_bag(spec, 3), generate_bag(spec, 3)
    assert a.features.tobytes() == b.features.tobytes()
    assert np.array_equal(a.coords_raw, b.coords_raw) and a.label == b.label


def test_region_inside_tissue_and_connected():
    from scipy import ndimage
    rng = np.random.default_rng(5)
    spec = SyntheticSpec()
    for _ in range(10):
        mask = tissue_mask(spec, rng)
        region = grow_region(mask, 40, rng)
        assert region.sum() == 40 and not np.any(region & ~mask)
        assert ndimage.label(region)[1] == 1


def test_region_too_large():
    mask = np.zeros((8, 8), bool)
    mask[:2, :2] = True
    with pytest.raises(SpecError):
        grow_region(mask, 5, np.random.default_rng(0))


def test_decoy_negatives_carry_scattered_signal():
    spec = SyntheticSpec(decoys=True, region_tiles=30, seed=1)
    neg = generate_bag(spec, 0, label=0)
    pos = generate_bag(spec, 0, label=1)
    assert neg.truth.sum() == pos.truth.sum() == 30
    from scipy import ndimage
    grid = np.zeros((spec.grid, spec.grid), bool)
    grid[neg.coords_raw[neg.truth, 1], neg.coords_raw[neg.truth, 0]] = True
    assert ndimage.label(grid)[1] > 10


def test_survival_labels():
    bags = generate_dataset(SyntheticSpec(task="survival", seed=2), 40)
    assert all(isinstance(b.label, SurvivalLabel) and b.label.time_months > 0 for b in bags)
    events = np.array([b.label.event for b in bags])
    assert 0 < events.mean() < 1
    frac = np.array([b.truth.mean() for b in bags])
    times = np.array([b.label.time_months for b in bags])
    # More planted tissue means shorter survival among uncensored bags.
    assert np.corrcoef(frac[events == 1], np.log(times[events == 1]))[0, 1] < -0.5


def test_linear_probe_learnability():
    from sklearn.linear_model import LogisticRegression
    from sklearn.metrics import roc_auc_score
    bags = generate_dataset(SyntheticSpec(seed=3), 200)
    X = np.stack([b.features.mean(axis=0) for b in bags])
    y = np.array([b.label for b in bags])
    clf = LogisticRegression(max_iter=2000).fit(X[:120], y[:120])
    assert roc_auc_score(y[120:], clf.predict_proba(X[120:])[:, 1]) > 0.9


def test_split_indices_partition():
    tr, va, te = split_indices(500)
    assert (len(tr), len(va), len(te)) == (300, 100, 100)
    assert sorted(tr + va + te) == list(range(500))


# -- bag files -----------------------------------------------------------------

def test_bag_binary_roundtrip(tmp_path):
    bag = generate_bag(SyntheticSpec(grid=24, dim=5), 1)
    write_bag(tmp_path / "b.bin", bag)
    back = read_bag(tmp_path / "b.bin")
    np.testing.assert_array_equal(back.coords_raw, bag.coords_raw)
    np.testing.assert_array_equal(back.features, bag.features.astype(np.float32))
    np.testing.assert_array_equal(back.truth, bag.truth)
    assert back.label == bag.label


def test_bag_survival_label_roundtrip(tmp_path):
    bag = TileBag(np.ones((2, 3)), [(0, 0), (1, 0)], SurvivalLabel(12.5, 0))
    write_bag(tmp_path / "s.bin", bag)
    assert read_bag(tmp_path / "s.bin").label == SurvivalLabel(12.5, 0)


def test_bag_csv_roundtrip(tmp_path):
    bag = generate_bag(SyntheticSpec(grid=16, dim=4), 2)
    write_bag_csv(tmp_path / "b.csv", bag)
    back = read_bag(tmp_path / "b.csv")
    np.testing.assert_array_equal(back.coords_raw, bag.coords_raw)
    np.testing.assert_allclose(back.features, bag.features, rtol=1e-6)


def test_bag_csv_limits(tmp_path):
    with pytest.raises(FormatError):
        write_bag_csv(tmp_path / "w.csv", TileBag(np.ones((1, 65)), [(0, 0)]))
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_bag(tmp_path / "bad.csv")
    (tmp_path / "junk.bin").write_bytes(b"nope")
    with pytest.raises(FormatError):
        read_bag(tmp_path / "junk.bin")


def test_dataset_dir_roundtrip(tmp_path):
    bags = generate_dataset(SyntheticSpec(grid=16, dim=4), 5)
    save_dataset(tmp_path / "ds", bags, {"spec": {"task": "classification"}}, {"train": [0, 1, 2], "val": [3], "test": [4]})
    back, manifest = load_dataset(tmp_path / "ds")
    assert len(back) == 5 and manifest["splits"]["val"] == [3]
    assert [b.label for b in back] == [b.label for b in bags]


# -- training ------------------------------------------------------------------

def small_task(n=24, seed=0, dim=8):
    spec = SyntheticSpec(grid=24, dim=dim, snr=3.0, seed=seed, tissue_fraction=0.3)
    bags = generate_dataset(spec, n)
    tr, va, _ = split_indices(n, (0.5, 0.5, 0.0))
    return [bags[i] for i in tr], [bags[i] for i in va]


def toy_mc(**kw):
    return ModelConfig(**{"dim": 8, "chunk_len": 16, "d_state": 4, **kw})


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1e-3) == 1e-3
    assert cosine_lr(99, 100, 1e-3) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(99, 100, 1e-3, floor=1e-5) == pytest.approx(1e-5)
    vals = [cosine_lr(s, 50, 1.0) for s in range(50)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.5)
    with pytest.raises(ConfigError):
        TrainConfig(patience=0)
    with pytest.raises(ConfigError):
        TrainConfig(order="spiral")


def test_lr_zero_freezes_parameters():
    tr, va = small_task()
    p = init_model(toy_mc(), 0)
    before = {k: v.copy() for k, v in p.state_dict().items()}
    train(TrainConfig(lr=0.0, epochs=2, batch_size=4), toy_mc(), tr, va, params=p)
    for k, v in p.state_dict().items():
        assert v.tobytes() == before[k].tobytes(), k


def test_training_deterministic():
    tr, va = small_task()
    tc = TrainConfig(lr=3e-3, epochs=2, batch_size=4, seed=3)
    a = train(tc, toy_mc(), tr, va)
    b = train(tc, toy_mc(), tr, va)
    assert a.history == b.history
    for (k, x), (_, y) in zip(a.params.state_dict().items(), b.params.state_dict().items()):
        assert x.tobytes() == y.tobytes(), k


def test_single_bag_overfits():
    bag = generate_bag(SyntheticSpec(grid=16, dim=8, tissue_fraction=0.3), 0, label=1)
    p = init_model(toy_mc(), 1)
    from tilemil.core import Tape, backward
    from tilemil.pipeline.optim import AdamW
    opt = AdamW(p.parameters(), weight_decay=0.0)
    for step in range(200):
        with Tape() as tape:
            loss = cross_entropy(forward_detail(bag.features, p).outputs, 1)
        if float(loss.data) < 1e-2:
            break
        opt.zero_grad()
        backward(tape, loss)
        opt.step(1e-2)
    assert float(loss.data) < 1e-2


def test_early_stopping_restores_best():
    tr, va = small_task()
    res = train(TrainConfig(lr=1e-2, epochs=6, patience=1, batch_size=4), toy_mc(), tr, va)
    assert res.epochs_run <= 6
    best = max(h["val_auc"] for h in res.history)
    assert res.best_metric == best
    assert res.history[res.best_epoch]["val_auc"] == best


def test_train_requires_two_classes():
    tr, va = small_task()
    only = [b for b in tr if b.label == 0]
    with pytest.raises(ConfigError):
        train(TrainConfig(epochs=1), toy_mc(), only, va)


def test_survival_training_runs():
    spec = SyntheticSpec(task="survival", grid=24, dim=8, tissue_fraction=0.3)
    bags = generate_dataset(spec, 16)
    res = train(TrainConfig(epochs=2, batch_size=4), toy_mc(task="survival", num_classes=1), bags[:10], bags[10:])
    assert "val_c_index" in res.history[0]


def test_padding_does_not_change_metric():
    tr, va = small_task()
    p = init_model(toy_mc(), 2)
    from tilemil.pipeline.train import evaluate, order_bags
    orders = order_bags(va, "hilbert", 0)
    m1, outs1 = evaluate(p, va, orders, inf_batch=1)
    m2, outs2 = evaluate(p, va, orders, inf_batch=3)
    np.testing.assert_allclose(outs1, outs2, rtol=1e-5)


# -- ablation report and attention export --------------------------------------

def test_ablation_report_shape_and_determinism(tmp_path):
    tr, va = small_task(16)
    data = (tr, va, va)
    tc = TrainConfig(epochs=1, batch_size=4)
    rep = run_ablation("ordering", data, tc, toy_mc(), seeds=[0, 1])
    assert rep.variants == ["hilbert", "zorder", "rowmajor", "random"]
    assert len(rep.rows) == 8 and rep.metric_names == ["accuracy", "auc", "macro_f1"]
    again = run_ablation("ordering", data, tc, toy_mc(), seeds=[0, 1], variants=["hilbert"])
    assert [r["auc"] for r in again.rows] == [r["auc"] for r in rep.rows[:2]]
    rep.write_csv(tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "mode,variant,seed,accuracy,auc,macro_f1"
    assert len(lines) == 1 + 8 + 2 * 4


def test_ablation_five_seed_table():
    rows = [{"variant": v, "seed": s, "accuracy": 0.5, "auc": 0.5 + s / 10, "macro_f1": 0.4}
            for v in ("hilbert", "zorder", "rowmajor", "random") for s in range(5)]
    rep = AblationReport("ordering", rows)
    summary = rep.summary()
    assert len(summary) == 4 and all(r["n_seeds"] == 5 for r in summary)
    assert summary[0]["auc_mean"] == pytest.approx(0.7)
    assert "hilbert" in rep.format_table()


def test_ablation_rejects_unknown_variant():
    with pytest.raises(ConfigError):
        run_ablation("structure", ([], [], []), TrainConfig(), toy_mc(), variants=["cnn_only"])
    with pytest.raises(ConfigError):
        run_ablation("depth", ([], [], []), TrainConfig(), toy_mc())


def test_attention_single_tile():
    p = init_model(toy_mc(), 0)
    bag = TileBag(np.ones((1, 8)), [(4, 4)])
    np.testing.assert_array_equal(attention_scores(bag, p), [1.0])


@pytest.mark.parametrize("structure", ["full", "global_only", "reversed"])
def test_attention_sums_to_one(structure, tmp_path):
    p = init_model(toy_mc(structure=structure), 0)
    bag = generate_bag(SyntheticSpec(grid=24, dim=8), 0)
    scores = export_attention(bag, p, tmp_path / "att.csv")
    assert np.all(scores >= 0) and abs(scores.sum() - 1) < 1e-6
    lines = (tmp_path / "att.csv").read_text().splitlines()
    assert lines[0] == "x,y,score" and len(lines) == len(bag) + 1


def test_trained_attention_prefers_planted_tiles():
    # Qualitative: averaged over five seeds, planted tiles of positive bags
    # receive more attention per tile than background tiles. Single seeds may
    # not, since near-uniform pooling already separates this task.
    ratios = []
    for seed in range(5):
        bags = generate_dataset(SyntheticSpec(grid=32, dim=16, snr=3.0, seed=seed, tissue_fraction=0.3), 100)
        res = train(TrainConfig(epochs=15, batch_size=4, lr=3e-3, seed=seed),
                    toy_mc(dim=16), bags[:75], bags[75:])
        per_bag = []
        for bag in bags[75:]:
            if bag.label == 1:
                s = attention_scores(bag, res.params)
                per_bag.append(s[bag.truth].mean() / s[~bag.truth].mean())
        ratios.append(float(np.mean(per_bag)))
    assert np.mean(ratios) > 1.0, ratios
