import dataclasses

import numpy as np
import pytest

from herofilter.checkpoint import load_checkpoint, save_checkpoint
from herofilter.errors import DegenerateError, FormatError, ParamError, ShapeError
from herofilter.mixer import cross_entropy, init_mixer, mixer_backward, mixer_forward
from herofilter.patcher import PatchSet
from herofilter.synth import SynthSpec, synth_graph
from herofilter.training import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    adam_step,
    build_patcher,
    evaluate,
    patch_inputs,
    ranked_vs_random_ablation,
    train,
)

from conftest import random_graph

FAST = dict(max_epochs=40, patience=10, hidden=16, hidden_f=16, layers=1, p=4)


@pytest.fixture(scope="module")
def easy_graph():
    return synth_graph(SynthSpec(n=120, num_classes=2, target_h=0.0, avg_degree=4,
                                 feature_dim=4, feature_noise=0.1, seed=3))


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = {"w": np.array([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_is_signed_lr(self):
        p = {"w": np.array([1.0, 1.0, 1.0])}
        adam_step(p, {"w": np.array([3.0, -0.5, 1e-3])}, AdamState(), lr=0.01)
        np.testing.assert_allclose(p["w"], [0.99, 1.01, 0.99], atol=1e-7)

    def test_two_steps_scalar_reference(self):
        b1, b2, eps, lr, wd = 0.9, 0.999, 1e-8, 0.05, 0.1
        w, m, v = 0.7, 0.0, 0.0
        gs = [0.3, -1.2]
        p = {"w": np.array([0.7])}
        st = AdamState()
        for t, g in enumerate(gs, 1):
            ge = g + wd * w
            m = b1 * m + (1 - b1) * ge
            v = b2 * v + (1 - b2) * ge * ge
            w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
            adam_step(p, {"w": np.array([g])}, st, lr=lr, wd=wd)
        assert p["w"][0] == pytest.approx(w, abs=1e-12)
        assert st.t == 2

    def test_zero_lr(self):
        p = {"w": np.array([0.5])}
        st = AdamState()
        for _ in range(3):
            adam_step(p, {"w": np.array([2.0])}, st, lr=0.0, wd=0.5)
        assert p["w"][0] == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), lr=0.1)


class TestEarlyStopping:
    def test_patience_one(self):
        es = EarlyStopping(1)
        assert not es.step(1.0, 1)
        assert es.step(2.0, 2)
        assert es.best_epoch == 1

    def test_improvement_resets(self):
        es = EarlyStopping(2)
        stops = [es.step(v, e) for e, v in enumerate([3.0, 2.0, 2.5, 1.0, 1.5, 1.2], 1)]
        assert stops == [False] * 5 + [True]
        assert es.best_epoch == 4

    def test_ties_do_not_improve(self):
        es = EarlyStopping(2)
        es.step(1.0, 1)
        es.step(1.0, 2)
        assert es.step(1.0, 3)


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(lr=0), dict(dropout=1.0), dict(max_epochs=0),
                                     dict(patience=600), dict(mode="slow"), dict(filter="notch"),
                                     dict(refresh_interval=-1), dict(p=0), dict(K=0)])
    def test_invalid(self, bad):
        with pytest.raises(ParamError):
            TrainConfig(**bad)

    def test_round_trip(self):
        c = TrainConfig(lr=0.02, mode="fast", p=5)
        assert TrainConfig.from_dict(c.to_dict()) == c

    def test_unknown_key(self):
        with pytest.raises(ParamError):
            TrainConfig.from_dict({"learning_rate": 0.1})

    def test_adaptive_flag(self):
        assert TrainConfig(mode="spectral", refresh_interval=5).adaptive
        assert not TrainConfig(mode="spectral").adaptive
        assert not TrainConfig(mode="spectral", refresh_interval=5, filter="lowpass").adaptive


class TestTrain:
    def test_separable_graph_is_solved(self, easy_graph):
        _, rep, _ = train(easy_graph, TrainConfig(mode="fast", residual=True, **FAST))
        assert rep.test_acc == 1.0

    def test_default_mixer_cannot_see_patch_mean(self, easy_graph):
        # the patch-axis layer norm removes each column's mean over the patch,
        # which is where the class lives when every patch is single-class
        ps = build_patcher(easy_graph, TrainConfig(mode="fast", p=4)).patches
        assert np.all(easy_graph.labels[ps.indices] == easy_graph.labels[:, None])
        x = patch_inputs(easy_graph, ps)
        m = init_mixer(4, 4, 2, layers=1, seed=0)
        a, _ = mixer_forward(x, m)
        b, _ = mixer_forward(x + 5.0 * np.eye(4)[(easy_graph.labels + 2)][:, None, :], m)
        np.testing.assert_allclose(a, b, atol=1e-6)

    @pytest.mark.parametrize("mode", ["static", "fast"])
    def test_deterministic(self, mode):
        g = random_graph(40, 0.15, 0, num_classes=3, d=4)
        cfg = TrainConfig(mode=mode, eigensolver="lapack", **FAST)
        _, a, pa = train(g, cfg)
        _, b, pb = train(g, cfg)
        assert a.val_loss == b.val_loss
        assert a.test_acc == b.test_acc
        np.testing.assert_array_equal(pa.indices, pb.indices)

    def test_report_consistency(self):
        g = random_graph(40, 0.15, 1, num_classes=3, d=4)
        cfg = TrainConfig(mode="fast", **FAST)
        model, rep, ps = train(g, cfg)
        assert rep.epochs_run <= cfg.max_epochs
        assert rep.best_epoch == 1 + int(np.argmin(rep.val_loss))
        loss, acc = evaluate(model, g, ps, "val")
        assert loss == rep.val_loss[rep.best_epoch - 1]
        assert acc == rep.val_acc[rep.best_epoch - 1]

    def test_zero_model_predicts_class_zero(self):
        g = random_graph(30, 0.2, 2, num_classes=3)
        ps = build_patcher(g, TrainConfig(mode="fast", p=3)).patches
        m = init_mixer(3, g.feature_dim, 3, seed=0)
        for v in m.params.values():
            v[...] = 0.0
        _, acc = evaluate(m, g, ps, "test")
        assert acc == np.mean(g.labels[g.splits["test"]] == 0)

    def test_evaluate_matches_cross_entropy(self):
        g = random_graph(30, 0.2, 3)
        ps = build_patcher(g, TrainConfig(mode="fast", p=3)).patches
        m = init_mixer(3, g.feature_dim, 2, seed=1)
        logits, _ = mixer_forward(patch_inputs(g, ps), m)
        loss, _ = evaluate(m, g, ps, "val")
        assert loss == cross_entropy(logits, g.labels, g.splits["val"])[0]

    def test_empty_split(self):
        g = random_graph(20, 0.2, 4)
        g.splits["val"] = np.array([], dtype=int)
        with pytest.raises(DegenerateError):
            train(g, TrainConfig(mode="fast", **FAST))

    def test_patch_too_large(self):
        with pytest.raises(ParamError):
            train(random_graph(5, 0.5, 0), TrainConfig(mode="fast", p=6, max_epochs=5, patience=2))

    def test_first_step_reduces_loss(self):
        g = random_graph(40, 0.15, 5, num_classes=3, d=4)
        ps = build_patcher(g, TrainConfig(mode="fast", p=4)).patches
        x = patch_inputs(g, ps)
        idx = g.splits["train"]
        failures = 0
        for seed in range(20):
            m = init_mixer(4, 4, 3, layers=1, hidden=16, hidden_f=16, dropout=0.0, seed=seed)
            logits, tape = mixer_forward(x, m, train_mode=True)
            before, dl = cross_entropy(logits, g.labels, idx)
            grads, _ = mixer_backward(tape, dl)
            adam_step(m.params, grads, AdamState(), lr=1e-3)
            after, _ = cross_entropy(mixer_forward(x, m)[0], g.labels, idx)
            failures += after >= before
        assert failures <= 2

    def test_adaptive_mode_learns_filter(self):
        g = random_graph(30, 0.2, 6, num_classes=2, d=3)
        cfg = TrainConfig(mode="spectral", refresh_interval=3, eigensolver="lapack",
                          max_epochs=8, patience=8, p=3, hidden=8, hidden_f=8, layers=1)
        model, rep, ps = train(g, cfg)
        assert model.soft_weights
        assert rep.epochs_run == 8
        # scores carry the filtered relevance, not the constant initial one
        assert np.all(np.isfinite(ps.scores))
        static = build_patcher(g, dataclasses.replace(cfg, refresh_interval=0))
        assert not np.allclose(ps.scores, static.patches.scores)

    @pytest.mark.parametrize("kind", ["lowpass", "band"])
    def test_fixed_filters(self, kind):
        g = random_graph(30, 0.2, 7)
        cfg = TrainConfig(mode="static", filter=kind, band_lo=0.0, band_hi=1.0,
                          eigensolver="lapack", **FAST)
        _, rep, ps = train(g, cfg)
        assert 0.0 <= rep.test_acc <= 1.0
        assert ps.indices.shape == (30, 4)


class TestCheckpoint:
    def test_reload_reproduces_test_accuracy(self, tmp_path):
        g = random_graph(40, 0.15, 8, num_classes=3, d=4)
        model, rep, ps = train(g, TrainConfig(mode="fast", **FAST))
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, ps, meta={"note": "x"})
        m2, ps2, header = load_checkpoint(path)
        assert header["meta"] == {"note": "x"}
        np.testing.assert_array_equal(ps2.indices, ps.indices)
        for k in model.params:
            np.testing.assert_array_equal(m2.params[k], model.params[k])
        assert evaluate(m2, g, ps2, "test") == (rep.test_loss, rep.test_acc)

    def test_soft_weights_survive(self, tmp_path):
        m = init_mixer(2, 3, 2, seed=0, soft_weights=True)
        ps = PatchSet(np.array([[0, 1], [1, 0]]), np.array([[0.3, 0.1], [0.2, 0.05]]), "spectral")
        save_checkpoint(tmp_path / "s.ckpt", m, ps)
        m2, ps2, _ = load_checkpoint(tmp_path / "s.ckpt")
        assert m2.soft_weights
        np.testing.assert_array_equal(ps2.scores, ps.scores)

    def test_without_patches(self, tmp_path):
        save_checkpoint(tmp_path / "n.ckpt", init_mixer(2, 3, 2, seed=0))
        _, ps, header = load_checkpoint(tmp_path / "n.ckpt")
        assert ps is None and header["patch_mode"] is None

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"NOTACKPT" + b"\0" * 16)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "bad")

    def test_truncated(self, tmp_path):
        save_checkpoint(tmp_path / "t.ckpt", init_mixer(2, 3, 2, seed=0))
        raw = (tmp_path / "t.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(raw[:-8])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "t.ckpt")


class TestAblation:
    def test_single_column_patches_are_order_free(self):
        g = random_graph(30, 0.2, 9)
        cfg = TrainConfig(mode="fast", **{**FAST, "p": 1})
        ranked, shuffled = ranked_vs_random_ablation(g, cfg, trials=2)
        assert ranked == shuffled

    def test_trials_validated(self):
        with pytest.raises(ParamError):
            ranked_vs_random_ablation(random_graph(10, 0.3, 0), TrainConfig(mode="fast"), trials=0)
