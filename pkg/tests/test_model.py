import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homessl.loss import home_loss
from homessl.model import (Layer, MlpModel, NonFiniteActivation, StaleCache, backward, build_model,
                           checkpoint_bytes, forward, load_checkpoint, model_from_bytes, save_checkpoint)
from homessl.optim import SGD, Schedule, lr_at
from homessl.variants import build_plan
from oracles import rel_err


def small_model(seed=0):
    return build_model(6, (8, 5), proj_dim=4, seed=seed)


def param_fd(model, loss_fn, h=1e-6):
    out = []
    for p in model.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = loss_fn()
            p[idx] = old - h
            fm = loss_fn()
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


class TestForward:
    def test_zero_weights(self):
        m = small_model()
        for layer in m.layers:
            layer.weight[:] = 0
            layer.bias[:] = 0
        _, emb, _ = forward(m, np.ones((3, 6)))
        assert np.all(emb == 0)

    def test_identity_layer(self, rng):
        eye = Layer(np.eye(3), np.zeros(3), "identity")
        m = MlpModel([eye, Layer(np.eye(3), np.zeros(3), "identity")], 1)
        x = rng.normal(size=(4, 3))
        reps, emb, _ = forward(m, x)
        assert np.array_equal(reps, x) and np.array_equal(emb, x)

    def test_shapes(self, rng):
        m = build_model(32)
        reps, emb, _ = forward(m, rng.normal(size=(5, 32)))
        assert reps.shape == (5, 128) and emb.shape == (5, 64)
        assert [l.activation for l in m.layers] == ["relu", "relu", "relu", "relu", "identity"]

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            forward(small_model(), rng.normal(size=(3, 5)))

    def test_non_finite_reports_layer(self):
        m = small_model()
        m.layers[1].weight[:] = 1e308
        with pytest.raises(NonFiniteActivation) as err:
            forward(m, np.ones((2, 6)) * 1e10)
        assert err.value.layer in (0, 1)

    def test_bad_chain(self):
        with pytest.raises(ValueError):
            MlpModel([Layer(np.ones((2, 3)), np.zeros(3)), Layer(np.ones((4, 2)), np.zeros(2))], 1)


class TestBackward:
    def test_layer_gradients(self, rng):
        m = small_model(3)
        x = rng.normal(size=(7, 6))
        w = rng.normal(size=(7, 4))
        wr = rng.normal(size=(7, 5))

        def f():
            reps, emb, _ = forward(m, x)
            return float(np.sum(w * emb) + np.sum(wr * reps))

        _, _, cache = forward(m, x)
        assert rel_err(backward(m, cache, w, wr), param_fd(m, f)) <= 1e-5

    def test_through_home_loss(self, rng):
        m = build_model(6, (5,), proj_dim=4, seed=1)
        plan = build_plan("T2-O3-Self-All")
        xs = [rng.normal(size=(8, 6)) for _ in range(2)]

        def f():
            return home_loss([forward(m, x)[1] for x in xs], plan, need_grad=False).total

        fwd = [forward(m, x) for x in xs]
        lv = home_loss([e for _, e, _ in fwd], plan)
        grads = [a + b for a, b in zip(*(backward(m, c, g) for (_, _, c), g in zip(fwd, lv.gradient)))]
        assert rel_err(grads, param_fd(m, f)) <= 1e-5

    def test_zero_and_linearity(self, rng):
        m = small_model()
        _, _, cache = forward(m, rng.normal(size=(5, 6)))
        assert all(np.all(g == 0) for g in backward(m, cache, np.zeros((5, 4))))
        up = rng.normal(size=(5, 4))
        g1, g2 = backward(m, cache, up), backward(m, cache, 2 * up)
        assert all(np.allclose(2 * a, b, rtol=1e-15, atol=0) for a, b in zip(g1, g2))

    def test_stale_cache(self, rng):
        m = small_model()
        _, _, cache = forward(m, rng.normal(size=(5, 6)))
        m.version += 1
        with pytest.raises(StaleCache):
            backward(m, cache, np.ones((5, 4)))


class TestCheckpoint:
    def test_roundtrip_bytes(self, tmp_path):
        m = build_model(32, seed=9)
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, path)
        data = path.read_bytes()
        again = load_checkpoint(path)
        assert checkpoint_bytes(again) == data
        assert all(np.array_equal(a, b) for a, b in zip(m.parameters(), again.parameters()))
        assert again.n_encoder == 2 and [l.activation for l in again.layers] == [l.activation for l in m.layers]

    def test_header(self):
        data = checkpoint_bytes(small_model())
        assert data[:8] == b"HOMECKPT"
        assert int.from_bytes(data[8:12], "little") == 1

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            model_from_bytes(b"NOTACKPT" + bytes(40))
        with pytest.raises(ValueError):
            model_from_bytes(checkpoint_bytes(small_model()) + b"\0")


class TestSchedule:
    def test_published_endpoints(self):
        s = Schedule(base_lr=0.5, final_lr=0.002, warmup_epochs=10, total_epochs=800, steps_per_epoch=3)
        assert lr_at(0, s) == 0.0
        assert lr_at(s.warmup_steps, s) == pytest.approx(0.5, abs=1e-15)
        assert lr_at(s.last_step, s) == pytest.approx(0.002, abs=1e-15)

    def test_shape(self):
        s = Schedule(base_lr=0.05, final_lr=0.002, warmup_epochs=5, total_epochs=40, steps_per_epoch=7)
        lrs = [lr_at(i, s) for i in range(s.last_step + 1)]
        w = s.warmup_steps
        assert all(a <= b for a, b in zip(lrs[:w], lrs[1:w + 1]))
        assert all(a >= b for a, b in zip(lrs[w:], lrs[w + 1:]))
        left = s.base_lr * (w - 1e-9) / w
        assert abs(lrs[w] - left) <= 1e-9 and abs(lrs[w] - s.base_lr) <= 1e-12

    def test_negative_step(self):
        with pytest.raises(ValueError):
            lr_at(-1, Schedule())


class TestSGD:
    def test_zero_lr_keeps_params(self, rng):
        m = small_model()
        before = [p.copy() for p in m.parameters()]
        opt = SGD(m.parameters(), decay_mask=m.decay_mask())
        for _ in range(5):
            opt.step(m.parameters(), [rng.normal(size=p.shape) for p in m.parameters()], 0.0)
        assert all(np.array_equal(a, b) for a, b in zip(before, m.parameters()))

    @settings(max_examples=30, deadline=None)
    @given(lr=st.floats(1e-4, 1.0), wd=st.floats(0, 1e-2), seed=st.integers(0, 1000))
    def test_weight_decay_step(self, lr, wd, seed):
        m = small_model(seed)
        before = [p.copy() for p in m.parameters()]
        opt = SGD(m.parameters(), momentum=0.0, weight_decay=wd, decay_mask=m.decay_mask())
        opt.step(m.parameters(), [np.zeros_like(p) for p in m.parameters()], lr)
        for b, a, decay in zip(before, m.parameters(), m.decay_mask()):
            expected = b * (1 - lr * wd) if decay else b
            np.testing.assert_allclose(a, expected, rtol=1e-15, atol=1e-300)

    def test_momentum(self):
        p = [np.array([1.0])]
        opt = SGD(p, momentum=0.9, weight_decay=0.0)
        opt.step(p, [np.array([1.0])], 0.1)
        opt.step(p, [np.array([1.0])], 0.1)
        assert p[0][0] == pytest.approx(1.0 - 0.1 - 0.19, abs=1e-15)
