import numpy as np
import pytest

from homessl.data import DataParams, generate
from homessl.loss import LossConfig
from homessl.trainer import DivergenceError, TrainConfig, prepare, train, train_step


def tiny(**kw):
    base = dict(encoder_widths=(32,), proj_dim=8, batch_size=64, epochs=3, warmup_epochs=1,
                data=DataParams(n_samples=256, seed=1), seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_lr_keeps_parameters():
    state = train(tiny(base_lr=0.0, final_lr=0.0))
    assert state.step == 3 * 3
    assert all(np.array_equal(a, b) for a, b in zip(state.model.parameters(), state.initial_model.parameters()))


def test_metric_stream_is_deterministic():
    a, b = [], []
    train(tiny(variant="T2-O3-Self-One"), sink=a.append)
    train(tiny(variant="T2-O3-Self-One"), sink=b.append)
    assert a == b
    assert [r["iteration"] for r in a] == list(range(9))
    assert set(a[0]) == {"iteration", "epoch", "lr", "loss_total", "loss_invariance", "loss_redundancy_per_view"}


def test_seed_changes_stream():
    a, b = [], []
    train(tiny(), sink=a.append)
    train(tiny(seed=2), sink=b.append)
    assert a != b


def test_timing_goes_to_side_channel():
    timings = []
    train(tiny(epochs=1), timing_sink=timings.append)
    assert len(timings) == 3 and all(t["wall_ms"] >= 0 for t in timings)


@pytest.mark.parametrize("variant", ["T2-O3-Self-All", "BarlowTwinsCross", "T3-O3-Cross"])
def test_loss_decreases_by_epoch_50(variant):
    state = train(tiny(variant=variant, epochs=50, warmup_epochs=5, base_lr=0.05))
    assert state.epoch_losses[49] < state.epoch_losses[0]


def test_threads_match_sequential():
    a, b = [], []
    train(tiny(), sink=a.append)
    train(tiny(loss=LossConfig(threads=4)), sink=b.append)
    for ra, rb in zip(a, b):
        assert abs(ra["loss_total"] - rb["loss_total"]) <= 1e-10


def test_divergence_detected():
    state = prepare(tiny())
    state.model.layers[0].weight[:] = np.nan
    with pytest.raises(DivergenceError, match="layer 0"):
        train_step(state, state.dataset.samples[:64], 1)


def test_divergence_on_huge_lr():
    with pytest.raises(DivergenceError):
        train(tiny(base_lr=1e6, final_lr=1e6, epochs=20))


def test_redundancy_per_view_reported():
    rec = []
    train(tiny(epochs=1), sink=rec.append)
    assert all(len(r["loss_redundancy_per_view"]) == 2 for r in rec)
    assert all(r["loss_total"] >= 0 for r in rec)


def test_invalid_config():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_epochs=300)


def test_external_dataset():
    ds = generate(DataParams(n_samples=128, dim=8, seed=3))
    state = train(tiny(epochs=1), dataset=ds)
    assert state.model.input_dim == 8
