"""Metrics, memory pool, training phases, transfer freezing, and rollout."""

import numpy as np
import pytest

from waveop.continual import (RolloutSpec, SemanticMemory, TrainConfig,
                              accuracy_metric, activate_task,
                              combinatorial_transfer, cosine_similarity,
                              one_step_accuracy, relative_l2, rollout,
                              trainable_parameter_count, train_foundation)
from waveop.dataset import TaskDataset, build_dataset
from waveop.grf import GrfSpec
from waveop.model import GatedWaveletOperator, ModelConfig
from waveop.solvers import PdeSpec


class TestMetrics:
    def test_relative_l2_basics(self):
        u = np.array([3.0, 4.0])
        assert relative_l2(u, u) == 0.0
        assert abs(relative_l2(u, np.array([3.0, 0.0])) - 0.8) < 1e-14
        assert relative_l2(u, np.zeros(2)) == 1.0

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            relative_l2(np.zeros(3), np.ones(3))

    def test_accuracy_complement(self):
        u = np.array([3.0, 4.0])
        assert accuracy_metric(u, u) == 1.0
        assert abs(accuracy_metric(u, np.array([3.0, 0.0])) - 0.2) < 1e-14
        assert abs(accuracy_metric(u, 2 * u)) < 1e-14
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(7), rng.standard_normal(7)
        assert abs(accuracy_metric(a, b) + relative_l2(a, b) - 1.0) < 1e-15

    def test_cosine_similarity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 5))
        assert abs(cosine_similarity(x, x) - 1.0) < 1e-12
        assert abs(cosine_similarity(x, -x) + 1.0) < 1e-12
        a = np.array([1.0, 0.0, 2.0, 0.0])
        b = np.array([0.0, 3.0, 0.0, 4.0])
        assert cosine_similarity(a, b) == 0.0
        with pytest.raises(ValueError):
            cosine_similarity(np.zeros(3), np.ones(3))


def identity_task(n=64, grid=64, label=0, seed=0):
    """Synthetic task whose one-step target equals the input frame."""
    rng = np.random.default_rng(seed)
    fields = rng.standard_normal((n, grid)).astype(np.float32)
    smooth = np.fft.irfft(np.fft.rfft(fields, axis=1)[:, :6], n=grid, axis=1)
    smooth = (smooth / np.abs(smooth).max()).astype(np.float32)
    inputs = smooth[..., None]                      # window of one frame
    outputs = smooth[:, None, :]                    # target equals the input
    pde = PdeSpec("heat", grid=grid, alpha=1e-3, dt=1e-3, record_every=1e-2,
                  frames=2)
    grf = GrfSpec(kind="rbf", grid=grid)
    return TaskDataset(label, "heat", np.arange(grid, dtype=np.float32) / grid,
                       inputs, outputs, pde, grf, seed,
                       np.arange(n, dtype=np.uint64))


def tiny_model(width=16, experts=3, blocks=2, grid=64, in_channels=1, seed=0):
    cfg = ModelConfig(rank=1, grid=(grid,), in_channels=in_channels, blocks=blocks,
                      experts=experts, width=width, levels=4,
                      bases=tuple(range(1, experts + 1)), max_tasks=6,
                      gate_hidden=(64, 32))
    return GatedWaveletOperator(cfg, seed=seed)


class TestFoundationTraining:
    def test_identity_task_reaches_low_error(self):
        task = identity_task(n=100)
        model = tiny_model()
        cfg = TrainConfig(epochs=50, batch=10, lr=1e-3, seed=0)
        losses = train_foundation(model, [task], cfg)
        assert losses[-1] < 1e-2, f"final loss {losses[-1]:.4f}"
        # 10-epoch moving average non-increasing up to late-stage noise
        ma = np.convolve(losses, np.ones(10) / 10, mode="valid")
        assert np.all(np.diff(ma) <= 1e-3)

    def test_zero_epochs_returns_parameters_unchanged(self):
        task = identity_task(n=8)
        model = tiny_model()
        before = {n: p.data.copy() for n, p in model.named_parameters()}
        train_foundation(model, [task], TrainConfig(epochs=0, seed=0))
        for n, p in model.named_parameters():
            assert np.array_equal(p.data, before[n]), n

    def test_seed_determinism(self):
        def run():
            model = tiny_model(seed=3)
            train_foundation(model, [identity_task(n=16)],
                             TrainConfig(epochs=3, batch=8, seed=5))
            return np.concatenate([p.data.ravel() for _, p in model.named_parameters()])

        assert np.array_equal(run(), run())

    def test_memory_populated_for_every_label(self):
        tasks = [identity_task(n=8, label=0), identity_task(n=8, label=1, seed=9)]
        model = tiny_model()
        memory = SemanticMemory()
        train_foundation(model, tasks, TrainConfig(epochs=1, batch=8, seed=0),
                         memory=memory)
        assert set(memory.labels()) == {0, 1}

    def test_empty_task_list_rejected(self):
        with pytest.raises(ValueError):
            train_foundation(tiny_model(), [], TrainConfig(epochs=1))


class TestTransfer:
    def _trained(self):
        model = tiny_model()
        memory = SemanticMemory()
        train_foundation(model, [identity_task(n=16, label=0)],
                         TrainConfig(epochs=2, batch=8, seed=0), memory=memory)
        return model, memory

    def test_backbone_bit_identical(self):
        model, memory = self._trained()
        before = {n: p.data.tobytes() for n, p in model.theta_parameters()}
        new_task = identity_task(n=16, label=1, seed=4)
        combinatorial_transfer(model, memory, new_task,
                               TrainConfig(epochs=2, batch=8, seed=1, phase="transfer"))
        for n, p in model.theta_parameters():
            assert p.data.tobytes() == before[n], n

    def test_zero_forgetting_bit_exact(self):
        model, memory = self._trained()
        probe = np.random.default_rng(5).standard_normal((1, 64))
        pred_before = model.predict_frame(probe, 0)
        combinatorial_transfer(model, memory, identity_task(n=16, label=1, seed=4),
                               TrainConfig(epochs=2, batch=8, seed=1, phase="transfer"))
        activate_task(model, memory, 0)
        pred_after = model.predict_frame(probe, 0)
        assert pred_after.tobytes() == pred_before.tobytes()

    def test_duplicate_label_needs_overwrite(self):
        model, memory = self._trained()
        with pytest.raises(KeyError):
            combinatorial_transfer(model, memory, identity_task(n=8, label=0),
                                   TrainConfig(epochs=1, batch=8, phase="transfer"))
        combinatorial_transfer(model, memory, identity_task(n=8, label=0),
                               TrainConfig(epochs=1, batch=8, phase="transfer"),
                               overwrite=True)

    def test_transfer_trains_fewer_parameters(self):
        model = tiny_model()
        n_transfer = trainable_parameter_count(model, "transfer")
        n_foundation = trainable_parameter_count(model, "foundation")
        assert n_transfer < n_foundation

    def test_paper_scale_transfer_ratio_below_half(self):
        cfg = ModelConfig(rank=1, grid=(256,), in_channels=10, blocks=4,
                          experts=10, width=64, levels=4, max_tasks=6)
        model = GatedWaveletOperator(cfg, seed=0)
        ratio = (trainable_parameter_count(model, "transfer") /
                 trainable_parameter_count(model, "foundation"))
        assert ratio < 0.5, f"transfer ratio {ratio:.3f}"


class TestSemanticMemory:
    def test_snapshots_immutable(self):
        model = tiny_model()
        memory = SemanticMemory()
        memory.store_from_model(0, model)
        snap = memory.get(0)
        name = next(iter(snap))
        with pytest.raises((ValueError, RuntimeError)):
            snap[name][...] = 0.0

    def test_activation_idempotent(self):
        model = tiny_model()
        memory = SemanticMemory()
        memory.store_from_model(0, model)
        probe = np.random.default_rng(6).standard_normal((1, 64))
        activate_task(model, memory, 0)
        a = model.predict_frame(probe, 0)
        activate_task(model, memory, 0)
        b = model.predict_frame(probe, 0)
        assert a.tobytes() == b.tobytes()

    def test_alternating_activation_restores_exactly(self):
        model = tiny_model()
        memory = SemanticMemory()
        memory.store_from_model(0, model)
        for _, p in model.gate_parameters():
            p.data = p.data + 1.0
        memory.store_from_model(1, model)
        probe = np.random.default_rng(7).standard_normal((1, 64))
        activate_task(model, memory, 0)
        a0 = model.predict_frame(probe, 0)
        activate_task(model, memory, 1)
        activate_task(model, memory, 0)
        assert model.predict_frame(probe, 0).tobytes() == a0.tobytes()

    def test_unknown_label_leaves_model_unchanged(self):
        model = tiny_model()
        memory = SemanticMemory()
        before = {n: p.data.copy() for n, p in model.gate_parameters()}
        with pytest.raises(KeyError):
            activate_task(model, memory, 42)
        for n, p in model.gate_parameters():
            assert np.array_equal(p.data, before[n]), n


class _ShiftStub:
    """Predicts the frame as the last frame rolled one grid point."""

    def predict_frame(self, window, label):
        return np.roll(window[-1], 1)


class _HoldStub:
    def predict_frame(self, window, label):
        return window[-1].copy()


class TestRollout:
    def test_shift_stub_reproduces_sequence(self):
        rng = np.random.default_rng(8)
        base = rng.standard_normal(32)
        window = np.stack([np.roll(base, k) for k in range(4)])
        spec = RolloutSpec(window=4, horizon=6)
        pred = rollout(_ShiftStub(), 0, window, spec)
        expect = np.stack([np.roll(base, 4 + k) for k in range(6)])
        assert np.array_equal(pred, expect)

    def test_hold_stub_constant_continuation(self):
        window = np.random.default_rng(9).standard_normal((3, 16))
        pred = rollout(_HoldStub(), 0, window, RolloutSpec(window=3, horizon=5))
        assert np.all(pred == window[-1])

    def test_output_shape_contract(self):
        window = np.zeros((10, 8, 8))
        pred = rollout(_HoldStub(), 0, window, RolloutSpec(window=10, horizon=7))
        assert pred.shape == (7, 8, 8)

    def test_window_length_validated(self):
        with pytest.raises(ValueError):
            rollout(_HoldStub(), 0, np.zeros((3, 8)), RolloutSpec(window=5, horizon=2))


class TestEvaluation:
    def test_one_step_accuracy_range(self):
        pde = PdeSpec("heat", grid=32, alpha=1e-3, dt=1e-3, record_every=1e-2,
                      frames=12)
        grf = GrfSpec(kind="rbf", grid=32, sigma=0.1, length=0.2)
        ds = build_dataset(pde, grf, 4, base_seed=0, window=10)
        model = tiny_model(grid=32, in_channels=10)
        accs = one_step_accuracy(model, ds)
        assert accs.shape == (4,)
        assert np.all(accs <= 1.0)
