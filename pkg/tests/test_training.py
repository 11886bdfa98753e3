import logging
import math

import numpy as np
import pytest

from aquashift.errors import ContractError, DatasetError
from aquashift.imaging import write_image
from aquashift.network import ConvLayer, NetworkParams, init_params, load_checkpoint
from aquashift.training import (
    DEFAULT_LR,
    AdamState,
    TrainConfig,
    adam_step,
    batch_for_step,
    checkpoint_paths,
    loss_and_grads,
    pair_dataset,
    train,
)

from conftest import TINY_PLAN, synthetic_pair

LOSS_KEYS = ("step", "pixel", "uicm", "edge", "total")


def scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return theta


def const_params(value: float, plan=TINY_PLAN) -> NetworkParams:
    p = init_params(0, plan)
    return NetworkParams([ConvLayer(np.full_like(l.kernels, value), np.full_like(l.biases, value)) for l in p.layers], plan)


class TestAdam:
    def test_defaults(self):
        s = AdamState.fresh(init_params(0, TINY_PLAN))
        assert (s.lr, s.beta1, s.beta2, s.eps, s.step) == (0.0000125, 0.9, 0.999, 1e-8, 0)

    def test_first_step_magnitude(self):
        p = init_params(0, TINY_PLAN)
        before = p.copy()
        s = AdamState.fresh(p, lr=1e-3)
        adam_step(s, p, const_params(1.0))
        for a, b in zip(p.arrays(), before.arrays()):
            np.testing.assert_allclose(a - b, -1e-3 / (1 + 1e-8), rtol=1e-12)
        assert s.step == 1

    def test_zero_gradient_noop(self):
        p = init_params(0, TINY_PLAN)
        before = p.copy()
        adam_step(AdamState.fresh(p), p, const_params(0.0))
        assert p.bit_equal(before)

    def test_two_steps_scalar_oracle(self):
        p = const_params(0.3)
        s = AdamState.fresh(p, lr=0.01)
        for g in (0.7, -0.2):
            adam_step(s, p, const_params(g))
        expected = scalar_adam(0.3, [0.7, -0.2], 0.01)
        for a in p.arrays():
            np.testing.assert_allclose(a, expected, rtol=0, atol=1e-12)
        assert all(np.all(v >= 0) for v in s.v)

    def test_layout_mismatch(self):
        p = init_params(0, TINY_PLAN)
        with pytest.raises(ContractError):
            adam_step(AdamState.fresh(p), p, init_params(0, (("conv", 3, 6),)))

    def test_state_roundtrip(self, tmp_path):
        p = init_params(0, TINY_PLAN)
        s = AdamState.fresh(p, lr=1e-3)
        adam_step(s, p, const_params(0.5))
        s.save(tmp_path / "s.adam")
        back = AdamState.load(tmp_path / "s.adam")
        assert back.step == 1 and back.lr == 1e-3
        assert all(a.tobytes() == b.tobytes() for a, b in zip(s.m + s.v, back.m + back.v))


class TestPairDataset:
    def _write(self, d, names, size=(8, 8)):
        d.mkdir(exist_ok=True)
        for n in names:
            write_image(d / n, np.full(size + (3,), 0.5))

    def test_matching_order(self, tmp_path):
        self._write(tmp_path / "in", ["b.png", "a.png"])
        self._write(tmp_path / "gt", ["a.png", "b.png"])
        ds = pair_dataset(tmp_path / "in", tmp_path / "gt")
        assert [(a.name, b.name) for a, b in ds.pairs] == [("a.png", "a.png"), ("b.png", "b.png")]

    def test_unmatched_warns(self, tmp_path, caplog):
        self._write(tmp_path / "in", ["a.png", "c.png"])
        self._write(tmp_path / "gt", ["a.png"])
        with caplog.at_level(logging.WARNING):
            ds = pair_dataset(tmp_path / "in", tmp_path / "gt")
        assert len(ds) == 1 and "c.png" in caplog.text
        assert [p.name for p in ds.unmatched] == ["c.png"]

    def test_size_mismatch_excluded(self, tmp_path, caplog):
        self._write(tmp_path / "in", ["a.png", "b.png"])
        self._write(tmp_path / "gt", ["a.png"])
        self._write(tmp_path / "gt", ["b.png"], size=(9, 8))
        with caplog.at_level(logging.WARNING):
            ds = pair_dataset(tmp_path / "in", tmp_path / "gt")
        assert [a.name for a, _ in ds.pairs] == ["a.png"]
        assert "size mismatch" in caplog.text

    def test_no_matches(self, tmp_path):
        self._write(tmp_path / "in", ["a.png"])
        self._write(tmp_path / "gt", ["z.png"])
        with pytest.raises(DatasetError):
            pair_dataset(tmp_path / "in", tmp_path / "gt")

    def test_undecodable_pairs_skipped(self, tmp_path, caplog):
        self._write(tmp_path / "in", ["a.png"])
        self._write(tmp_path / "gt", ["a.png"])
        (tmp_path / "in" / "bad.png").write_bytes(b"junk")
        (tmp_path / "gt" / "bad.png").write_bytes(b"junk")
        ds = pair_dataset(tmp_path / "in", tmp_path / "gt")
        assert len(ds) == 2
        cfg = TrainConfig(epochs=1, seed=0)
        with caplog.at_level(logging.WARNING):
            res = train(cfg, ds, init_params(0, TINY_PLAN))
        assert len(res.history) == 1  # the bad pair is dropped at load time
        assert "skipping pair bad" in caplog.text

    def test_all_bad(self, tmp_path):
        for d in ("in", "gt"):
            (tmp_path / d).mkdir()
            (tmp_path / d / "x.png").write_bytes(b"junk")
        ds = pair_dataset(tmp_path / "in", tmp_path / "gt")
        with pytest.raises(DatasetError):
            train(TrainConfig(), ds, init_params(0, TINY_PLAN))


class TestTrain:
    def test_config_defaults(self):
        c = TrainConfig()
        assert c.lr == DEFAULT_LR == 0.0000125
        assert c.lambdas == (1.0, 0.001, 0.0001)

    def test_zero_epochs(self):
        p = init_params(4, TINY_PLAN)
        res = train(TrainConfig(epochs=0), [synthetic_pair(8)], p)
        assert res.params.bit_equal(p) and res.history == []

    def test_deterministic(self):
        pairs = [synthetic_pair(12, s) for s in range(3)]
        cfg = TrainConfig(epochs=2, batch_size=2, lr=1e-3, seed=9, patch_size=8)
        a = train(cfg, pairs, init_params(1, TINY_PLAN))
        b = train(cfg, pairs, init_params(1, TINY_PLAN))
        assert [tuple(r[k] for k in LOSS_KEYS) for r in a.history] == [tuple(r[k] for k in LOSS_KEYS) for r in b.history]
        assert a.params.bit_equal(b.params)
        assert len(a.history) == 4

    def test_batches_cover_epoch(self):
        cfg = TrainConfig(batch_size=2, seed=3)
        seen = sorted(i for s in range(3) for i in batch_for_step(s, 5, cfg))
        assert seen == [0, 1, 2, 3, 4]

    def test_mixed_sizes_without_patch(self):
        pairs = [synthetic_pair(8), synthetic_pair(10)]
        res = train(TrainConfig(epochs=1, batch_size=2, lr=1e-3), pairs, init_params(0, TINY_PLAN))
        assert len(res.history) == 1

    def test_one_step_decreases_total(self):
        img, gt = synthetic_pair(16, seed=2)
        p = init_params(0)
        before, _ = loss_and_grads(p, [(img, gt)])
        res = train(TrainConfig(epochs=1, lr=1e-6), [(img, gt)], p)
        after, _ = loss_and_grads(res.params, [(img, gt)])
        assert res.history[0]["total"] == before.total
        assert after.total < before.total

    def test_resume_is_bit_identical(self, tmp_path):
        pairs = [synthetic_pair(10, s) for s in range(2)]
        cfg = TrainConfig(epochs=3, lr=1e-3, seed=5, checkpoint_every=2)
        full = train(cfg, pairs, init_params(2, TINY_PLAN), checkpoint_out=tmp_path / "w")
        ckpt, adam = checkpoint_paths(tmp_path / "w", 2)
        resumed = train(cfg, pairs, load_checkpoint(ckpt, TINY_PLAN), state=AdamState.load(adam))
        tail = [tuple(r[k] for k in LOSS_KEYS) for r in full.history[2:]]
        assert [tuple(r[k] for k in LOSS_KEYS) for r in resumed.history] == tail
        assert resumed.params.bit_equal(full.params)

    def test_identity_on_every_step(self):
        res = train(TrainConfig(epochs=3, lr=1e-3), [synthetic_pair(8)], init_params(0, TINY_PLAN))
        for r in res.history:
            assert r["total"] == 1.0 * r["pixel"] - 0.001 * r["uicm"] + 0.0001 * r["edge"]
