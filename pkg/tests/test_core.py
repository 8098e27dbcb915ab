import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cidfd.core import (
    DegenerateInputError,
    MemoryBank,
    TemperatureSet,
    TrainConfig,
    bank_update,
    is_unit,
    load_arrays,
    load_bank,
    normalize,
    save_arrays,
    save_bank,
    similarity_matrix,
)


@pytest.mark.parametrize("values, expected", [
    ((3.0, 4.0), (0.6, 0.8)),
    ((0.0, 1.0), (0.0, 1.0)),
    ((1.0, 1.0, 1.0, 1.0), (0.5, 0.5, 0.5, 0.5)),
])
def test_normalize_examples(values, expected):
    out = normalize(torch.tensor(values, dtype=torch.float64))
    np.testing.assert_allclose(out.numpy(), expected, atol=1e-12)


def test_normalize_zero_vector_raises():
    with pytest.raises(DegenerateInputError):
        normalize(torch.zeros(3))
    with pytest.raises(DegenerateInputError):
        normalize(torch.tensor([[1.0, 0.0], [0.0, 0.0]]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=16).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_normalize_idempotent(values):
    x = torch.tensor(values, dtype=torch.float64)
    once = normalize(x)
    assert abs(float(torch.linalg.vector_norm(once)) - 1) < 1e-12
    np.testing.assert_allclose(normalize(once).numpy(), once.numpy(), atol=1e-9)


def test_bank_update_full_replacement_and_noop():
    bank = MemoryBank.random(5, 3, momentum=0.0, seed=1, dtype=torch.float64)
    f = normalize(torch.tensor([[1.0, 2.0, 3.0]], dtype=torch.float64))
    out = bank_update(bank, [2], f)
    np.testing.assert_allclose(out.rows[2].numpy(), f[0].numpy(), atol=1e-12)

    still = MemoryBank(bank.rows.clone(), momentum=1.0)
    still.update(torch.tensor([2]), f)
    assert torch.equal(still.rows, bank.rows)


def test_bank_update_half_momentum():
    bank = MemoryBank(torch.tensor([[1.0, 0.0]], dtype=torch.float64), momentum=0.5)
    bank.update(torch.tensor([0]), torch.tensor([[0.0, 1.0]], dtype=torch.float64))
    np.testing.assert_allclose(bank.rows[0].numpy(), [0.70711, 0.70711], atol=1e-5)


def test_bank_update_errors():
    bank = MemoryBank.random(4, 2)
    with pytest.raises(IndexError):
        bank.update(torch.tensor([4]), torch.ones(1, 2))
    with pytest.raises(ValueError):
        bank.update(torch.tensor([0]), torch.ones(1, 3))
    with pytest.raises(ValueError):
        MemoryBank(torch.ones(2, 2), momentum=1.5)


def test_bank_update_is_functional():
    bank = MemoryBank.random(4, 2, seed=3)
    before = bank.rows.clone()
    bank_update(bank, [1], torch.tensor([[1.0, 0.0]]))
    assert torch.equal(bank.rows, before)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), momentum=st.floats(0.0, 1.0))
def test_bank_rows_stay_unit_and_untouched_rows_fixed(seed, momentum):
    rng = np.random.default_rng(seed)
    bank = MemoryBank.random(20, 4, momentum, seed)
    for _ in range(30):
        ids = rng.choice(20, size=rng.integers(1, 8), replace=False)
        before = bank.rows.clone()
        feats = normalize(torch.from_numpy(rng.normal(size=(len(ids), 4)).astype(np.float32)))
        bank.update(torch.from_numpy(ids), feats)
        untouched = np.setdiff1d(np.arange(20), ids)
        assert torch.equal(bank.rows[untouched], before[untouched])
        assert is_unit(bank.rows)


def test_random_bank_is_seeded():
    a = MemoryBank.random(10, 5, seed=7)
    b = MemoryBank.random(10, 5, seed=7)
    assert torch.equal(a.rows, b.rows)
    assert is_unit(a.rows)


def test_similarity_matrix_examples():
    a = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    b = torch.tensor([[1.0, 0.0], [-1.0, 0.0]])
    s = similarity_matrix(a, b)
    assert s[0, 0] == 1.0 and s[1, 0] == 0.0 and s[0, 1] == -1.0
    with pytest.raises(ValueError):
        similarity_matrix(a, torch.ones(2, 3))


def test_similarity_matrix_unit_diagonal():
    x = normalize(torch.randn(12, 6, dtype=torch.float64))
    s = similarity_matrix(x, x)
    np.testing.assert_allclose(torch.diagonal(s).numpy(), 1.0, atol=1e-6)
    assert float(s.abs().max()) <= 1 + 1e-6


def test_temperatures_must_be_positive():
    TemperatureSet(1, 2, 1, 1e9)
    with pytest.raises(ValueError):
        TemperatureSet(tau_xb=0.0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(bank_momentum=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=64).validate_for(10)


def test_array_serialization_roundtrip(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    manifest_path = save_arrays(tmp_path / "ckpt", arrays, {"seed": 3})
    loaded, manifest = load_arrays(tmp_path / "ckpt")
    assert manifest["seed"] == 3
    for k in arrays:
        np.testing.assert_array_equal(loaded[k], arrays[k])
    raw = (tmp_path / "ckpt.bin").read_bytes()
    # little-endian float32 layout: 1.0 is 00 00 80 3f
    assert raw[4:8] == bytes([0, 0, 0x80, 0x3F])
    assert json.loads(manifest_path.read_text())["arrays"][1]["offset"] == 6


def test_bank_serialization_roundtrip(tmp_path):
    bank = MemoryBank.random(7, 4, momentum=0.3, seed=2)
    save_bank(tmp_path / "bank", bank, seed=2)
    manifest = json.loads((tmp_path / "bank.json").read_text())
    assert manifest["shape"] == [7, 4] and manifest["d"] == 4
    assert manifest["momentum"] == 0.3 and manifest["seed"] == 2
    loaded = load_bank(tmp_path / "bank")
    assert loaded.momentum == 0.3
    np.testing.assert_allclose(loaded.rows.numpy(), bank.rows.numpy(), atol=1e-7)
