"""Unit-sphere features, memory banks and their on-disk format.

Feature batches are plain ``torch`` tensors of shape (n, d) with a companion
integer tensor of instance ids; only the memory bank carries state and gets a
class of its own.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

UNIT_TOL = 1e-6


class DegenerateInputError(ValueError):
    """A zero vector cannot be projected onto the unit sphere."""


def normalize(values, dim: int = -1) -> torch.Tensor:
    """L2-normalize along ``dim``. Zero vectors are an error, never a fallback."""
    x = torch.as_tensor(values)
    if not x.is_floating_point():
        x = x.to(torch.get_default_dtype())
    norms = torch.linalg.vector_norm(x, dim=dim, keepdim=True)
    if x.numel() == 0 or bool((norms == 0).any()):
        raise DegenerateInputError("cannot normalize a zero vector")
    return x / norms


def is_unit(rows: torch.Tensor, tol: float = UNIT_TOL) -> bool:
    norms = torch.linalg.vector_norm(rows.double(), dim=-1)
    return bool(((norms - 1).abs() <= tol).all())


def similarity_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Dot products between the rows of ``a`` (n, d) and of ``b`` (K, d)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a @ b.T


def check_ids(ids: torch.Tensor, size: int) -> None:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= size):
        raise IndexError(f"instance id out of range [0, {size})")
    if torch.unique(ids).numel() != ids.numel():
        raise ValueError("instance ids in a batch must be distinct")


class MemoryBank:
    """Per-instance store of unit-norm features, updated by moving average.

    ``update`` applies ``row <- normalize(momentum * row + (1 - momentum) * feature)``
    to the rows named by ``ids`` and leaves every other row untouched.
    """

    def __init__(self, rows: torch.Tensor, momentum: float = 0.5):
        if not 0.0 <= momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError("bank rows must be a non-empty (K, d) matrix")
        self.rows = normalize(rows)
        self.momentum = float(momentum)

    @classmethod
    def random(cls, size: int, dim: int, momentum: float = 0.5, seed: int = 0,
               dtype=torch.float32) -> "MemoryBank":
        """Rows drawn uniformly on the unit sphere (normalized Gaussians)."""
        gen = torch.Generator().manual_seed(seed)
        rows = torch.randn(size, dim, generator=gen, dtype=torch.float64)
        return cls(rows.to(dtype), momentum)

    @classmethod
    def restore(cls, rows: torch.Tensor, momentum: float = 0.5) -> "MemoryBank":
        """Rebuild a saved bank keeping its rows bit-for-bit (they must already be unit)."""
        if not is_unit(rows):
            raise ValueError("restored bank rows are not unit-norm")
        bank = cls(rows, momentum)
        bank.rows = rows
        return bank

    def __len__(self):
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @torch.no_grad()
    def update(self, ids: torch.Tensor, features: torch.Tensor) -> None:
        ids = torch.as_tensor(ids, dtype=torch.long)
        check_ids(ids, len(self))
        if features.shape != (ids.numel(), self.dim):
            raise ValueError(f"features of shape {tuple(features.shape)} do not match "
                             f"{ids.numel()} ids of dimension {self.dim}")
        if self.momentum == 1.0:
            return
        mixed = self.momentum * self.rows[ids] + (1 - self.momentum) * features.detach().to(self.rows.dtype)
        self.rows[ids] = normalize(mixed)

    def copy(self) -> "MemoryBank":
        return MemoryBank(self.rows.clone(), self.momentum)


def bank_update(bank: MemoryBank, ids, features) -> MemoryBank:
    """Functional form of :meth:`MemoryBank.update`; the input bank is not modified."""
    out = bank.copy()
    out.update(torch.as_tensor(ids), torch.as_tensor(features))
    return out


@dataclass(frozen=True)
class TemperatureSet:
    tau_b: float = 1.0
    tau_2: float = 2.0
    tau_x: float = 1.0
    tau_xb: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")


@dataclass
class TrainConfig:
    """Two-stage schedule and optimizer settings."""

    epochs_f: int = 30
    epochs_g: int = 60
    batch_size: int = 128
    d: int = 64
    bank_momentum: float = 0.5
    lr: float = 0.03
    sgd_momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    temps: TemperatureSet = field(default_factory=TemperatureSet)
    idfd_baseline: bool = False
    cache_bg_features: bool = False
    augment_policy: str = "crop_pad"
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("batch_size", "d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("epochs_f", "epochs_g", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.bank_momentum <= 1.0:
            raise ValueError("bank_momentum must lie in [0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def validate_for(self, dataset_size: int) -> None:
        if self.batch_size > dataset_size:
            raise ValueError(f"batch_size {self.batch_size} exceeds dataset size {dataset_size}")


# -- serialization ---------------------------------------------------------
# One ``<name>.bin`` of concatenated little-endian float32 arrays plus a
# ``<name>.json`` manifest listing each array's shape and element offset.

def save_arrays(path, arrays: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(path.with_suffix(".bin"), "wb") as fh:
        for name, arr in arrays.items():
            if isinstance(arr, torch.Tensor):
                arr = arr.detach().cpu().numpy()
            flat = np.ascontiguousarray(arr, dtype="<f4").ravel()
            fh.write(flat.tobytes())
            entries.append({"name": name, "shape": list(np.shape(arr)),
                            "dtype": str(np.asarray(arr).dtype), "offset": offset})
            offset += flat.size
    manifest = {"format": "float32-le", "arrays": entries, **(meta or {})}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path.with_suffix(".json")


def load_arrays(path) -> tuple[dict, dict]:
    """Inverse of :func:`save_arrays`; returns ({name: float32 array}, manifest)."""
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    flat = np.fromfile(path.with_suffix(".bin"), dtype="<f4")
    arrays = {}
    for entry in manifest["arrays"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        if start + size > flat.size:
            raise ValueError(f"{path}: array {entry['name']} runs past end of data")
        arrays[entry["name"]] = flat[start:start + size].reshape(entry["shape"])
    return arrays, manifest


def save_bank(path, bank: MemoryBank, seed: int | None = None) -> Path:
    return save_arrays(path, {"rows": bank.rows},
                       {"shape": list(bank.rows.shape), "d": bank.dim,
                        "momentum": bank.momentum, "seed": seed})


def load_bank(path) -> MemoryBank:
    arrays, manifest = load_arrays(path)
    return MemoryBank.restore(torch.from_numpy(arrays["rows"].copy()), manifest["momentum"])


def checksum(tensors) -> str:
    """SHA-256 over the raw bytes of an iterable of tensors (order-sensitive)."""
    h = hashlib.sha256()
    for t in tensors:
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
