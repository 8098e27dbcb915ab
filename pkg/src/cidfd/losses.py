"""Loss kernels for instance discrimination with feature decorrelation.

Every kernel is a differentiable torch function of the current-view features;
memory-bank rows and the background weights are treated as constants. All
softmaxes go through ``torch.logsumexp`` (row-max shifted), so large logits
never overflow.

``reduction="sum"`` returns the plain summed negative log-likelihood;
``"mean"`` divides by the number of terms and is what the trainer optimizes.
"""
import math

import numpy as np
import torch

from .core import MemoryBank, TemperatureSet, normalize


def _rows(bank) -> torch.Tensor:
    return bank.rows if isinstance(bank, MemoryBank) else torch.as_tensor(bank)


def _check_tau(name, tau):
    if not tau > 0:
        raise ValueError(f"{name} must be strictly positive, got {tau}")


def _check_dims(batch, rows):
    if batch.ndim != 2 or rows.ndim != 2 or batch.shape[1] != rows.shape[1]:
        raise ValueError(f"dimension mismatch: batch {tuple(batch.shape)} vs bank {tuple(rows.shape)}")


def _reduce(terms, reduction):
    if reduction == "sum":
        return terms.sum()
    if reduction == "mean":
        return terms.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def _nll(logits, targets, reduction):
    # -log softmax(logits)[i, targets[i]], summed or averaged over rows
    terms = torch.logsumexp(logits, dim=1) - logits.gather(1, targets.view(-1, 1)).squeeze(1)
    return _reduce(terms, reduction)


def _ids(ids, n, size):
    ids = torch.arange(n) if ids is None else torch.as_tensor(ids, dtype=torch.long)
    if ids.numel() != n:
        raise ValueError(f"{ids.numel()} ids for a batch of {n}")
    if n and (int(ids.min()) < 0 or int(ids.max()) >= size):
        raise IndexError(f"instance id out of range [0, {size})")
    return ids


def id_loss(batch: torch.Tensor, bank, tau: float, ids=None, reduction: str = "sum") -> torch.Tensor:
    """Instance discrimination over a memory bank.

    Row ``i`` of ``batch`` is classified against every bank row, the correct
    class being its own stored feature ``bank[ids[i]]``. ``ids`` defaults to
    ``0..n-1``.
    """
    _check_tau("tau", tau)
    rows = _rows(bank).to(batch.dtype)
    _check_dims(batch, rows)
    ids = _ids(ids, batch.shape[0], rows.shape[0])
    return _nll(batch @ rows.T / tau, ids, reduction)


def fd_loss(batch: torch.Tensor, tau_2: float, reduction: str = "sum") -> torch.Tensor:
    """Feature decorrelation on the transposed batch.

    The d columns of ``batch`` (each of length n) are L2-normalized and every
    column is classified against all d columns, which pushes feature
    dimensions toward mutual orthogonality.
    """
    _check_tau("tau_2", tau_2)
    if batch.ndim != 2 or batch.shape[1] < 1:
        raise ValueError("fd_loss expects an (n, d) batch with d >= 1")
    cols = normalize(batch.T)
    d = cols.shape[0]
    return _nll(cols @ cols.T / tau_2, torch.arange(d), reduction)


@torch.no_grad()
def weight_coefficients(w_batch: torch.Tensor, w_bank, tau_xb: float) -> torch.Tensor:
    """Background-similarity weights ``exp(w_i . wbar_j / tau_xb)`` of shape (n, K).

    Returned without gradient: the background branch is frozen while they are used.
    """
    _check_tau("tau_xb", tau_xb)
    rows = _rows(w_bank).to(w_batch.dtype)
    _check_dims(w_batch, rows)
    return torch.exp(w_batch.detach() @ rows.T / tau_xb)


def ci_loss(v_batch: torch.Tensor, v_bank, alpha: torch.Tensor, tau_x: float, ids=None,
            reduction: str = "sum") -> torch.Tensor:
    """Contrastive instance discrimination.

    Each negative's exponentiated similarity is scaled by ``alpha[i, j]``, so
    pairs whose backgrounds look alike repel harder. Implemented as instance
    discrimination on the shifted logits ``v_i . vbar_j / tau_x + log alpha_ij``;
    with ``alpha`` all ones it reduces exactly to :func:`id_loss`.
    """
    _check_tau("tau_x", tau_x)
    rows = _rows(v_bank).to(v_batch.dtype)
    _check_dims(v_batch, rows)
    alpha = torch.as_tensor(alpha).to(v_batch.dtype)
    if alpha.shape != (v_batch.shape[0], rows.shape[0]):
        raise ValueError(f"alpha has shape {tuple(alpha.shape)}, expected "
                         f"{(v_batch.shape[0], rows.shape[0])}")
    if not bool((alpha > 0).all()):
        raise ValueError("weight coefficients must be strictly positive")
    ids = _ids(ids, v_batch.shape[0], rows.shape[0])
    return _nll(v_batch @ rows.T / tau_x + torch.log(alpha.detach()), ids, reduction)


def bg_total_loss(z_batch, z_bank, temps: TemperatureSet, ids=None, reduction="sum"):
    """Background-branch objective. Returns (total, {"id": ..., "fd": ...})."""
    parts = {"id": id_loss(z_batch, z_bank, temps.tau_b, ids, reduction),
             "fd": fd_loss(z_batch, temps.tau_2, reduction)}
    return parts["id"] + parts["fd"], parts


def tg_total_loss(v_batch, v_bank, alpha, temps: TemperatureSet, ids=None, reduction="sum"):
    """Target-branch objective. Returns (total, {"ci": ..., "fd": ...})."""
    parts = {"ci": ci_loss(v_batch, v_bank, alpha, temps.tau_x, ids, reduction),
             "fd": fd_loss(v_batch, temps.tau_2, reduction)}
    return parts["ci"] + parts["fd"], parts


def value_and_grad(fn, x, *args, **kwargs) -> tuple[float, np.ndarray]:
    """Evaluate ``fn(x, ...)`` and its gradient with respect to ``x``.

    ``fn`` may return a scalar tensor or a ``(scalar, parts)`` tuple.
    """
    x = torch.as_tensor(x).detach().clone().requires_grad_(True)
    out = fn(x, *args, **kwargs)
    loss = out[0] if isinstance(out, tuple) else out
    (grad,) = torch.autograd.grad(loss, x)
    loss = loss.detach()
    return loss.item(), grad.numpy()


def idfd_limit_alpha(n: int, k: int, dtype=torch.float64) -> torch.Tensor:
    """Weights of the infinite-background-temperature limit (all ones)."""
    return torch.ones(n, k, dtype=dtype)


def alpha_bounds(tau_xb: float) -> tuple[float, float]:
    """Range of the weights for unit-norm inputs."""
    return math.exp(-1 / tau_xb), math.exp(1 / tau_xb)
