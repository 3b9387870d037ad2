"""Differentiable tensor helpers and a functional Adam.

All real-valued quantities are float64 torch tensors taking part in
torch's dynamically built reverse-mode tape. This module adds the
contracts the rest of the package relies on: scalar-only backward,
gradients of gradients for the penalties, a finite-difference oracle and
an Adam step that refuses NaN gradients.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import torch

from tridepth.errors import ContractError, NonFiniteError

DiffTensor = torch.Tensor
DTYPE = torch.float64


def tensor(values, *, requires_grad: bool = False) -> DiffTensor:
    """float64 tensor, optionally a differentiable leaf."""
    return torch.as_tensor(values, dtype=DTYPE).clone().requires_grad_(requires_grad)


def backward(loss: DiffTensor, *, retain_graph: bool = True) -> None:
    """Populate ``.grad`` of every reachable leaf with d(loss)/d(leaf).

    Repeated calls accumulate into existing grads. The graph is retained
    by default so accumulation works without rebuilding it.
    """
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any differentiable leaf")
    loss.reshape(()).backward(retain_graph=retain_graph)


def grad(
    output: DiffTensor,
    inputs: DiffTensor | Sequence[DiffTensor],
    *,
    create_graph: bool = False,
) -> list[DiffTensor]:
    """Gradients of a scalar ``output`` w.r.t. ``inputs``; unused inputs get zeros.

    With ``create_graph=True`` the result is itself differentiable, which
    is what the R1 and camera gradient penalties need.
    """
    if output.numel() != 1:
        raise ContractError(f"grad needs a scalar output, got shape {tuple(output.shape)}")
    inputs = [inputs] if isinstance(inputs, torch.Tensor) else list(inputs)
    if not output.requires_grad:
        return [torch.zeros_like(x) for x in inputs]
    grads = torch.autograd.grad(
        output.reshape(()), inputs, create_graph=create_graph, allow_unused=True,
    )
    return [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]


def finite_diff_check(
    fn: Callable[[DiffTensor], DiffTensor],
    point: DiffTensor,
    step: float = 1e-4,
) -> float:
    """Max relative error between autograd and central differences.

    ``fn`` maps a 1-D parameter vector to a scalar. The error per
    coordinate is |analytic - fd| / (|fd| + 1e-8).
    """
    x = point.detach().to(DTYPE).reshape(-1).clone().requires_grad_(True)
    value = fn(x)
    if not torch.isfinite(value).all():
        raise NonFiniteError("fn is not finite at the base point")
    (analytic,) = grad(value, x)

    worst = 0.0
    base = x.detach()
    # fn may differentiate internally (penalties), so autograd stays on here.
    for i in range(base.numel()):
        shifted = base.clone()
        shifted[i] += step
        f_plus = float(fn(shifted))
        shifted[i] -= 2 * step
        f_minus = float(fn(shifted))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NonFiniteError(f"fn is not finite around coordinate {i}")
        fd = (f_plus - f_minus) / (2 * step)
        err = abs(float(analytic[i]) - fd) / (abs(fd) + 1e-8)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Moments and hyperparameters of one Adam optimizer."""

    m: list[torch.Tensor]
    v: list[torch.Tensor]
    t: int = 0
    lr: float = 2e-3
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def for_params(
        cls,
        params: Sequence[torch.Tensor],
        lr: float = 2e-3,
        beta1: float = 0.0,
        beta2: float = 0.99,
        eps: float = 1e-8,
    ) -> AdamState:
        return cls(
            m=[torch.zeros_like(p, dtype=DTYPE) for p in params],
            v=[torch.zeros_like(p, dtype=DTYPE) for p in params],
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor | None],
    state: AdamState,
) -> tuple[list[torch.Tensor], AdamState]:
    """One bias-corrected Adam update.

    Parameters are updated in place (they are usually ``nn.Parameter``
    leaves) and returned together with the new state. A ``None`` grad
    counts as zero. Any NaN/inf grad aborts before anything is written.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractError("params, grads and moments differ in length")
    dense: list[torch.Tensor] = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = torch.zeros_like(p) if g is None else g.detach()
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ContractError(f"shape mismatch at parameter {i}: {tuple(g.shape)} vs {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient at parameter {i}")
        dense.append(g)

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    new_m, new_v = [], []
    with torch.no_grad():
        for p, g, m, v in zip(params, dense, state.m, state.v):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            p -= state.lr * (m / bias1) / ((v / bias2).sqrt() + state.eps)
            new_m.append(m)
            new_v.append(v)
    new_state = AdamState(
        m=new_m, v=new_v, t=t, lr=state.lr, beta1=b1, beta2=b2,
        eps=state.eps,
    )
    return list(params), new_state
