"""Differentiable tensor ops used by the network and the NRE loss.

Values and gradients live in ``torch`` tensors and the reverse pass is torch
autograd; this module fixes the op inventory and its contracts (explicit
shape checks, no broadcasting beyond scalars, first-element tie-breaking for
``max_reduce``).  ``grad_check`` is an independent central-difference oracle
that never touches autograd for its reference values.
"""

from __future__ import annotations

from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from .corrmap import LOG_EPS_P
from .errors import ShapeMismatch

Tensor = torch.Tensor


def _require(cond: bool, message: str, **context):
    if not cond:
        raise ShapeMismatch(message, **context)


def _same_or_scalar(a: Tensor, b) -> None:
    if isinstance(b, (int, float)) or (isinstance(b, Tensor) and b.dim() == 0):
        return
    _require(a.shape == b.shape, "operands must have equal shapes", a=tuple(a.shape), b=tuple(b.shape))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.dim() >= 2 and b.dim() >= 2, "matmul needs matrices")
    _require(a.shape[:-2] == b.shape[:-2], "batch dims differ", a=tuple(a.shape), b=tuple(b.shape))
    _require(a.shape[-1] == b.shape[-2], "inner dims differ", a=tuple(a.shape), b=tuple(b.shape))
    return a @ b


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    _require(x.dim() == 4 and weight.dim() == 4, "conv2d expects NCHW input and OIHW weights")
    _require(x.shape[1] == weight.shape[1], "channel mismatch", x=tuple(x.shape), w=tuple(weight.shape))
    if bias is not None:
        _require(bias.shape == (weight.shape[0],), "bias must have one entry per output channel")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def sigmoid(x: Tensor) -> Tensor:
    return torch.sigmoid(x)


def softmax_all(x: Tensor) -> Tensor:
    """Joint softmax over the last two axes (one distribution per 2D grid)."""
    _require(x.dim() >= 2, "softmax_all needs a 2D grid")
    flat = x.reshape(*x.shape[:-2], -1)
    return torch.softmax(flat, dim=-1).reshape(x.shape)


def log_softmax_all(x: Tensor) -> Tensor:
    _require(x.dim() >= 2, "log_softmax_all needs a 2D grid")
    flat = x.reshape(*x.shape[:-2], -1)
    return torch.log_softmax(flat, dim=-1).reshape(x.shape)


def add(a: Tensor, b) -> Tensor:
    _same_or_scalar(a, b)
    return a + b


def mul(a: Tensor, b) -> Tensor:
    _same_or_scalar(a, b)
    return a * b


def scale(a: Tensor, c: float) -> Tensor:
    return a * c


def max_reduce(x: Tensor, dims: int = 2, mask: Tensor | None = None) -> Tensor:
    """Maximum over the trailing ``dims`` axes.

    The gradient flows to the first maximizing element in row-major order.
    Entries where ``mask`` is False are ignored.
    """
    flat = x.reshape(*x.shape[: x.dim() - dims], -1)
    if mask is not None:
        _require(mask.shape == x.shape, "mask must match the input shape")
        flat = flat.masked_fill(~mask.reshape(flat.shape), float("-inf"))
    idx = torch.argmax(flat, dim=-1, keepdim=True)
    return torch.gather(flat, -1, idx).squeeze(-1)


def max_pool(x: Tensor, stride: int = 2) -> Tensor:
    _require(x.dim() == 4, "max_pool expects NCHW input")
    return F.max_pool2d(x, kernel_size=stride, stride=stride, ceil_mode=True)


def gather_rows(x: Tensor, idx: Tensor) -> Tensor:
    """Rows ``x[b, idx[b, n]]`` of a ``(B, M, C)`` tensor."""
    _require(x.dim() == 3 and idx.dim() == 2 and idx.shape[0] == x.shape[0], "gather_rows shape mismatch")
    return torch.gather(x, 1, idx.unsqueeze(-1).expand(-1, -1, x.shape[-1]))


def bilinear_sample(grid: Tensor, pts: Tensor) -> Tensor:
    """Sample a ``(B, C, H, W)`` grid at map coordinates ``pts`` ``(B, N, 2)``.

    Cell ``(r, c)`` holds its value at ``(c + 0.5, r + 0.5)``; queries
    beyond the outermost cell centers clamp to the edge.  Returns
    ``(B, N, C)`` and is differentiable in both the grid and the points.
    """
    _require(grid.dim() == 4 and pts.dim() == 3 and pts.shape[-1] == 2, "bilinear_sample shape mismatch")
    _require(grid.shape[0] == pts.shape[0], "batch sizes differ")
    b, c, h, w = grid.shape
    u = (pts[..., 0] - 0.5).clamp(0.0, w - 1)
    v = (pts[..., 1] - 0.5).clamp(0.0, h - 1)
    c0 = torch.floor(u).clamp(max=max(w - 2, 0)).detach()
    r0 = torch.floor(v).clamp(max=max(h - 2, 0)).detach()
    fu = (u - c0).unsqueeze(-1)
    fv = (v - r0).unsqueeze(-1)
    c0 = c0.long()
    r0 = r0.long()
    c1 = (c0 + 1).clamp(max=w - 1)
    r1 = (r0 + 1).clamp(max=h - 1)
    flat = grid.reshape(b, c, h * w).transpose(1, 2)
    g = lambda r, cc: gather_rows(flat, r * w + cc)
    return (
        g(r0, c0) * (1 - fu) * (1 - fv)
        + g(r0, c1) * fu * (1 - fv)
        + g(r1, c0) * (1 - fu) * fv
        + g(r1, c1) * fu * fv
    )


def nre_from_logits(logits: Tensor, pts: Tensor) -> Tensor:
    """NRE of ``(B, N, H, W)`` logit grids at per-map coordinates ``(B, N, 2)``.

    Log-probabilities are clamped at ``ln 1e-12`` and bilinearly interpolated.
    Callers drop out-of-map points beforehand.
    """
    _require(logits.dim() == 4 and pts.shape == (*logits.shape[:2], 2), "nre_from_logits shape mismatch")
    b, n, h, w = logits.shape
    logp = log_softmax_all(logits).clamp(min=LOG_EPS_P)
    val = bilinear_sample(logp.reshape(b * n, 1, h, w), pts.reshape(b * n, 1, 2))
    return -val.reshape(b, n)


def grad_check(
    f: Callable[..., Tensor],
    *xs: Tensor,
    indices: Sequence | None = None,
    h_scale: float = 1e-4,
    joint: bool = False,
) -> float:
    """Max relative error between autograd and central differences, in f64.

    ``indices`` optionally restricts the check to a subset of flat
    coordinates per input (``None`` checks every entry).  The error is
    ``max|g_tape - g_fd| / max(max|g_fd|, 1e-12)`` per input, maximized
    over inputs.  With ``joint`` the denominator is taken over all inputs
    together, which suits parameters whose true gradient is nearly zero.
    """
    xs = [x.detach().to(torch.float64).clone().requires_grad_(True) for x in xs]
    out = f(*xs)
    _require(out.numel() == 1, "grad_check needs a scalar function")
    tape = torch.autograd.grad(out, xs, allow_unused=True)
    diffs, scales = [], []
    with torch.no_grad():
        for k, x in enumerate(xs):
            g_tape = tape[k] if tape[k] is not None else torch.zeros_like(x)
            flat = x.view(-1)
            which = range(flat.numel()) if indices is None or indices[k] is None else indices[k]
            fd, an = [], []
            for i in which:
                i = int(i)
                orig = flat[i].item()
                h = h_scale * (1.0 + abs(orig))
                flat[i] = orig + h
                fp = f(*xs).item()
                flat[i] = orig - h
                fm = f(*xs).item()
                flat[i] = orig
                fd.append((fp - fm) / (2 * h))
                an.append(g_tape.reshape(-1)[i].item())
            if not fd:
                continue
            fd_t = torch.tensor(fd, dtype=torch.float64)
            an_t = torch.tensor(an, dtype=torch.float64)
            diffs.append((fd_t - an_t).abs().max().item())
            scales.append(fd_t.abs().max().item())
    if not diffs:
        return 0.0
    if joint:
        return max(diffs) / max(max(scales), 1e-12)
    return max(d / max(s, 1e-12) for d, s in zip(diffs, scales))
