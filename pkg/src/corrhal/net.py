"""Toy-scale correspondence hallucination network.

Pipeline for one image pair and N source keypoints::

    image_S, image_T --shared CNN--> H_S, H_T            (stride 4, d channels)
    H_T --pad with learnable lambda--> H_T,pad           (round(gamma*dim) cells per side)
    + positional encodings (MLP of a (-1, 1) meshgrid)
    d_S = bilinear(H_S, p_S)                             (N x d)
    d_S <- cross-attention(d_S, H_S)
    H_T,pad <- self-attention(H_T,pad, maxpool2(H_T,pad))
    d_S <- k x cross-attention(d_S, H_T,pad)
    C_n = softmax2d(<d_S,n, H_T,pad>)                   (one map per keypoint)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import autodiff as ad
from .corrmap import CorrespondenceMap
from .errors import FormatError, ShapeMismatch
from .geometry import MapFrame

CKPT_MAGIC = b"CHCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    channels: int = 32
    heads: int = 2
    cross_layers: int = 2
    stride: int = 4
    hidden: int = 16
    pe_widths: tuple[int, ...] = (8, 16)

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "heads": self.heads,
            "cross_layers": self.cross_layers,
            "stride": self.stride,
            "hidden": self.hidden,
            "pe_widths": list(self.pe_widths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["pe_widths"] = tuple(d["pe_widths"])
        return cls(**d)


def map_frame(height: int, width: int, stride: int, gamma: float) -> MapFrame:
    return MapFrame.for_image(width, height, stride, gamma)


def pad_features(grid: torch.Tensor, lam: torch.Tensor, gamma: float) -> tuple[torch.Tensor, int, int]:
    """Pad a ``(B, d, h, w)`` grid with ``lam`` on every side.

    Returns the padded grid and the per-side padding ``(pad_x, pad_y)``.
    """
    b, d, h, w = grid.shape
    if lam.shape != (d,):
        raise ShapeMismatch("padding vector must have one entry per channel", lam=tuple(lam.shape), d=d)
    pad_x = int(round(gamma * w))
    pad_y = int(round(gamma * h))
    if pad_x == 0 and pad_y == 0:
        return grid, 0, 0
    out = lam.view(1, d, 1, 1).expand(b, d, h + 2 * pad_y, w + 2 * pad_x)
    mask = torch.zeros(1, 1, h + 2 * pad_y, w + 2 * pad_x, dtype=torch.bool)
    mask[..., pad_y : pad_y + h, pad_x : pad_x + w] = True
    inner = torch.nn.functional.pad(grid, (pad_x, pad_x, pad_y, pad_y))
    return torch.where(mask, inner, out), pad_x, pad_y


def position_grid(h: int, w: int, pad_x: int = 0, pad_y: int = 0, dtype=torch.float32) -> torch.Tensor:
    """Normalized cell-center coordinates, ``(h + 2 pad_y, w + 2 pad_x, 2)``.

    The unpadded grid spans (-1, 1); padded cells continue the same scale.
    """
    xs = (torch.arange(-pad_x, w + pad_x, dtype=dtype) + 0.5) / w * 2 - 1
    ys = (torch.arange(-pad_y, h + pad_y, dtype=dtype) + 0.5) / h * 2 - 1
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)


def gated_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, q_mask: torch.Tensor | None = None) -> torch.Tensor:
    """``softmax(g * S) V`` with ``S = QK^T / sqrt(d_h)`` and ``g = sigmoid(max S)``.

    Inputs are ``(..., n_q, d_h)``, ``(..., n_k, d_h)``, ``(..., n_k, d_v)``.
    The gate is one scalar per score matrix; query rows where ``q_mask`` is
    False are excluded from the max.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[-1] == 0:
        raise ShapeMismatch("attention operands disagree", q=tuple(q.shape), k=tuple(k.shape), v=tuple(v.shape))
    scores = ad.scale(ad.matmul(q, k.transpose(-1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    mask = None
    if q_mask is not None:
        mask = q_mask.unsqueeze(-1).expand(scores.shape)
    g = ad.sigmoid(ad.max_reduce(scores, 2, mask))
    attn = torch.softmax(g[..., None, None] * scores, dim=-1)
    return ad.matmul(attn, v)


class AttentionLayer(nn.Module):
    """Multi-head gated attention followed by a residual MLP update."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ShapeMismatch("channels must divide evenly into heads", d=d, heads=heads)
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.merge = nn.Linear(d, d)
        self.mlp = nn.Sequential(nn.Linear(2 * d, 2 * d), nn.ReLU(), nn.Linear(2 * d, d))

    def _split(self, x):
        b, n, d = x.shape
        return x.view(b, n, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, x, source, x_mask=None):
        b, n, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(source)), self._split(self.v(source))
        m = None if x_mask is None else x_mask[:, None, :].expand(b, self.heads, n)
        msg = gated_attention(q, k, v, m).transpose(1, 2).reshape(b, n, d)
        return x + self.mlp(torch.cat([x, self.merge(msg)], dim=-1))


class HallucinationNet(nn.Module):
    def __init__(self, config: NetConfig | None = None):
        super().__init__()
        cfg = config or NetConfig()
        self.config = cfg
        d = cfg.channels
        self.conv1 = nn.Conv2d(1, cfg.hidden, 5, stride=2, padding=2)
        self.conv2 = nn.Conv2d(cfg.hidden, d, 5, stride=2, padding=2)
        self.compress = nn.Conv2d(d, d, 1)
        self.lam = nn.Parameter(torch.randn(d) * 0.5)
        widths = (2, *cfg.pe_widths, d)
        pe = []
        for i in range(len(widths) - 1):
            pe.append(nn.Linear(widths[i], widths[i + 1]))
            if i < len(widths) - 2:
                pe.append(nn.ReLU())
        self.pos_mlp = nn.Sequential(*pe)
        self.source_cross = AttentionLayer(d, cfg.heads)
        self.target_self = AttentionLayer(d, cfg.heads)
        self.target_cross = nn.ModuleList(AttentionLayer(d, cfg.heads) for _ in range(cfg.cross_layers))
        if cfg.stride != 4:
            raise ShapeMismatch("the backbone has a fixed stride of 4", stride=cfg.stride)

    def extract_features(self, image: torch.Tensor) -> torch.Tensor:
        """``(B, H, W)`` images in [0, 1] -> ``(B, d, H/s, W/s)`` descriptors."""
        if image.dim() == 2:
            image = image[None]
        b, h, w = image.shape
        s = self.config.stride
        if h % s or w % s:
            raise ShapeMismatch("image size must be divisible by the stride", h=h, w=w, stride=s)
        x = (image[:, None] - 0.5) * 4.0
        x = ad.relu(ad.conv2d(x, self.conv1.weight, self.conv1.bias, stride=2, padding=2))
        x = ad.relu(ad.conv2d(x, self.conv2.weight, self.conv2.bias, stride=2, padding=2))
        return ad.conv2d(x, self.compress.weight, self.compress.bias)

    def positional_encoding(self, h: int, w: int, pad_x: int = 0, pad_y: int = 0) -> torch.Tensor:
        """``(d, h + 2 pad_y, w + 2 pad_x)`` encoding to add to descriptors."""
        grid = position_grid(h, w, pad_x, pad_y, dtype=self.lam.dtype)
        return self.pos_mlp(grid).permute(2, 0, 1)

    def forward(self, image_s, image_t, keypoints, gamma: float, kp_mask=None):
        """Logits ``(B, N, H_C, W_C)`` and the pair's map frame.

        ``keypoints`` are ``(B, N, 2)`` source pixels; ``kp_mask`` marks real
        (non-padding) keypoints when batches carry different counts.
        """
        if image_s.dim() == 2:
            image_s, image_t, keypoints = image_s[None], image_t[None], keypoints[None]
        h_s = self.extract_features(image_s)
        h_t = self.extract_features(image_t)
        b, d, h, w = h_s.shape
        h_tpad, pad_x, pad_y = pad_features(h_t, self.lam, gamma)
        hp, wp = h_tpad.shape[-2:]
        h_s = h_s + self.positional_encoding(h, w)
        h_tpad = h_tpad + self.positional_encoding(h, w, pad_x, pad_y)

        s = self.config.stride
        d_s = ad.bilinear_sample(h_s, keypoints / s)
        src = h_s.flatten(2).transpose(1, 2)
        tgt = h_tpad.flatten(2).transpose(1, 2)
        pooled = ad.max_pool(h_tpad, 2).flatten(2).transpose(1, 2)

        d_s = self.source_cross(d_s, src, kp_mask)
        tgt = self.target_self(tgt, pooled)
        for layer in self.target_cross:
            d_s = layer(d_s, tgt, kp_mask)
        logits = ad.matmul(d_s, tgt.transpose(1, 2)).view(b, -1, hp, wp)
        frame = MapFrame(s, pad_x, pad_y, wp, hp)
        return logits, frame

    @torch.no_grad()
    def predict(self, image_s, image_t, keypoints, gamma: float) -> list[CorrespondenceMap]:
        """One normalized map per keypoint for a single pair (numpy in, maps out)."""
        dtype = self.lam.dtype
        logits, frame = self(
            torch.as_tensor(np.asarray(image_s), dtype=dtype),
            torch.as_tensor(np.asarray(image_t), dtype=dtype),
            torch.as_tensor(np.asarray(keypoints, dtype=float).reshape(-1, 2), dtype=dtype),
            gamma,
        )
        probs = ad.softmax_all(logits[0].to(torch.float64)).numpy()
        return [CorrespondenceMap(p, frame) for p in probs]


def build_net(seed: int, config: NetConfig | None = None, dtype=torch.float32) -> HallucinationNet:
    """Seeded initialization; identical seeds give identical weights."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        net = HallucinationNet(config)
    finally:
        torch.random.set_rng_state(gen_state)
    return net.to(dtype)


def save_checkpoint(net: HallucinationNet, path, meta: dict | None = None) -> None:
    """Binary checkpoint: magic, version, JSON header, then named f32 tensors."""
    import json

    header = json.dumps({"config": net.config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(header)), header]
    state = net.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, t in state.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, dtype=torch.float32) -> tuple[HallucinationNet, dict]:
    import json

    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint file", path=str(path))
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise FormatError("unsupported checkpoint version", version=version)
    off = 12
    header = json.loads(data[off : off + hlen])
    off += hlen
    net = HallucinationNet(NetConfig.from_dict(header["config"]))
    expected = net.state_dict()
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + nlen].decode()
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims)
        off += 4 * size
        if name not in expected:
            raise FormatError("unknown tensor in checkpoint", name=name)
        if tuple(expected[name].shape) != tuple(dims):
            raise FormatError("tensor shape mismatch", name=name, dims=dims)
        state[name] = torch.from_numpy(arr.copy())
    missing = set(expected) - set(state)
    if missing:
        raise FormatError("checkpoint is missing tensors", missing=sorted(missing))
    net.load_state_dict(state)
    return net.to(dtype), header["meta"]
