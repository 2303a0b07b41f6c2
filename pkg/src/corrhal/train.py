"""Training: summed-NRE objective, AdamW, warmup/step-decay schedule, early stopping."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import autodiff as ad
from .errors import EmptyBatch, EmptyDataset, InvalidConfig, ShapeMismatch
from .geometry import CameraModel, MapFrame, RigidPose, image_to_map, warp
from .net import HallucinationNet, NetConfig, build_net
from .synth import LABELS, Pair

log = logging.getLogger(__name__)

LABEL_CODES = {lab: i for i, lab in enumerate(LABELS)}
METRIC_COLUMNS = ("epoch", "lr", "train_nre", "val_nre", "dropped_keypoints", "wall_seconds")


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 2e-3
    weight_decay: float = 0.1
    warmup_epochs: int = 2
    decay_every: int = 5
    decay_factor: float = 0.5
    epochs: int = 20
    batch_pairs: int = 8
    keypoints_per_pair: int = 64
    gamma: float = 0.5
    seed: int = 0
    label_mix: tuple[str, ...] = LABELS
    patience: int = 5
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if not self.base_lr > 0:
            raise InvalidConfig("base_lr must be positive")
        if not 0 < self.decay_factor <= 1:
            raise InvalidConfig("decay_factor must lie in (0, 1]")
        if not self.label_mix or any(lab not in LABELS for lab in self.label_mix):
            raise InvalidConfig("label_mix must be a nonempty subset of the labels", label_mix=self.label_mix)
        if self.gamma < 0:
            raise InvalidConfig("gamma must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label_mix"] = list(self.label_mix)
        d["net"] = self.net.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "label_mix" in d:
            d["label_mix"] = tuple(d["label_mix"])
        if "net" in d:
            d["net"] = NetConfig.from_dict(d["net"])
        return cls(**d)


def lr_schedule(epoch: float, config: TrainConfig) -> float:
    """Linear warmup from 0.1x base, then step decay every ``decay_every`` epochs."""
    base = config.base_lr
    if epoch >= config.decay_every:
        steps = math.floor((epoch - config.decay_every) / config.decay_every + 1)
        return base * config.decay_factor**steps
    if config.warmup_epochs > 0 and epoch < config.warmup_epochs:
        return base * (0.1 + 0.9 * epoch / config.warmup_epochs)
    return base


def adamw_update(p, g, m, v, t: int, lr: float, weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One decoupled-weight-decay Adam step; returns ``(p, m, v)``."""
    if not (p.shape == g.shape == m.shape == v.shape):
        raise ShapeMismatch("parameter, gradient and moments must share a shape")
    b1, b2 = betas
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    p = p - lr * m_hat / (v_hat**0.5 + eps) - lr * weight_decay * p
    return p, m, v


class AdamW:
    def __init__(self, params: Sequence[torch.Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    @torch.no_grad()
    def step(self, lr: float, weight_decay: float) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            new_p, self.m[i], self.v[i] = adamw_update(
                p, g, self.m[i], self.v[i], self.t, lr, weight_decay, self.betas, self.eps
            )
            p.copy_(new_p)


def optimizer_step(params, grads, lr: float, weight_decay: float, state: dict | None = None):
    """Functional AdamW over lists of arrays; ``state`` carries moments between calls."""
    state = state if state is not None else {}
    t = state.get("t", 0) + 1
    ms = state.get("m") or [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
    vs = state.get("v") or [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
    if len(grads) != len(params):
        raise ShapeMismatch("one gradient per parameter is required")
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        p, ms[i], vs[i] = adamw_update(
            np.asarray(p, dtype=float), np.asarray(g, dtype=float), ms[i], vs[i], t, lr, weight_decay
        )
        out.append(p)
    state.update(t=t, m=ms, v=vs)
    return out


def target_map_coords(p_s, d_s, pose_ts: RigidPose, cam_s: CameraModel, cam_t: CameraModel, frame: MapFrame):
    """Map coordinates of the ground-truth correspondents (K_C applied to the warp)."""
    return image_to_map(warp(p_s, d_s, pose_ts, cam_s, cam_t), frame)


def in_map(x, frame: MapFrame) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x[..., 0] >= 0) & (x[..., 0] <= frame.map_w) & (x[..., 1] >= 0) & (x[..., 1] <= frame.map_h)


def nre_loss(logits: torch.Tensor, frame: MapFrame, x_t, labels, label_mix=LABELS, mask=None):
    """Mean NRE over keypoints inside the map whose label is in ``label_mix``.

    ``logits`` is ``(B, N, H_C, W_C)``, ``x_t`` the ``(B, N, 2)`` map
    coordinates of the correspondents, ``labels`` label codes ``(B, N)``.
    Returns ``(loss, kept, dropped)`` where ``dropped`` counts (real)
    keypoints whose correspondent falls outside the map.
    """
    x_np = np.asarray(x_t, dtype=float)
    lab = np.asarray(labels)
    real = np.ones(lab.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    inside = in_map(x_np, frame) & real
    dropped = int(np.sum(real & ~inside))
    codes = [LABEL_CODES[m] for m in label_mix]
    use = inside & np.isin(lab, codes)
    kept = int(use.sum())
    if kept == 0:
        raise EmptyBatch("no keypoint left for the loss", dropped=dropped)
    pts = torch.as_tensor(np.where(inside[..., None], x_np, 0.5), dtype=logits.dtype)
    nre = ad.nre_from_logits(logits, pts)
    w = torch.as_tensor(use, dtype=logits.dtype)
    return (nre * w).sum() / kept, kept, dropped


@dataclass
class PairSample:
    """Per-pair arrays the trainer needs (no scene geometry)."""

    pair_id: str
    image_s: np.ndarray
    image_t: np.ndarray
    p_s: np.ndarray
    gt: np.ndarray
    labels: np.ndarray  # int codes
    overlap: float

    @classmethod
    def from_pair(cls, pair: Pair) -> "PairSample":
        kp = pair.keypoints
        return cls(
            pair.pair_id,
            pair.source.image.astype(np.float32),
            pair.target.image.astype(np.float32),
            kp.p_s.copy(),
            kp.gt.copy(),
            np.array([LABEL_CODES[lab] for lab in kp.labels], dtype=np.int64),
            pair.overlap,
        )


def collate(samples: Sequence[PairSample], frame: MapFrame, picks: Sequence[np.ndarray], dtype=torch.float32):
    n = max(1, max(len(p) for p in picks))
    b = len(samples)
    kp = np.zeros((b, n, 2))
    xt = np.zeros((b, n, 2))
    lab = np.zeros((b, n), dtype=np.int64)
    mask = np.zeros((b, n), dtype=bool)
    for i, (s, idx) in enumerate(zip(samples, picks)):
        k = len(idx)
        kp[i, :k] = s.p_s[idx]
        xt[i, :k] = image_to_map(s.gt[idx], frame)
        lab[i, :k] = s.labels[idx]
        mask[i, :k] = True
    img_s = torch.as_tensor(np.stack([s.image_s for s in samples]), dtype=dtype)
    img_t = torch.as_tensor(np.stack([s.image_t for s in samples]), dtype=dtype)
    return img_s, img_t, torch.as_tensor(kp, dtype=dtype), xt, lab, mask


def _frame_for(sample: PairSample, net: HallucinationNet, gamma: float) -> MapFrame:
    h, w = sample.image_t.shape
    return MapFrame.for_image(w, h, net.config.stride, gamma)


@torch.no_grad()
def evaluate_nre(net: HallucinationNet, samples: Sequence[PairSample], gamma: float, label_mix=LABELS, chunk: int = 8):
    """Mean NRE over every in-map keypoint of ``samples`` plus the dropped count."""
    total, count, dropped = 0.0, 0, 0
    for start in range(0, len(samples), chunk):
        batch = samples[start : start + chunk]
        frame = _frame_for(batch[0], net, gamma)
        picks = [np.arange(len(s.p_s)) for s in batch]
        img_s, img_t, kp, xt, lab, mask = collate(batch, frame, picks)
        logits, frame = net(img_s, img_t, kp, gamma, torch.as_tensor(mask))
        try:
            loss, kept, drop = nre_loss(logits, frame, xt, lab, label_mix, mask)
        except EmptyBatch as e:
            dropped += e.context.get("dropped", 0)
            continue
        total += float(loss) * kept
        count += kept
        dropped += drop
    return (total / count if count else float("nan")), dropped


@dataclass
class TrainResult:
    net: HallucinationNet
    metrics: list[dict]
    best_epoch: int

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.metrics:
            writer.writerow({k: row[k] for k in METRIC_COLUMNS})
        return buf.getvalue()


def train(config: TrainConfig, train_set: Sequence[PairSample], val_set: Sequence[PairSample] = (), timer=time.perf_counter) -> TrainResult:
    """Minimize the mean NRE; deterministic for a fixed ``config.seed``.

    Early stopping keeps the parameters of the best validation epoch.  The
    ``wall_seconds`` column is the only nondeterministic output.
    """
    if not train_set:
        raise EmptyDataset("training set is empty")
    torch.use_deterministic_algorithms(True)
    rng = np.random.default_rng(config.seed)
    net = build_net(config.seed, config.net)
    params = [p for p in net.parameters()]
    opt = AdamW(params)
    frame = _frame_for(train_set[0], net, config.gamma)
    val_set = list(val_set)
    metrics = []
    best = (math.inf, -1, None)
    start = timer()
    stale = 0
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        order = rng.permutation(len(train_set))
        run_loss, run_kept, dropped = 0.0, 0, 0
        net.train()
        for b0 in range(0, len(order), config.batch_pairs):
            batch = [train_set[i] for i in order[b0 : b0 + config.batch_pairs]]
            picks = [
                np.sort(rng.permutation(len(s.p_s))[: config.keypoints_per_pair]) for s in batch
            ]
            img_s, img_t, kp, xt, lab, mask = collate(batch, frame, picks)
            for p in params:
                p.grad = None
            logits, _ = net(img_s, img_t, kp, config.gamma, torch.as_tensor(mask))
            try:
                loss, kept, drop = nre_loss(logits, frame, xt, lab, config.label_mix, mask)
            except EmptyBatch as e:
                dropped += e.context.get("dropped", 0)
                continue
            loss.backward()
            opt.step(lr, config.weight_decay)
            run_loss += float(loss.detach()) * kept
            run_kept += kept
            dropped += drop
        net.eval()
        train_nre = run_loss / max(run_kept, 1)
        val_nre = evaluate_nre(net, val_set, config.gamma, config.label_mix)[0] if val_set else train_nre
        metrics.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_nre": train_nre,
                "val_nre": val_nre,
                "dropped_keypoints": dropped,
                "wall_seconds": round(timer() - start, 3),
            }
        )
        log.info("epoch %d lr %.2e train %.4f val %.4f dropped %d", epoch, lr, train_nre, val_nre, dropped)
        if val_nre < best[0]:
            best = (val_nre, epoch, {k: v.detach().clone() for k, v in net.state_dict().items()})
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best[2] is not None:
        net.load_state_dict(best[2])
    return TrainResult(net, metrics, best[1])


def config_from_json(path, **overrides) -> TrainConfig:
    with open(path) as fh:
        d = json.load(fh)
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d)
