import numpy as np
import pytest
import torch

from corrhal import autodiff as ad
from corrhal.corrmap import CorrespondenceMap, nre_at
from corrhal.errors import ShapeMismatch
from corrhal.geometry import CameraModel, MapFrame, RigidPose, perturb
from corrhal.net import gated_attention
from corrhal.pose import RefinementObjective

SEEDS = range(20)
TOL = 1e-4
f64 = torch.float64


def gen(seed):
    return torch.Generator().manual_seed(seed)


def rand(g, *shape):
    return torch.randn(*shape, generator=g, dtype=f64)


def away_from_zero(g, *shape):
    # keep relu inputs clear of the kink by more than the difference step
    x = rand(g, *shape)
    return x + 0.1 * torch.sign(x)


def weighted(out, g):
    w = rand(g, *out.shape)
    return (out * w).sum()


def test_relu_examples():
    x = torch.tensor([-1.0, 2.0], requires_grad=True)
    y = ad.relu(x)
    y.sum().backward()
    assert y.tolist() == [0.0, 2.0]
    assert x.grad.tolist() == [0.0, 1.0]


def test_sigmoid_grad_at_zero():
    x = torch.zeros((), requires_grad=True)
    ad.sigmoid(x).backward()
    assert x.grad.item() == 0.25


def test_softmax_single_output_grad_sums_to_zero():
    x = torch.zeros(3, 4, dtype=f64, requires_grad=True)
    ad.softmax_all(x)[1, 2].backward()
    assert abs(x.grad.sum().item()) < 1e-15
    assert ad.softmax_all(x).sum().item() == pytest.approx(1.0, abs=1e-15)


def test_sum_of_squares_exact():
    x = rand(gen(0), 7)
    assert ad.grad_check(lambda t: (t * t).sum(), x) < 1e-8


def test_max_reduce_routes_to_first_maximum():
    x = torch.tensor([[1.0, 3.0], [3.0, 0.0]], requires_grad=True)
    ad.max_reduce(x).backward()
    assert x.grad.tolist() == [[0.0, 1.0], [0.0, 0.0]]
    mask = torch.tensor([[True, False], [True, True]])
    x.grad = None
    ad.max_reduce(x, 2, mask).backward()
    assert x.grad.tolist() == [[0.0, 0.0], [1.0, 0.0]]


def test_shape_errors():
    a = torch.zeros(2, 3)
    with pytest.raises(ShapeMismatch):
        ad.matmul(a, torch.zeros(2, 3))
    with pytest.raises(ShapeMismatch):
        ad.add(a, torch.zeros(3, 2))
    with pytest.raises(ShapeMismatch):
        ad.conv2d(torch.zeros(1, 2, 4, 4), torch.zeros(3, 1, 3, 3))
    with pytest.raises(ShapeMismatch):
        ad.bilinear_sample(torch.zeros(1, 1, 3, 3), torch.zeros(2, 4, 2))
    with pytest.raises(ShapeMismatch):
        gated_attention(torch.zeros(2, 4), torch.zeros(3, 5), torch.zeros(3, 2))
    assert ad.add(a, 2.0).sum().item() == 12.0


def test_backward_deterministic():
    g = gen(3)
    x = rand(g, 1, 2, 5, 6)
    w = rand(g, 3, 2, 3, 3)

    def grads():
        xx = x.clone().requires_grad_(True)
        ad.relu(ad.conv2d(xx, w, padding=1)).square().sum().backward()
        return xx.grad

    assert torch.equal(grads(), grads())


OPS = {
    "matmul": lambda g: ((rand(g, 3, 4), rand(g, 4, 2)), lambda a, b: ad.matmul(a, b)),
    "conv2d": lambda g: (
        (rand(g, 1, 2, 5, 6), rand(g, 3, 2, 3, 3), rand(g, 3)),
        lambda x, w, b: ad.conv2d(x, w, b, stride=2, padding=1),
    ),
    "relu": lambda g: ((away_from_zero(g, 4, 5),), ad.relu),
    "sigmoid": lambda g: ((rand(g, 4, 5),), ad.sigmoid),
    "softmax_all": lambda g: ((rand(g, 2, 3, 4),), ad.softmax_all),
    "add": lambda g: ((rand(g, 3, 3), rand(g, 3, 3)), ad.add),
    "mul": lambda g: ((rand(g, 3, 3), rand(g, 3, 3)), ad.mul),
    "scale": lambda g: ((rand(g, 6),), lambda x: ad.scale(x, -1.7)),
    "max_reduce": lambda g: ((torch.randperm(20, generator=g).to(f64).reshape(2, 2, 5) * 0.3,), ad.max_reduce),
    "max_pool": lambda g: ((torch.randperm(35, generator=g).to(f64).reshape(1, 1, 5, 7) * 0.3,), ad.max_pool),
    "gather_rows": lambda g: (
        (rand(g, 2, 5, 3),),
        lambda x: ad.gather_rows(x, torch.tensor([[4, 0, 4], [1, 2, 3]])),
    ),
    "bilinear_sample": lambda g: (
        (rand(g, 1, 2, 4, 5), torch.rand(1, 6, 2, generator=g, dtype=f64) * torch.tensor([4.0, 3.0], dtype=f64) + 0.55),
        ad.bilinear_sample,
    ),
}


def worst_op_error(name):
    errs = []
    for seed in SEEDS:
        inputs, op = OPS[name](gen(seed))
        errs.append(ad.grad_check(lambda *xs: weighted(op(*xs), gen(1000 + seed)), *inputs))
    return max(errs)


def worst_nre_head_error():
    errs = []
    for seed in SEEDS:
        g = gen(seed)
        logits = rand(g, 1, 3, 6, 8) * 2
        pts = torch.rand(1, 3, 2, generator=g, dtype=f64) * torch.tensor([6.8, 4.8], dtype=f64) + 0.6
        errs.append(ad.grad_check(lambda lg, p: ad.nre_from_logits(lg, p).sum(), logits, pts))
    return max(errs)


def worst_attention_error():
    errs = []
    for seed in SEEDS:
        g = gen(seed)
        q, k, v = rand(g, 2, 5, 4), rand(g, 2, 7, 4), rand(g, 2, 7, 3)
        errs.append(ad.grad_check(lambda a, b, c: weighted(gated_attention(a, b, c), gen(seed + 50)), q, k, v))
    return max(errs)


def smooth_maps(rng, n, w, h):
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    cx = rng.uniform(2, w - 2, n)
    cy = rng.uniform(2, h - 2, n)
    s = rng.uniform(1.5, 4.0, n)
    lg = -((xs - cx[:, None, None]) ** 2 + (ys - cy[:, None, None]) ** 2) / (2 * s[:, None, None] ** 2)
    p = np.exp(lg)
    return p / p.sum(axis=(1, 2), keepdims=True)


def worst_gnc_error():
    cam = CameraModel(50.0, 50.0, 32.0, 24.0, 64, 48)
    frame = MapFrame.for_image(64, 48, 4, 0.5)
    errs = []
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        n = 12
        p_s = rng.uniform([8, 8], [56, 40], size=(n, 2))
        d_s = rng.uniform(3.0, 6.0, n)
        maps = smooth_maps(rng, n, frame.map_w, frame.map_h)
        obj = RefinementObjective(maps, p_s, d_s, cam, cam, frame)
        pose = perturb(RigidPose.identity(), np.r_[0.02 * rng.normal(size=3), 0.1 * rng.normal(size=3)])
        sigma = 1e6  # no truncation: the objective is smooth between cells
        g = obj.gradient(pose, sigma)
        fd = np.zeros(6)
        h = 1e-6
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            fd[i] = (obj.cost(perturb(pose, e), sigma) - obj.cost(perturb(pose, -e), sigma)) / (2 * h)
        assert np.abs(fd).max() > 1e-2
        errs.append(np.abs(g - fd).max() / np.abs(fd).max())
    return max(errs)


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    assert worst_op_error(name) < TOL


def test_nre_head_gradient():
    assert worst_nre_head_error() < TOL


def test_nre_head_matches_numpy_interpolation():
    g = gen(5)
    logits = rand(g, 1, 2, 6, 8)
    pts = torch.tensor([[[1.3, 2.2], [7.1, 0.2]]], dtype=f64)
    got = ad.nre_from_logits(logits, pts)
    frame = MapFrame(4, 0, 0, 8, 6)
    for n in range(2):
        probs = ad.softmax_all(logits[0, n]).numpy()
        ref = nre_at(CorrespondenceMap(probs / probs.sum(), frame), pts[0, n].numpy())
        assert got[0, n].item() == pytest.approx(ref, abs=1e-10)


def test_gated_attention_gradient():
    assert worst_attention_error() < TOL


def test_gnc_objective_gradient():
    assert worst_gnc_error() < TOL
