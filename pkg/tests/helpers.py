"""Central finite-difference gradient checker shared by the test modules."""

import contextlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

STEP = 1e-3
RTOL = 1e-3
ATOL = 1e-6


def randomize_offsets(module, std=0.1, seed=0):
    """Move deformable offset branches off their zero init so bilinear
    sampling is not evaluated exactly on its integer-coordinate kinks."""
    from sthdr.blocks import DeformConv

    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, DeformConv):
                w = m.offset_conv.weight
                w.copy_(torch.randn(w.shape, generator=gen, dtype=w.dtype) * std)
                b = m.offset_conv.bias
                b.copy_(torch.randn(b.shape, generator=gen, dtype=b.dtype) * std + 0.3)


@contextlib.contextmanager
def kink_monitor(replay=None):
    """Record which side of every piecewise-linear kink each element is on.

    Covers leaky ReLU / ReLU (sign of the input), floating-point clamps
    (below / inside / above) and floor (the integer part).  Yields a list
    that is filled with one pattern tensor per call.

    With ``replay`` (a list recorded at some base point) every kink keeps
    the recorded pattern instead, so the network is evaluated on the
    linear extension of the base point's smooth piece.
    """
    log = []
    orig = {"leaky_relu": F.leaky_relu, "relu": F.relu, "clamp": torch.clamp, "floor": torch.floor}
    calls = iter(replay) if replay is not None else None

    def leaky_relu(x, negative_slope=0.01, *a, **k):
        log.append(x.detach() > 0)
        if calls is not None:
            return torch.where(next(calls), x, negative_slope * x)
        return orig["leaky_relu"](x, negative_slope, *a, **k)

    def relu(x, *a, **k):
        log.append(x.detach() > 0)
        if calls is not None:
            return torch.where(next(calls), x, torch.zeros_like(x))
        return orig["relu"](x, *a, **k)

    def clamp(x, min=None, max=None, *a, **k):
        if not x.is_floating_point():
            return orig["clamp"](x, min, max, *a, **k)
        d = x.detach()
        sig = torch.zeros_like(d, dtype=torch.int8)
        if min is not None:
            sig -= (d < min).to(torch.int8)
        if max is not None:
            sig += (d > max).to(torch.int8)
        log.append(sig)
        if calls is not None:
            pattern = next(calls)
            out = x
            if min is not None:
                out = torch.where(pattern == -1, torch.full_like(x, min), out)
            if max is not None:
                out = torch.where(pattern == 1, torch.full_like(x, max), out)
            return out
        return orig["clamp"](x, min, max, *a, **k)

    def floor(x, *a, **k):
        out = orig["floor"](x, *a, **k)
        log.append(out.detach().clone())
        if calls is not None:
            return next(calls).clone()
        return out

    F.leaky_relu, F.relu, torch.clamp, torch.floor = leaky_relu, relu, clamp, floor
    try:
        yield log
    finally:
        F.leaky_relu, F.relu = orig["leaky_relu"], orig["relu"]
        torch.clamp, torch.floor = orig["clamp"], orig["floor"]


def _same_pattern(a, b):
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


@dataclass
class FDResult:
    records: list
    worst: float
    resampled: int
    kink_bound: list  # indices of tensors with no smooth coordinate in the budget

    def __iter__(self):
        return iter((self.records, self.worst, self.resampled))


def fd_check(fn, tensors, n_samples=12, seed=0, step=STEP, rtol=RTOL, atol=ATOL,
             kinks=None, max_resample=50):
    """Compare autograd against central differences on sampled coordinates.

    ``fn()`` must return a tensor; the checked scalar is its sum against a
    fixed random projection.  Raises AssertionError on any coordinate with
    ``|a - n| > rtol * max(|a|, |n|) + atol``.

    ``kinks`` selects how piecewise-linear kinks (ReLU, clamp, floor) are
    handled when a +-step evaluation lands on a different side of one
    than the unperturbed point:

    * ``None``: ignored.
    * ``"resample"``: the coordinate is replaced by another randomly drawn
      coordinate of the same tensor, up to ``max_resample`` draws per
      tensor.  Tensors that exhaust the budget are listed in ``kink_bound``.
    * ``"freeze"``: every kink keeps the unperturbed point's pattern, so
      the difference quotient is taken on the same smooth piece whose
      derivative autograd returns.  ``resampled`` then counts the
      coordinates whose plain evaluation would have crossed a kink.

    Returns an :class:`FDResult` (unpacks as ``records, worst, resampled``).
    The worst relative error is taken over coordinates whose gradient
    magnitude exceeds ``atol``.
    """
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        ref = fn()
    proj = torch.from_numpy(rng.standard_normal(tuple(ref.shape))).to(ref.dtype)

    def scalar():
        return (fn() * proj).sum()

    def evaluate(replay=None):
        if kinks is None:
            return scalar().item(), None
        with kink_monitor(replay) as log:
            value = scalar().item()
        return value, log

    for t in tensors:
        t.grad = None
    scalar().backward()
    grads = [t.grad.detach().clone() for t in tensors]
    with torch.no_grad():
        _, base_pattern = evaluate()

    records = []
    skipped = 0
    kink_bound = []
    for ti, (t, g) in enumerate(zip(tensors, grads)):
        flat = t.data.view(-1)
        gflat = g.view(-1)
        order = rng.permutation(flat.numel())
        want = min(n_samples, flat.numel())
        checked = misses = 0
        for i in order:
            if checked == want:
                break
            if misses > max_resample:
                break
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
                up, up_pattern = evaluate()
                flat[i] = orig - step
                down, down_pattern = evaluate()
                flat[i] = orig
            crossed = kinks is not None and not (_same_pattern(up_pattern, base_pattern)
                                                 and _same_pattern(down_pattern, base_pattern))
            if crossed and kinks == "resample":
                skipped += 1
                misses += 1
                continue
            if crossed and kinks == "freeze":
                skipped += 1
                with torch.no_grad():
                    flat[i] = orig + step
                    up, _ = evaluate(base_pattern)
                    flat[i] = orig - step
                    down, _ = evaluate(base_pattern)
                    flat[i] = orig
            checked += 1
            numeric = (up - down) / (2 * step)
            analytic = gflat[i].item()
            err = abs(analytic - numeric)
            records.append((analytic, numeric, err))
            assert err <= rtol * max(abs(analytic), abs(numeric)) + atol, (
                f"gradient mismatch at flat index {i} of tensor {tuple(t.shape)}: "
                f"analytic {analytic:.8g} vs numeric {numeric:.8g}")
        if checked == 0:
            kink_bound.append(ti)
    rel = [e / max(abs(a), abs(n)) for a, n, e in records if max(abs(a), abs(n)) > atol]
    return FDResult(records, max(rel, default=0.0), skipped, kink_bound)


def params_of(module, max_tensors=None):
    ps = [p for p in module.parameters() if p.requires_grad]
    return ps if max_tensors is None else ps[:max_tensors]


def unkink_context_blocks(module, shift=0.3):
    """Shift the LayerNorm bias of every global-context block so the ReLU
    that follows is not evaluated at exactly zero (single-channel
    bottlenecks normalize to zero)."""
    from sthdr.blocks import GCBlock

    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, GCBlock):
                m.norm.bias.add_(shift)
