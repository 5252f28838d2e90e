import math

import numpy as np
import pytest
import torch
from scipy.optimize import minimize_scalar

from pulsebench.errors import InvalidClass, ShapeError, ZeroResidual
from pulsebench.loss import multitask_loss, multitask_terms, optimal_sigma_check

FS = 30.0


def tone(n=64, k=4):
    return torch.sin(2 * math.pi * k * torch.arange(n, dtype=torch.float64) / n)


def test_uniform_ce_only():
    bvp = tone()
    hr = float(60 * 4 * FS / 64)
    terms = multitask_terms(bvp, bvp, hr, torch.zeros(4, dtype=torch.float64), 0,
                            torch.zeros(3, dtype=torch.float64), FS, temperature=1e-4)
    # soft hr at tiny temperature sits on the bin, so the hr residual vanishes
    assert float(terms.hr) == pytest.approx(0.0, abs=1e-9)
    assert float(terms.total) == pytest.approx(math.log(4), abs=1e-9)


def test_bvp_residual_example():
    bvp = tone()
    gt = bvp.clone()
    gt[0] += 1.0
    gt[1] -= 1.0
    logits = torch.tensor([10.0, 0, 0, 0], dtype=torch.float64)
    terms = multitask_terms(bvp, gt, 0.0, logits, 0, torch.zeros(3, dtype=torch.float64), FS)
    ce = math.log(1 + 3 * math.exp(-10))
    assert float(terms.bvp) == pytest.approx(1.0, abs=1e-12)
    assert float(terms.identity) == pytest.approx(ce, abs=1e-12)
    assert float(terms.total) == pytest.approx(1.0 + float(terms.hr) + ce, abs=1e-12)
    # 4.5e-5 is the two-class value of the same margin
    two = multitask_terms(bvp, gt, 0.0, logits[:2], 0, torch.zeros(3, dtype=torch.float64), FS)
    assert float(two.identity) == pytest.approx(4.54e-5, rel=1e-3)


def test_gradient_wrt_s1_is_half():
    bvp = tone()
    s = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    multitask_loss(bvp, bvp, 75.0, torch.zeros(4, dtype=torch.float64), 1, s, FS).backward()
    assert float(s.grad[0]) == pytest.approx(0.5, abs=1e-12)


def _random_instance(rng, b=2, t=48, k=5):
    return dict(
        bvp_pred=rng.normal(size=(b, t)) + np.sin(2 * np.pi * 6 * np.arange(t) / t),
        bvp_gt=rng.normal(size=(b, t)),
        hr_gt=rng.uniform(60, 120, size=b),
        id_logits=rng.normal(size=(b, k)),
        id_gt=rng.integers(0, k, size=b),
        log_vars=rng.normal(scale=0.5, size=3),
    )


def _loss_np(inst):
    t = {k: torch.tensor(v) for k, v in inst.items()}
    return float(multitask_loss(t["bvp_pred"], t["bvp_gt"], t["hr_gt"], t["id_logits"], t["id_gt"],
                                t["log_vars"], FS))


def finite_difference_check(seed):
    rng = np.random.default_rng(seed)
    inst = _random_instance(rng)
    leaves = {k: torch.tensor(inst[k], requires_grad=True) for k in ("bvp_pred", "id_logits", "log_vars")}
    loss = multitask_loss(leaves["bvp_pred"], torch.tensor(inst["bvp_gt"]), torch.tensor(inst["hr_gt"]),
                          leaves["id_logits"], torch.tensor(inst["id_gt"]), leaves["log_vars"], FS)
    loss.backward()
    h = 1e-4
    worst = 0.0
    for name, leaf in leaves.items():
        base = inst[name]
        fd = np.empty_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += h
            minus[idx] -= h
            fd[idx] = (_loss_np({**inst, name: plus}) - _loss_np({**inst, name: minus})) / (2 * h)
        rel = np.linalg.norm(leaf.grad.numpy() - fd) / max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel)
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    assert finite_difference_check(seed) < 1e-4


def test_monotone_in_bvp_residual():
    bvp = tone()
    direction = torch.randn(64, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    s = torch.tensor([0.3, -0.2, 0.1], dtype=torch.float64)
    values = [float(multitask_terms(bvp, bvp + a * direction, 75.0, torch.zeros(3, dtype=torch.float64), 0, s, FS).total)
              for a in np.linspace(0, 2, 9)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_logit_shift_invariance():
    rng = np.random.default_rng(4)
    inst = _random_instance(rng)
    shifted = {**inst, "id_logits": inst["id_logits"] + 17.0}
    assert abs(_loss_np(inst) - _loss_np(shifted)) < 1e-9


@pytest.mark.parametrize("r", [4.0, 1.0, 0.37, 12.5])
def test_optimal_sigma_matches_numeric_minimizer(r):
    # bvp term as a function of s1 = log sigma^2
    res = minimize_scalar(lambda s: 0.5 * math.exp(-s) * r + 0.5 * s, bracket=(-5, 5), tol=1e-12)
    assert abs(math.exp(res.x) - optimal_sigma_check(r)) < 1e-6


def test_optimal_sigma_rejects_zero():
    with pytest.raises(ZeroResidual):
        optimal_sigma_check(0.0)


def test_bvp_term_minimized_at_squared_residual():
    bvp = tone()
    gt = bvp + 0.1
    sq = float(((gt - bvp) ** 2).sum())

    def term(s1):
        s = torch.tensor([s1, 0.0, 0.0], dtype=torch.float64)
        return float(multitask_terms(bvp, gt, 75.0, torch.zeros(3, dtype=torch.float64), 0, s, FS).bvp)

    res = minimize_scalar(term, bracket=(-5, 5), tol=1e-12)
    assert abs(math.exp(res.x) - optimal_sigma_check(sq)) < 1e-6


def test_invalid_class():
    bvp = tone()
    with pytest.raises(InvalidClass):
        multitask_loss(bvp, bvp, 75.0, torch.zeros(4), 4, torch.zeros(3), FS)


def test_shape_error():
    with pytest.raises(ShapeError):
        multitask_loss(tone(64), tone(32), 75.0, torch.zeros(4), 0, torch.zeros(3), FS)
