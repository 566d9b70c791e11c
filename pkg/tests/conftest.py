import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def central_diff(fn, tensors, eps=1e-6):
    """Central finite-difference gradient of scalar ``fn()`` w.r.t. each tensor (in place perturbation)."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                hi = float(fn())
                flat[k] = orig - eps
                lo = float(fn())
                flat[k] = orig
                gflat[k] = (hi - lo) / (2 * eps)
            grads.append(g)
    return grads


def relative_error(analytic, numeric):
    a = torch.cat([g.reshape(-1) for g in analytic])
    n = torch.cat([g.reshape(-1) for g in numeric])
    return float((a - n).norm() / max(float(n.norm()), 1e-12))


def autograd_vs_fd(fn, tensors, eps=1e-6):
    for t in tensors:
        t.grad = None
        t.requires_grad_(True)
    fn().backward()
    analytic = [t.grad.detach().clone() for t in tensors]
    numeric = central_diff(fn, [t.detach() for t in tensors], eps)
    return relative_error(analytic, numeric)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
