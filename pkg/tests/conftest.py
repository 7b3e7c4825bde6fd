import contextlib
import time

import numpy as np
import pytest

from seisunet.autodiff import Tensor, backward, mse_loss


def numeric_grad(f, arrays, eps=1e-6):
    """Central differences of scalar ``f(*arrays)`` with respect to each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            hi = f(*arrays)
            a[i] = old - eps
            lo = f(*arrays)
            a[i] = old
            g[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(a, b):
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


def gradcheck(build, arrays, eps=1e-6, seed=0):
    """Compare reverse-mode gradients of ``build`` to central differences.

    The scalar being differentiated is ``mse(build(*xs), t)`` with ``t`` the
    output shifted by a fixed random field, so every output element carries a
    different weight. Returns the worst relative error over all inputs.
    """
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    target = out.data - rng.standard_normal(out.data.shape)
    backward(mse_loss(out, Tensor(target)))
    analytic = [t.grad for t in tensors]

    def f(*arrs):
        return float(((build(*[Tensor(a) for a in arrs]).data - target) ** 2).mean())

    numeric = numeric_grad(f, [a.copy() for a in arrays], eps)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance bookkeeping: one line per criterion, repeated in the terminal summary
CRITERIA = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record PASS/FAIL for an acceptance criterion; ``info`` collects the measured values."""
    info = {}
    start = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        _emit(number, title, False, info, start, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    _emit(number, title, True, info, start)


def _emit(number, title, ok, info, start, error=None):
    parts = [f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items()]
    parts.append(f"runtime={time.perf_counter() - start:.1f}s")
    if error:
        parts.append(error)
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: " + ", ".join(parts)
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
