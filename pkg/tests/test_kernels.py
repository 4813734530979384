import numpy as np
import pytest

from fedcast import _kernels

backends = [_kernels.py] + ([_kernels.c] if _kernels.c is not None else [])


def test_backend_name():
    assert _kernels.BACKEND in ("cython", "numpy")


@pytest.mark.skipif(_kernels.c is None, reason="compiled kernels not built")
def test_compiled_matches_fallback_bitwise():
    rng = np.random.default_rng(3)
    for n in (1, 2, 7, 100, 4097):
        a = rng.normal(size=n) * 10.0 ** rng.integers(-6, 6, size=n)
        b = rng.normal(size=n)
        assert _kernels.c.l1_norm(a) == _kernels.py.l1_norm(a)
        assert _kernels.c.l1_distance(a, b) == _kernels.py.l1_distance(a, b)
        assert _kernels.c.deviation_norms(a, b) == _kernels.py.deviation_norms(a, b)
        x, y = np.zeros(n), np.zeros(n)
        for w in (0.1, 0.7, 1 / 3):
            _kernels.c.axpy(x, a, w)
            _kernels.py.axpy(y, a, w)
        assert x.tobytes() == y.tobytes()


@pytest.mark.parametrize("mod", backends)
def test_sequential_sum(mod):
    # 1 + 1e-16 + ... is order sensitive; sequential order keeps each tiny term lost
    a = np.array([1.0] + [1e-16] * 10)
    assert mod.l1_norm(a) == 1.0
    assert mod.l1_distance(np.array([1.0, -2.0]), np.array([0.5, 0.0])) == 2.5
    assert mod.deviation_norms(np.array([1.0, 0, 2]), np.array([1.0, -1, 2])) == (1.0, 4.0)


@pytest.mark.parametrize("mod", backends)
def test_axpy(mod):
    out = np.array([1.0, 2.0])
    mod.axpy(out, np.array([3.0, 4.0]), 0.5)
    assert out.tolist() == [2.5, 4.0]


def test_pure_env_selects_fallback(monkeypatch):
    import importlib
    import subprocess
    import sys
    code = "from fedcast import _kernels; print(_kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={**__import__("os").environ, "FEDCAST_PURE": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    importlib.reload(_kernels)
