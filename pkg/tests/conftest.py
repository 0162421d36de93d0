import numpy as np
import pytest


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of a scalar function f at x (float64)."""
    x = np.asarray(x, dtype=np.float64).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_err(analytic, numeric):
    """Max absolute difference relative to the larger gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def check_grad(f, x, analytic, tol=1e-3, eps=1e-5, zero_atol=1e-8):
    numeric = numeric_grad(f, x, eps)
    if np.abs(analytic).max() < zero_atol and np.abs(numeric).max() < zero_atol:
        return 0.0  # genuinely zero gradient: both sides are pure noise
    err = max_rel_err(analytic, numeric)
    assert err <= tol, f"gradient mismatch: rel err {err:.2e} > {tol:.0e}"
    return err


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """Shared 4-class synthetic dataset: 100 images per class at 64x64."""
    from docgrid import synthdoc
    from docgrid.data import load_dataset

    root = tmp_path_factory.mktemp("synth_data")
    manifest = synthdoc.generate_dataset(100, synthdoc.CLASSES, 7, 64,
                                         str(root))
    return load_dataset(manifest)
