"""Shared test oracles. The finite-difference gradient here only ever calls
forward passes, so it stays independent of the backward code it checks."""

import numpy as np


def numerical_grad(loss_fn, array: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of loss_fn() w.r.t. `array`, perturbed in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = loss_fn()
        flat[i] = old - eps
        lo = loss_fn()
        flat[i] = old
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom < 1e-8:  # both effectively zero: agreement up to FD noise
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def fd_rel_error(loss_fn, array: np.ndarray, grad: np.ndarray,
                 eps: float = 1e-4, max_exact: int = 64, n_dirs: int = 6,
                 seed: int = 0) -> float:
    """Relative error between an analytic gradient and central differences.

    Small tensors are checked elementwise; larger ones via central
    differences along seeded random unit directions compared against the
    analytic directional derivative (a wrong gradient projects onto a random
    direction with probability one).
    """
    if array.size <= max_exact:
        return rel_error(grad, numerical_grad(loss_fn, array, eps))
    rng = np.random.default_rng(seed)
    flat = array.reshape(-1)
    fd = np.zeros(n_dirs)
    analytic = np.zeros(n_dirs)
    for d in range(n_dirs):
        v = rng.normal(size=flat.size)
        v /= np.linalg.norm(v)
        analytic[d] = float(grad.reshape(-1) @ v)
        backup = flat.copy()
        flat += eps * v
        hi = loss_fn()
        flat[:] = backup - eps * v
        lo = loss_fn()
        flat[:] = backup
        fd[d] = (hi - lo) / (2.0 * eps)
    return rel_error(analytic, fd)
