"""Shared oracles for the test suite."""
import numpy as np


def fd_probe_errors(loss, arrays, analytic, n_probes, rng, eps=1e-6):
    """Relative errors of analytic gradients against central differences.

    ``loss()`` reads the arrays in place; ``analytic`` is aligned with ``arrays``.
    Each probe perturbs one random scalar entry.
    """
    errors = []
    for _ in range(n_probes):
        a = int(rng.integers(len(arrays)))
        flat = arrays[a].reshape(-1)
        i = int(rng.integers(flat.size))
        old = flat[i]
        flat[i] = old + eps
        up = loss()
        flat[i] = old - eps
        down = loss()
        flat[i] = old
        numeric = (up - down) / (2 * eps)
        exact = analytic[a].reshape(-1)[i]
        scale = max(abs(numeric), abs(exact))
        errors.append(0.0 if scale < 1e-9 else abs(numeric - exact) / scale)
    return np.array(errors)
