"""Fractional Gaussian noise generators.

Increments are returned with unit variance per step; scale by ``sqrt(k)`` to
obtain ``Var[x(t) - x(0)] = k * t**alpha`` with ``alpha = 2 * hurst``.
"""

from __future__ import annotations

import numpy as np

MAX_STEPS = 2**20


def fgn_autocovariance(n: int, hurst: float) -> np.ndarray:
    """Autocovariance of unit-variance fGn at lags ``0..n-1``."""
    k = np.arange(n, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


def circulant_eigenvalues(n: int, hurst: float) -> np.ndarray:
    gamma = fgn_autocovariance(n + 1, hurst)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    return np.fft.fft(row).real


def davies_harte(n: int, hurst: float, rng: np.random.Generator, size: int = 1):
    """Circulant-embedding fGn, shape ``(size, n)``.

    Returns ``None`` when the embedding is not nonnegative definite.
    """
    lam = circulant_eigenvalues(n, hurst)
    if lam.min() < -1e-10 * max(lam.max(), 1.0):
        return None
    lam = np.clip(lam, 0.0, None)
    m = len(lam)
    z = rng.standard_normal((size, m)) + 1j * rng.standard_normal((size, m))
    w = np.fft.fft(np.sqrt(lam / m) * z, axis=1)
    return np.ascontiguousarray(w[:, :n].real)


def hosking(n: int, hurst: float, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Durbin-Levinson recursion; exact for any valid covariance, O(n^2)."""
    gamma = fgn_autocovariance(n + 1, hurst)
    z = rng.standard_normal((size, n))
    out = np.empty((size, n))
    out[:, 0] = z[:, 0]
    phi = np.zeros(n)
    v = gamma[0]
    for t in range(1, n):
        if v <= 1e-14:
            # perfectly correlated (hurst = 1): the path is deterministic from here
            out[:, t:] = out[:, [t - 1]]
            break
        phi_tt = (gamma[t] - phi[: t - 1] @ gamma[1:t][::-1]) / v
        phi[: t - 1] = phi[: t - 1] - phi_tt * phi[: t - 1][::-1]
        phi[t - 1] = phi_tt
        v *= 1.0 - phi_tt**2
        mean = out[:, t - 1 :: -1] @ phi[:t]
        out[:, t] = mean + np.sqrt(max(v, 0.0)) * z[:, t]
    return out


def fgn(n: int, hurst: float, rng: np.random.Generator, size: int = 1, method: str = "auto"):
    """Unit-variance fractional Gaussian noise, shape ``(size, n)``.

    ``method`` is ``"auto"`` (Davies-Harte with Hosking fallback),
    ``"davies-harte"`` or ``"hosking"``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_STEPS:
        raise ValueError(f"n={n} exceeds the {MAX_STEPS}-step circulant embedding bound")
    if not 0.0 < hurst <= 1.0:
        raise ValueError(f"hurst={hurst} outside (0, 1]")
    if method == "hosking":
        return hosking(n, hurst, rng, size)
    out = davies_harte(n, hurst, rng, size)
    if out is None:
        if method == "davies-harte":
            raise ValueError("circulant embedding is not nonnegative definite")
        out = hosking(n, hurst, rng, size)
    return out
