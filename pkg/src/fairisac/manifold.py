"""Complex sphere ``{z : ||z||^2 = P}`` with the real inner product ``Re{a^H b}``."""

from __future__ import annotations

import numpy as np


class ManifoldError(ValueError):
    pass


def real_inner(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ManifoldError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.vdot(a, b).real)


class ComplexSphere:
    """Sphere of squared radius ``power``.

    Base points are not re-validated on every call; use :meth:`check_point`
    where a guarantee is needed.
    """

    def __init__(self, power: float):
        if not power > 0:
            raise ManifoldError("power must be > 0")
        self.power = float(power)

    def check_point(self, z, rtol: float = 1e-9) -> None:
        p = real_inner(z, z)
        if abs(p - self.power) > rtol * self.power:
            raise ManifoldError(f"point has ||z||^2 = {p!r}, expected {self.power!r}")

    def project(self, z, d) -> np.ndarray:
        """Orthogonal projection of ``d`` onto the tangent space at ``z``."""
        return np.asarray(d) - (real_inner(z, d) / self.power) * np.asarray(z)

    def riemannian_grad(self, z, egrad) -> np.ndarray:
        return self.project(z, egrad)

    def retract(self, z, step: float, direction) -> np.ndarray:
        """``sqrt(P) * (z + step*d) / ||z + step*d||``."""
        y = np.asarray(z) + step * np.asarray(direction)
        nrm = np.linalg.norm(y)
        if not nrm > 0:
            raise ManifoldError("degenerate retraction: z + step*d = 0")
        return np.sqrt(self.power) * (y / nrm)

    def tangency_residual(self, z, eta) -> float:
        """``|Re{z^H eta}| / (||z|| ||eta||)``, 0 for a zero vector."""
        scale = np.linalg.norm(z) * np.linalg.norm(eta)
        return 0.0 if scale == 0 else abs(real_inner(z, eta)) / scale

    def random_point(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        return np.sqrt(self.power) * z / np.linalg.norm(z)
