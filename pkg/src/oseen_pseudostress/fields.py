"""Divergence-free convective velocity fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import Mesh, contains

BETA_IDS = ("zero", "beta1", "beta2", "beta3", "beta4", "axis")

# extra quadrature degree for each field; beta2 is trigonometric and over-integrated
FIELD_DEGREE = {"zero": 0, "beta1": 0, "axis": 0, "beta2": 6, "beta3": 1, "beta4": 7}


def _beta1(p):
    return np.column_stack([np.ones(len(p)), np.zeros(len(p))])


def _beta1_jac(p):
    return np.zeros((len(p), 2, 2))


def _beta2(p):
    x, y = np.pi * p[:, 0], np.pi * p[:, 1]
    return np.column_stack([np.cos(x) * np.sin(y), -np.sin(x) * np.cos(y)])


def _beta2_jac(p):
    x, y = np.pi * p[:, 0], np.pi * p[:, 1]
    J = np.empty((len(p), 2, 2))
    J[:, 0, 0] = -np.pi * np.sin(x) * np.sin(y)
    J[:, 0, 1] = np.pi * np.cos(x) * np.cos(y)
    J[:, 1, 0] = -np.pi * np.cos(x) * np.cos(y)
    J[:, 1, 1] = np.pi * np.sin(x) * np.sin(y)
    return J


def _beta3(p):
    return np.column_stack([p[:, 1], -p[:, 0]])


def _beta3_jac(p):
    J = np.zeros((len(p), 2, 2))
    J[:, 0, 1] = 1.0
    J[:, 1, 0] = -1.0
    return J


# stream function phi = 1000 (1 - x^2)^2 (1 - y^2)^2, beta4 = (phi_y, -phi_x)
def _beta4(p):
    x, y = p[:, 0], p[:, 1]
    X, Y = (1 - x**2), (1 - y**2)
    return np.column_stack([-4000.0 * X**2 * Y * y, 4000.0 * X * x * Y**2])


def _beta4_jac(p):
    x, y = p[:, 0], p[:, 1]
    X, Y = (1 - x**2), (1 - y**2)
    J = np.empty((len(p), 2, 2))
    J[:, 0, 0] = 16000.0 * X * x * Y * y
    J[:, 0, 1] = -4000.0 * X**2 * (Y - 2 * y**2)
    J[:, 1, 0] = 4000.0 * Y**2 * (X - 2 * x**2)
    J[:, 1, 1] = -16000.0 * X * x * Y * y
    return J


def _zero(p):
    return np.zeros((len(p), 2))


_RAW = {
    "zero": (_zero, _beta1_jac),
    "beta1": (_beta1, _beta1_jac),
    "axis": (_beta1, _beta1_jac),
    "beta2": (_beta2, _beta2_jac),
    "beta3": (_beta3, _beta3_jac),
    "beta4": (_beta4, _beta4_jac),
}


@dataclass(frozen=True)
class ConvectionField:
    """``beta(x) = scaling * raw(x) / (sup_norm if normalized else 1)``."""

    id: str
    raw: Callable
    raw_jacobian: Callable
    sup_norm: float  # of the raw field over the domain
    normalized: bool = True
    scaling: float = 1.0

    @property
    def factor(self) -> float:
        if self.normalized and self.sup_norm > 0:
            return self.scaling / self.sup_norm
        return self.scaling

    @property
    def norm_inf(self) -> float:
        """Sup norm of the field actually used."""
        return abs(self.factor) * self.sup_norm

    @property
    def quad_degree(self) -> int:
        return FIELD_DEGREE[self.id]

    @property
    def is_zero(self) -> bool:
        return self.id == "zero" or self.factor == 0.0

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, float).reshape(-1, 2)
        return self.factor * self.raw(pts)

    def jacobian(self, points) -> np.ndarray:
        pts = np.asarray(points, float).reshape(-1, 2)
        return self.factor * self.raw_jacobian(pts)

    def divergence(self, points) -> np.ndarray:
        J = self.jacobian(points)
        return J[:, 0, 0] + J[:, 1, 1]

    def scaled(self, factor: float) -> "ConvectionField":
        return ConvectionField(self.id, self.raw, self.raw_jacobian, self.sup_norm,
                               self.normalized, self.scaling * factor)


def _sampled_sup(raw, domain, bounds, n=2001) -> float:
    lo, hi = bounds
    t0 = np.linspace(lo[0], hi[0], n)
    t1 = np.linspace(lo[1], hi[1], n)
    best = 0.0
    for row in np.array_split(np.arange(n), 16):
        X, Y = np.meshgrid(t0, t1[row], indexing="xy")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        pts = pts[contains(domain, pts, (lo[0], hi[0]))]
        if len(pts):
            best = max(best, float(np.max(np.linalg.norm(raw(pts), axis=1))))
    return best


_SUP_CACHE: dict = {}


def sup_norm(beta_id: str, mesh: Mesh) -> float:
    """Sup norm of the raw field over the mesh's domain."""
    lo, hi = mesh.bounding_box()
    key = (beta_id, mesh.domain, tuple(np.round(lo, 12)), tuple(np.round(hi, 12)))
    if key in _SUP_CACHE:
        return _SUP_CACHE[key]
    if beta_id == "zero":
        val = 0.0
    elif beta_id in ("beta1", "axis", "beta2"):
        val = 1.0
    elif beta_id == "beta3":
        # |(y, -x)| is largest at the vertex farthest from the origin
        val = float(np.max(np.linalg.norm(mesh.vertices, axis=1)))
    else:
        val = _sampled_sup(_RAW[beta_id][0], mesh.domain, (lo, hi))
    _SUP_CACHE[key] = val
    return val


def make_beta(beta_id: str, mesh: Mesh, normalize: bool = True,
              scale: float = 1.0) -> ConvectionField:
    if beta_id not in _RAW:
        raise ValueError(f"unknown convection field {beta_id!r}; choose from {BETA_IDS}")
    raw, jac = _RAW[beta_id]
    return ConvectionField(beta_id, raw, jac, sup_norm(beta_id, mesh),
                           normalized=normalize, scaling=float(scale))
