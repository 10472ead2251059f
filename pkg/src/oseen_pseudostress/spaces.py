"""Raviart-Thomas / Brezzi-Douglas-Marini tensor spaces and discontinuous velocities.

A tensor field in the pseudostress space is stored row by row: each of the two
rows is a member of a scalar H(div) vector space sharing one DoF map, so
global tensor DoF ``r * n_scalar + i`` is scalar DoF ``i`` placed in row ``r``.

Reference bases are obtained by inverting the DoF-functional matrix on a
monomial spanning set. Edge DoFs are normal moments against Legendre
polynomials; interior DoFs are moments against vector ``P_{k-1}`` (RT_k) or
first-kind Nedelec ``N_{k-2}`` (BDM_k) test functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from numpy.polynomial import legendre

from .mesh import Mesh
from .quadrature import gauss_legendre_01, rule_for_degree

SUPPORTED = {"RT": (0, 1, 2), "BDM": (1, 2, 3)}

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def monomial_exponents(deg: int) -> list[tuple[int, int]]:
    return [(d - b, b) for d in range(deg + 1) for b in range(d + 1)]


def _vandermonde(points, exps, center=(0.0, 0.0)) -> np.ndarray:
    x = points[:, 0] - center[0]
    y = points[:, 1] - center[1]
    return np.stack([x**a * y**b for a, b in exps], axis=1)


def _derivative_matrices(exps):
    """Coefficient maps for d/dx and d/dy in a monomial basis."""
    index = {e: n for n, e in enumerate(exps)}
    m = len(exps)
    Dx = np.zeros((m, m))
    Dy = np.zeros((m, m))
    for n, (a, b) in enumerate(exps):
        if a > 0:
            Dx[index[(a - 1, b)], n] = a
        if b > 0:
            Dy[index[(a, b - 1)], n] = b
    return Dx, Dy


def normalize_family(family: str) -> str:
    fam = str(family).upper()
    if fam not in SUPPORTED:
        raise ValueError(f"unknown family {family!r}; expected 'RT' or 'BDM'")
    return fam


@dataclass(frozen=True, eq=False)
class Functional:
    """``l(phi) = sum_q weights[q] . phi(points[q])`` on the reference cell."""

    points: np.ndarray
    weights: np.ndarray
    edge: int = -1  # local edge, -1 for interior
    moment: int = 0  # Legendre index for edge moments

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return np.einsum("...qd,qd->...", values, self.weights)


def _edge_functionals(k_edge: int, nquad: int) -> list[Functional]:
    s, w = gauss_legendre_01(nquad)
    out = []
    for i in range(3):
        a = REF_VERTICES[(i + 1) % 3]
        b = REF_VERTICES[(i + 2) % 3]
        t = b - a
        length = np.hypot(*t)
        normal = np.array([t[1], -t[0]]) / length
        pts = a + s[:, None] * t
        for j in range(k_edge + 1):
            lj = legendre.legval(2.0 * s - 1.0, np.eye(k_edge + 1)[j])
            wts = (w * length * lj)[:, None] * normal[None, :]
            out.append(Functional(pts, wts, edge=i, moment=j))
    return out


def _interior_test_fields(family: str, k: int):
    """Coefficient arrays (2, nm) of the interior moment test functions."""
    fields = []
    if family == "RT":
        exps = monomial_exponents(max(k - 1, 0))
        if k >= 1:
            for a, b in exps:
                fields.append(((a, b), 0))
                fields.append(((a, b), 1))
        return fields, exps
    # BDM_k: first-kind Nedelec of order k-2 (dimension (k-1)(k+1))
    exps = monomial_exponents(max(k - 1, 0))
    if k >= 2:
        for a, b in monomial_exponents(k - 2):
            fields.append(((a, b), 0))
            fields.append(((a, b), 1))
        for a in range(k - 1):
            b = k - 2 - a
            fields.append(((a, b), "rot"))  # (-y, x) * x^a y^b
    return fields, exps


def _eval_test_field(spec, points):
    (a, b), comp = spec
    m = points[:, 0] ** a * points[:, 1] ** b
    out = np.zeros((points.shape[0], 2))
    if comp == "rot":
        out[:, 0] = -points[:, 1] * m
        out[:, 1] = points[:, 0] * m
    else:
        out[:, comp] = m
    return out


@dataclass(frozen=True, eq=False)
class ScalarVectorBasis:
    """Reference H(div) basis for one row of the tensor space."""

    family: str
    degree: int
    exponents: list
    coeffs: np.ndarray  # (nb, 2, nm) monomial coefficients
    div_coeffs: np.ndarray  # (nb, nm)
    functionals: list
    n_edge_dofs: int  # per edge
    n_interior_dofs: int
    poly_degree: int

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    def values(self, points) -> np.ndarray:
        """Basis values, shape ``(nb, npts, 2)``."""
        V = _vandermonde(np.asarray(points, float), self.exponents)
        return np.einsum("pm,bdm->bpd", V, self.coeffs)

    def divergence(self, points) -> np.ndarray:
        V = _vandermonde(np.asarray(points, float), self.exponents)
        return self.div_coeffs @ V.T

    def dof_matrix(self) -> np.ndarray:
        """``D[i, j] = l_i(phi_j)``; the identity for a unisolvent basis."""
        return np.array([f(self.values(f.points)) for f in self.functionals])


@lru_cache(maxsize=None)
def reference_basis(family: str, k: int) -> ScalarVectorBasis:
    family = normalize_family(family)
    if k not in SUPPORTED[family]:
        raise ValueError(
            f"unsupported {family}_{k}; supported degrees: {SUPPORTED[family]}"
        )
    poly_degree = k + 1 if family == "RT" else k
    exps = monomial_exponents(poly_degree)
    index = {e: n for n, e in enumerate(exps)}
    nm = len(exps)

    span = []
    for a, b in monomial_exponents(k):
        for comp in (0, 1):
            c = np.zeros((2, nm))
            c[comp, index[(a, b)]] = 1.0
            span.append(c)
    if family == "RT":
        for a in range(k + 1):
            b = k - a
            c = np.zeros((2, nm))
            c[0, index[(a + 1, b)]] = 1.0
            c[1, index[(a, b + 1)]] = 1.0
            span.append(c)
    span = np.array(span)

    n_edge = k + 1
    functionals = _edge_functionals(n_edge - 1, poly_degree + 2)
    tests, _ = _interior_test_fields(family, k)
    rule = rule_for_degree(2 * poly_degree)
    for spec in tests:
        w = rule.weights[:, None] * _eval_test_field(spec, rule.points)
        functionals.append(Functional(rule.points, w))

    if len(functionals) != span.shape[0]:
        raise AssertionError("DoF count does not match space dimension")

    def eval_span(points):
        V = _vandermonde(points, exps)
        return np.einsum("pm,bdm->bpd", V, span)

    D = np.array([f(eval_span(f.points)) for f in functionals])
    X = np.linalg.solve(D, np.eye(D.shape[0]))  # phi_i = sum_j X[j, i] span_j
    coeffs = np.einsum("ji,jdm->idm", X, span)
    coeffs[np.abs(coeffs) < 1e-13] = 0.0
    Dx, Dy = _derivative_matrices(exps)
    div = coeffs[:, 0, :] @ Dx.T + coeffs[:, 1, :] @ Dy.T
    basis = ScalarVectorBasis(
        family=family,
        degree=k,
        exponents=exps,
        coeffs=coeffs,
        div_coeffs=div,
        functionals=functionals,
        n_edge_dofs=n_edge,
        n_interior_dofs=len(tests),
        poly_degree=poly_degree,
    )
    return basis


@dataclass(frozen=True, eq=False)
class ScalarBasis:
    """Monomials centred at the reference barycentre; P_k on each cell."""

    degree: int
    exponents: list

    @property
    def dim(self) -> int:
        return len(self.exponents)

    def values(self, points) -> np.ndarray:
        """Shape ``(nd, npts)``."""
        return _vandermonde(np.asarray(points, float), self.exponents,
                            center=(1 / 3, 1 / 3)).T


@lru_cache(maxsize=None)
def velocity_basis(k: int) -> ScalarBasis:
    return ScalarBasis(k, monomial_exponents(k))


def velocity_degree(family: str, k: int) -> int:
    """Velocity degree paired with ``family_k``: RT_k/P_k and BDM_{k+1}/P_k."""
    return k if normalize_family(family) == "RT" else k - 1


@dataclass(eq=False)
class SpacePair:
    """The discrete pair (tensor H(div) space, discontinuous vector P_k)."""

    mesh: Mesh
    family: str
    degree: int
    basis: ScalarVectorBasis
    vbasis: ScalarBasis
    scalar_dofs: np.ndarray  # (nc, nb) global scalar DoF per local basis function
    signs: np.ndarray  # (nc, nb) orientation factor +-1
    n_scalar: int
    trace_vector: np.ndarray = field(default=None, repr=False)

    @property
    def n_sigma(self) -> int:
        return 2 * self.n_scalar

    @property
    def n_u(self) -> int:
        return 2 * self.vbasis.dim * self.mesh.n_cells

    @property
    def velocity_degree(self) -> int:
        return self.vbasis.degree

    @cached_property
    def geometry(self):
        return self.mesh.jacobians()

    def sigma_dofs(self) -> np.ndarray:
        """``(nc, 2, nb)`` global tensor DoFs, row-major."""
        d = self.scalar_dofs
        return np.stack([d, d + self.n_scalar], axis=1)

    def u_dofs(self) -> np.ndarray:
        """``(nc, 2, nd)`` global velocity DoFs; component blocks are contiguous."""
        nc, nd = self.mesh.n_cells, self.vbasis.dim
        base = np.arange(nc * nd).reshape(nc, nd)
        return np.stack([base, base + nc * nd], axis=1)

    def quadrature(self, degree: int):
        """Reference rule plus physical points ``(nc, nq, 2)`` and weights ``(nc, nq)``."""
        rule = rule_for_degree(degree)
        origin, J, det = self.geometry
        pts = origin[:, None, :] + np.einsum("cij,qj->cqi", J, rule.points)
        return rule, pts, det[:, None] * rule.weights[None, :]

    def tensor_values(self, rule) -> np.ndarray:
        """Piola-mapped scalar-row basis values at ``rule`` points, ``(nc, nb, nq, 2)``.

        The orientation signs are already applied.
        """
        _, J, det = self.geometry
        ref = self.basis.values(rule.points)
        phys = np.einsum("cij,bqj->cbqi", J, ref) / det[:, None, None, None]
        return phys * self.signs[:, :, None, None]

    def tensor_divergence(self, rule) -> np.ndarray:
        """Divergence of the mapped basis, ``(nc, nb, nq)``, signs applied."""
        _, _, det = self.geometry
        ref = self.basis.divergence(rule.points)
        return ref[None] / det[:, None, None] * self.signs[:, :, None]

    def interpolate(self, func) -> np.ndarray:
        """Canonical interpolant of a tensor field ``func(points) -> (n, 2, 2)``."""
        origin, J, det = self.geometry
        Jinv = np.linalg.inv(J)
        coeffs = np.zeros(self.n_sigma)
        nc = self.mesh.n_cells
        for i, fn in enumerate(self.basis.functionals):
            pts = origin[:, None, :] + np.einsum("cij,qj->cqi", J, fn.points)
            vals = np.asarray(func(pts.reshape(-1, 2)), float).reshape(nc, -1, 2, 2)
            # pull each row back: det * J^{-1} w
            ref = np.einsum("cij,cqrj->crqi", Jinv, vals) * det[:, None, None, None]
            local = np.einsum("crqi,qi->cr", ref, fn.weights) * self.signs[:, i, None]
            for r in range(2):
                coeffs[r * self.n_scalar + self.scalar_dofs[:, i]] = local[:, r]
        return coeffs

    def evaluate_sigma(self, coeffs, ref_points) -> np.ndarray:
        """Tensor values ``(nc, npts, 2, 2)`` at reference points of every cell."""
        _, J, det = self.geometry
        ref = self.basis.values(ref_points)
        phys = np.einsum("cij,bqj->cbqi", J, ref) / det[:, None, None, None]
        phys = phys * self.signs[:, :, None, None]
        dofs = self.sigma_dofs()
        c = np.asarray(coeffs)[dofs]  # (nc, 2, nb)
        return np.einsum("crb,cbqi->cqri", c, phys)

    def evaluate_sigma_div(self, coeffs, ref_points) -> np.ndarray:
        _, _, det = self.geometry
        ref = self.basis.divergence(ref_points)
        phys = ref[None] / det[:, None, None] * self.signs[:, :, None]
        c = np.asarray(coeffs)[self.sigma_dofs()]
        return np.einsum("crb,cbq->cqr", c, phys)

    def evaluate_u(self, coeffs, ref_points) -> np.ndarray:
        """Velocity values ``(nc, npts, 2)`` at reference points of every cell."""
        psi = self.vbasis.values(ref_points)  # (nd, q)
        c = np.asarray(coeffs)[self.u_dofs()]  # (nc, 2, nd)
        return np.einsum("crd,dq->cqr", c, psi)


def build_space_pair(mesh: Mesh, family: str, k: int) -> SpacePair:
    basis = reference_basis(family, k)
    family = basis.family
    vbasis = velocity_basis(velocity_degree(family, k))
    ne, nc = mesh.n_edges, mesh.n_cells
    ned, nint = basis.n_edge_dofs, basis.n_interior_dofs
    n_scalar = ne * ned + nc * nint

    dofs = np.empty((nc, basis.dim), dtype=np.int64)
    signs = np.ones((nc, basis.dim), dtype=float)
    for n, fn in enumerate(basis.functionals):
        if fn.edge >= 0:
            dofs[:, n] = mesh.cell_edges[:, fn.edge] * ned + fn.moment
            # normal flips with the edge direction; odd Legendre moments flip too
            signs[:, n] = mesh.edge_signs[:, fn.edge].astype(float) ** (fn.moment + 1)
        else:
            m = n - 3 * ned
            dofs[:, n] = ne * ned + np.arange(nc) * nint + m
    pair = SpacePair(
        mesh=mesh,
        family=family,
        degree=k,
        basis=basis,
        vbasis=vbasis,
        scalar_dofs=dofs,
        signs=signs,
        n_scalar=n_scalar,
    )
    pair.trace_vector = _trace_vector(pair)
    return pair


def _trace_vector(pair: SpacePair) -> np.ndarray:
    """``g`` with ``g @ coeffs == integral of tr(sigma_h)``."""
    rule, _, wdet = pair.quadrature(pair.basis.poly_degree)
    phi = pair.tensor_values(rule)  # (nc, nb, nq, 2)
    g = np.zeros(pair.n_sigma)
    for r in range(2):
        local = np.einsum("cbq,cq->cb", phi[..., r], wdet)
        np.add.at(g, r * pair.n_scalar + pair.scalar_dofs, local)
    return g
