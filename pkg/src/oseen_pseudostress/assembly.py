"""Sparse assembly of the pseudostress-velocity blocks.

With ``tau`` the tensor unknown, ``v`` the velocity and ``nu`` the viscosity:

* ``A``: (1/nu) (rho^d, tau^d)
* ``B``: (div tau, v)
* ``C``: (1/nu) ((v (x) beta)^d, tau), stored velocity-by-tensor
* ``M``: (u, v)
* ``g``: integral of tr(tau)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fields import ConvectionField
from .spaces import SpacePair


@dataclass(eq=False)
class SparseSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    M: sp.csr_matrix
    g: np.ndarray
    nu: float
    beta: ConvectionField | None = None
    adjoint: bool = False
    space: SpacePair | None = field(default=None, repr=False)

    @property
    def n_sigma(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.M.shape[0]

    @property
    def size(self) -> int:
        return self.n_sigma + 1 + self.n_u

    def saddle_matrix(self) -> sp.csc_matrix:
        """``[[A, g, X^T], [g^T, 0, 0], [Y, 0, 0]]`` with the multiplier row for the
        zero-mean-trace constraint.

        Primal: ``X = B + C``, ``Y = B``. Adjoint: ``X = B``, ``Y = B + C``,
        which is the transpose of the primal matrix.
        """
        g = sp.csr_matrix(self.g.reshape(-1, 1))
        top = self.B + self.C if not self.adjoint else self.B
        bottom = self.B if not self.adjoint else self.B + self.C
        K = sp.bmat(
            [
                [self.A, g, top.T],
                [g.T, None, None],
                [bottom, None, sp.csr_matrix((self.n_u, self.n_u))],
            ],
            format="csc",
        )
        K.sort_indices()
        return K

    def mass_matrix(self) -> sp.csc_matrix:
        """``diag(0, 0, -M)``: eigenvalues then match ``b(sigma, v) = -lambda (u, v)``."""
        n0 = self.n_sigma + 1
        Mt = sp.block_diag([sp.csr_matrix((n0, n0)), -self.M], format="csc")
        Mt.sort_indices()
        return Mt

    def export_matrix_market(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tag = "adjoint_" if self.adjoint else ""
        written = []
        for name, mat in (("K", self.saddle_matrix()), ("Mtilde", self.mass_matrix()),
                          ("A", self.A), ("B", self.B), ("C", self.C), ("M", self.M)):
            path = directory / f"{tag}{name}.mtx"
            scipy.io.mmwrite(str(path), sp.coo_matrix(mat), precision=17)
            written.append(path)
        return written


def _scatter(rows, cols, vals, shape) -> sp.csr_matrix:
    """COO assembly; duplicates summed after a stable (row, col) sort."""
    r = rows.ravel()
    c = cols.ravel()
    v = vals.ravel()
    order = np.lexsort((c, r))
    mat = sp.coo_matrix((v[order], (r[order], c[order])), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _tensor_index(space: SpacePair) -> np.ndarray:
    """``(nc, 2 * nb)`` global tensor DoFs ordered (row, basis)."""
    return space.sigma_dofs().reshape(space.mesh.n_cells, -1)


def _velocity_index(space: SpacePair) -> np.ndarray:
    return space.u_dofs().reshape(space.mesh.n_cells, -1)


def _quad_degree(space: SpacePair, extra: int = 0) -> int:
    return 2 * space.basis.poly_degree + extra


def assemble_A(space: SpacePair, nu: float) -> sp.csr_matrix:
    rule, _, wdet = space.quadrature(_quad_degree(space))
    phi = space.tensor_values(rule)  # (nc, nb, nq, 2)
    full = np.einsum("cq,caqd,cbqd->cab", wdet, phi, phi)
    tr = np.einsum("cq,caqr,cbqs->crasb", wdet, phi, phi)  # phi_a[r] phi_b[s]
    nc, nb = full.shape[:2]
    local = np.zeros((nc, 2, nb, 2, nb))
    for r in range(2):
        local[:, r, :, r, :] += full
    local -= 0.5 * tr
    local = local.reshape(nc, 2 * nb, 2 * nb) / nu
    idx = _tensor_index(space)
    rows = np.repeat(idx[:, :, None], 2 * nb, axis=2)
    cols = np.repeat(idx[:, None, :], 2 * nb, axis=1)
    A = _scatter(rows, cols, local, (space.n_sigma, space.n_sigma))
    return ((A + A.T) * 0.5).tocsr()


def assemble_tensor_mass(space: SpacePair) -> sp.csr_matrix:
    """Full L2 Gram matrix ``(rho, tau)`` of the tensor space."""
    rule, _, wdet = space.quadrature(_quad_degree(space))
    phi = space.tensor_values(rule)
    full = np.einsum("cq,caqd,cbqd->cab", wdet, phi, phi)
    nc, nb = full.shape[:2]
    local = np.zeros((nc, 2, nb, 2, nb))
    for r in range(2):
        local[:, r, :, r, :] = full
    local = local.reshape(nc, 2 * nb, 2 * nb)
    idx = _tensor_index(space)
    rows = np.repeat(idx[:, :, None], 2 * nb, axis=2)
    cols = np.repeat(idx[:, None, :], 2 * nb, axis=1)
    Ms = _scatter(rows, cols, local, (space.n_sigma, space.n_sigma))
    return ((Ms + Ms.T) * 0.5).tocsr()


def assemble_B(space: SpacePair) -> sp.csr_matrix:
    kv = space.velocity_degree
    rule, _, wdet = space.quadrature(space.basis.poly_degree + kv)
    div = space.tensor_divergence(rule)  # (nc, nb, nq)
    psi = space.vbasis.values(rule.points)  # (nd, nq)
    blk = np.einsum("cq,cbq,dq->cdb", wdet, div, psi)  # (nc, nd, nb)
    nc, nd, nb = blk.shape
    local = np.zeros((nc, 2, nd, 2, nb))
    for r in range(2):
        local[:, r, :, r, :] = blk
    local = local.reshape(nc, 2 * nd, 2 * nb)
    ri = _velocity_index(space)
    ci = _tensor_index(space)
    rows = np.repeat(ri[:, :, None], 2 * nb, axis=2)
    cols = np.repeat(ci[:, None, :], 2 * nd, axis=1)
    return _scatter(rows, cols, local, (space.n_u, space.n_sigma))


def assemble_C(space: SpacePair, beta: ConvectionField, nu: float) -> sp.csr_matrix:
    if beta is None or beta.is_zero:
        return sp.csr_matrix((space.n_u, space.n_sigma))
    kv = space.velocity_degree
    rule, pts, wdet = space.quadrature(space.basis.poly_degree + kv + beta.quad_degree)
    nc, nq = wdet.shape
    b = beta(pts.reshape(-1, 2)).reshape(nc, nq, 2)
    phi = space.tensor_values(rule)  # (nc, nb, nq, 2)
    psi = space.vbasis.values(rule.points)  # (nd, nq)
    bphi = np.einsum("cqd,cbqd->cbq", b, phi)
    nb, nd = phi.shape[1], psi.shape[0]
    # ((v (x) beta)^d : tau) for v = psi e_c, tau = phi e_r (row r)
    local = np.zeros((nc, 2, nd, 2, nb))
    same = np.einsum("cq,dq,cbq->cdb", wdet, psi, bphi)
    for c in range(2):
        local[:, c, :, c, :] += same
        for r in range(2):
            local[:, c, :, r, :] -= 0.5 * np.einsum(
                "cq,dq,cq,cbq->cdb", wdet, psi, b[:, :, c], phi[..., r]
            )
    local = local.reshape(nc, 2 * nd, 2 * nb) / nu
    ri = _velocity_index(space)
    ci = _tensor_index(space)
    rows = np.repeat(ri[:, :, None], 2 * nb, axis=2)
    cols = np.repeat(ci[:, None, :], 2 * nd, axis=1)
    return _scatter(rows, cols, local, (space.n_u, space.n_sigma))


def assemble_M(space: SpacePair) -> sp.csr_matrix:
    kv = space.velocity_degree
    rule, _, wdet = space.quadrature(2 * kv)
    psi = space.vbasis.values(rule.points)
    blk = np.einsum("cq,aq,bq->cab", wdet, psi, psi)
    nc, nd, _ = blk.shape
    local = np.zeros((nc, 2, nd, 2, nd))
    for r in range(2):
        local[:, r, :, r, :] = blk
    local = local.reshape(nc, 2 * nd, 2 * nd)
    idx = _velocity_index(space)
    rows = np.repeat(idx[:, :, None], 2 * nd, axis=2)
    cols = np.repeat(idx[:, None, :], 2 * nd, axis=1)
    M = _scatter(rows, cols, local, (space.n_u, space.n_u))
    return ((M + M.T) * 0.5).tocsr()


def _check_nu(nu) -> float:
    nu = float(nu)
    if not np.isfinite(nu) or nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu!r}")
    return nu


def assemble_forms(space: SpacePair, beta: ConvectionField | None, nu: float) -> SparseSystem:
    nu = _check_nu(nu)
    return SparseSystem(
        A=assemble_A(space, nu),
        B=assemble_B(space),
        C=assemble_C(space, beta, nu),
        M=assemble_M(space),
        g=space.trace_vector.copy(),
        nu=nu,
        beta=beta,
        space=space,
    )


def assemble_adjoint(space: SpacePair, beta: ConvectionField | None, nu: float,
                     primal: SparseSystem | None = None) -> SparseSystem:
    """Dual system: the convection coupling moves from the tensor test equation
    to the velocity equation, so the saddle matrix is the primal transpose."""
    base = primal if primal is not None else assemble_forms(space, beta, nu)
    return SparseSystem(base.A, base.B, base.C, base.M, base.g.copy(), base.nu,
                        base.beta, adjoint=True, space=space)


def assemble_source_rhs(space: SpacePair, f) -> np.ndarray:
    """Entries ``-(f, v_i)`` for every velocity basis function ``v_i``."""
    kv = space.velocity_degree
    rule, pts, wdet = space.quadrature(min(2 * kv + 8, 20))
    nc, nq = wdet.shape
    fv = np.asarray(f(pts.reshape(-1, 2)), float).reshape(nc, nq, 2)
    psi = space.vbasis.values(rule.points)
    local = -np.einsum("cq,cqr,dq->crd", wdet, fv, psi)  # (nc, 2, nd)
    out = np.zeros(space.n_u)
    out[space.u_dofs()] = local
    return out
