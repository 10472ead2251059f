"""Computable surrogates of the stability constants behind the fixed-point
and uniqueness arguments.

* ``gamma_h``: discrete inf-sup constant of ``b`` on ``H_{0,h} x Q_h``.
* ``c1_h``: smallest ``||tau^d||^2 / ||tau||_div^2`` over the discrete kernel.
* ``C_J = 1 / min(c1/(2 nu), c1 gamma^2 nu / 2)``.
* ``L = (||beta|| / gamma) * max(1/nu, 1/c1)``.

The eigenproblems reuse the shift-invert solver on saddle pencils carrying
the zero-mean-trace multiplier.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import SparseSystem, assemble_tensor_mass
from .eigensolver import EigenProblem, SolverError, solve_shift_invert

log = logging.getLogger(__name__)


@dataclass
class ConstantsReport:
    gamma_h: float
    c1_h: float
    C_J: float
    contraction_L: float
    uniqueness_ratio: float
    beta_norm: float
    nu: float
    contraction_ok: bool
    uniqueness_ok: bool
    # R0 window, only filled when a source norm is supplied
    f_norm: float | None = None
    H: float | None = None
    C1: float | None = None
    C2: float | None = None
    R0_min: float | None = None
    R0_max: float | None = None
    R0_feasible: bool | None = None
    warning: str | None = None

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, float) and not math.isfinite(v):
                v = str(v)
            out[k] = v
        return out


def _saddle(top_left, g, B, n_u):
    gcol = sp.csr_matrix(g.reshape(-1, 1))
    return sp.bmat(
        [[top_left, gcol, B.T], [gcol.T, None, None], [B, None, sp.csr_matrix((n_u, n_u))]],
        format="csc",
    )


def velocity_mass_inverse(system: SparseSystem) -> sp.csr_matrix:
    """Exact inverse of the block-diagonal velocity mass matrix."""
    space = system.space
    rule, _, _ = space.quadrature(2 * space.velocity_degree)
    psi = space.vbasis.values(rule.points)
    ref = np.einsum("q,aq,bq->ab", rule.weights, psi, psi)
    ref_inv = np.linalg.inv(ref)
    _, _, det = space.geometry
    idx = space.u_dofs()  # (nc, 2, nd)
    nd = idx.shape[2]
    blocks = ref_inv[None, None] / det[:, None, None, None]
    blocks = np.broadcast_to(blocks, idx.shape + (nd,))
    rows = np.repeat(idx[..., None], nd, axis=3)
    cols = np.repeat(idx[..., None, :], nd, axis=2)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(space.n_u, space.n_u))


def div_gram(system: SparseSystem) -> sp.csr_matrix:
    """``(div rho, div tau)``; equals ``B^T M^{-1} B`` because div maps into ``Q_h``."""
    B = system.B
    return (B.T @ velocity_mass_inverse(system) @ B).tocsr()


def inf_sup_constant(system: SparseSystem, tensor_mass=None, seed: int = 0) -> float:
    """``min_q sup_tau b(tau, q) / (||tau||_div ||q||_0)`` over trace-free ``tau``."""
    Ms = tensor_mass if tensor_mass is not None else assemble_tensor_mass(system.space)
    G = (Ms + div_gram(system)).tocsr()
    K = _saddle(G, system.g, system.B, system.n_u)
    n0 = system.n_sigma + 1
    Mt = sp.block_diag([sp.csr_matrix((n0, n0)), -system.M], format="csc")
    pair = solve_shift_invert(EigenProblem(K, Mt), nev=1, shift=0.0, seed=seed)[0]
    return float(np.sqrt(max(pair.value.real, 0.0)))


def kernel_coercivity(system: SparseSystem, tensor_mass=None, seed: int = 0) -> float:
    """``min ||tau^d||^2 / ||tau||^2`` over trace-free ``tau`` with ``B tau = 0``.

    On that kernel ``div tau = 0``, so this is the div-norm quotient.
    """
    Ms = tensor_mass if tensor_mass is not None else assemble_tensor_mass(system.space)
    Adev = (system.nu * system.A).tocsr()
    K = _saddle(Adev, system.g, system.B, system.n_u)
    n1 = system.n_u + 1
    Mt = sp.block_diag([Ms, sp.csr_matrix((n1, n1))], format="csc")
    pair = solve_shift_invert(EigenProblem(K, Mt), nev=1, shift=0.0, seed=seed)[0]
    return float(pair.value.real)


def r0_window(H: float, C1: float, C2: float):
    """Roots of ``(H C1 / 2) R^2 - R + H C2``; feasible when the discriminant is positive."""
    disc = 1.0 - 2.0 * H * H * C1 * C2
    if disc < 0:
        return None, None, False
    s = math.sqrt(disc)
    return (1.0 - s) / (H * C1), (1.0 + s) / (H * C1), True


def estimate_constants(system: SparseSystem, space=None, f_norm: float | None = None,
                       seed: int = 0) -> ConstantsReport:
    """Constants report for an assembled primal system.

    ``||a||`` is taken as ``1/nu``, the norm of ``a`` on ``H(div)``.
    """
    if space is not None and system.space is None:
        system.space = space
    nu = system.nu
    beta_norm = 0.0 if system.beta is None else float(system.beta.norm_inf)
    warning = None
    Ms = assemble_tensor_mass(system.space)
    try:
        gamma = inf_sup_constant(system, Ms, seed)
        c1 = kernel_coercivity(system, Ms, seed)
    except SolverError as exc:
        log.warning("constant estimation failed: %s", exc)
        gamma, c1, warning = float("nan"), float("nan"), str(exc)

    if gamma > 0 and c1 > 0:
        C_J = 1.0 / min(c1 / (2 * nu), c1 * gamma**2 * nu / 2)
        L = beta_norm / gamma * max(1.0 / nu, 1.0 / c1)
    else:
        C_J = L = float("nan")
    ratio = C_J * beta_norm / nu
    rep = ConstantsReport(
        gamma_h=gamma, c1_h=c1, C_J=C_J, contraction_L=L, uniqueness_ratio=ratio,
        beta_norm=beta_norm, nu=nu, contraction_ok=bool(L < 1), uniqueness_ok=bool(ratio < 1),
        warning=warning,
    )
    if f_norm is not None and gamma > 0 and c1 > 0:
        a_norm = 1.0 / nu
        H = 1.0 + nu / c1 * a_norm
        C1 = 1.0 / (2 * nu * gamma)
        C2 = C1 / (2 * nu * gamma) * beta_norm**2 + a_norm / gamma**2 * float(f_norm)
        lo, hi, ok = r0_window(H, C1, C2)
        rep.f_norm, rep.H, rep.C1, rep.C2 = float(f_norm), H, C1, C2
        rep.R0_min, rep.R0_max, rep.R0_feasible = lo, hi, ok
    return rep
