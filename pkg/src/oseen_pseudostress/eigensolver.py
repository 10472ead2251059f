"""Shift-and-invert eigensolver for the singular pencil ``K x = lambda Mt x``.

``Mt`` is singular (zero on the tensor and multiplier blocks), so the pencil
carries an infinite eigenvalue of high multiplicity. With the spectral
transform ``Op = (K - s Mt)^{-1} Mt`` those modes map to ``theta = 0`` and the
finite eigenvalues are ``lambda = s + 1 / theta``. A restarted Krylov-Schur
iteration extracts the ``theta`` of largest modulus.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SparseSystem

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when the factorization or the Krylov iteration breaks down."""


@dataclass(eq=False)
class EigenProblem:
    K: sp.spmatrix
    Mt: sp.spmatrix
    system: SparseSystem | None = field(default=None, repr=False)

    @classmethod
    def from_system(cls, system: SparseSystem) -> "EigenProblem":
        return cls(system.saddle_matrix(), system.mass_matrix(), system)

    @property
    def n(self) -> int:
        return self.K.shape[0]


@dataclass(frozen=True, eq=False)
class EigenPair:
    value: complex
    vector: np.ndarray
    residual: float  # ||K x - lambda Mt x|| / ||x||

    def split(self, system: SparseSystem):
        """``(sigma, multiplier, u)`` slices of the eigenvector."""
        ns = system.n_sigma
        return self.vector[:ns], self.vector[ns], self.vector[ns + 1:]


@dataclass(frozen=True)
class SolveInfo:
    converged: int
    iterations: int
    n_matvec: int
    shift: complex


def _order(values: np.ndarray, rel=1e-9) -> np.ndarray:
    """Ascending modulus; near-equal moduli (conjugate pairs) by imaginary part."""
    mod = np.abs(values)
    idx = np.argsort(mod, kind="stable")
    groups = []
    for i in idx:
        if groups and abs(mod[i] - mod[groups[-1][0]]) <= rel * max(1.0, mod[i]):
            groups[-1].append(i)
        else:
            groups.append([i])
    out = []
    for g in groups:
        out.extend(sorted(g, key=lambda j: (values[j].imag, values[j].real)))
    return np.array(out, dtype=int)


def _orthonormalize(V, w, k):
    """Two passes of classical Gram-Schmidt against ``V[:, :k]``."""
    h = V[:, :k].conj().T @ w
    w = w - V[:, :k] @ h
    h2 = V[:, :k].conj().T @ w
    w = w - V[:, :k] @ h2
    return w, h + h2


def krylov_schur(op, n, nev, ncv=None, tol=1e-10, maxiter=300, v0=None,
                 rng=None):
    """Largest-modulus eigenpairs of the linear map ``op`` on ``C^n``.

    Returns ``(theta, vectors, n_converged, iterations, n_matvec)``.
    """
    nev = int(min(nev, n))
    ncv = int(min(n, ncv if ncv is not None else max(20, 4 * nev)))
    ncv = max(ncv, min(n, nev + 2))
    rng = np.random.default_rng(0) if rng is None else rng
    if v0 is None:
        v0 = rng.standard_normal(n) + 0j
    v0 = np.asarray(v0, complex)
    nrm = np.linalg.norm(v0)
    if nrm == 0:
        raise SolverError("zero starting vector")

    V = np.zeros((n, ncv + 1), complex)
    H = np.zeros((ncv + 1, ncv), complex)
    V[:, 0] = v0 / nrm
    k = 0  # size of the locked-in Krylov-Schur basis
    n_matvec = 0
    it = 0
    theta = np.zeros(0, complex)
    Y = np.zeros((0, 0), complex)
    m = ncv
    for it in range(1, maxiter + 1):
        m = ncv
        j = k
        while j < ncv:
            w = op(V[:, j])
            n_matvec += 1
            w, h = _orthonormalize(V, w, j + 1)
            H[: j + 1, j] = h
            beta = np.linalg.norm(w)
            scale = max(np.linalg.norm(H[: j + 2, : j + 1]), 1e-300)
            if beta <= 1e-13 * scale:
                H[j + 1, j] = 0.0
                m = j + 1
                break
            H[j + 1, j] = beta
            V[:, j + 1] = w / beta
            j += 1
        Hm = H[:m, :m]
        T, Z = sla.schur(Hm, output="complex")
        # Ritz residual of pair i is |h_{m+1,m}| * |y_i[m-1]|
        theta, S = sla.eig(T)
        Y = Z @ S
        Y /= np.linalg.norm(Y, axis=0)
        hlast = abs(H[m, m - 1]) if m < H.shape[0] and m == ncv else 0.0
        res = hlast * np.abs(Y[m - 1, :])
        order = np.argsort(-np.abs(theta), kind="stable")
        want = order[: min(nev, m)]
        thr = tol * np.maximum(np.abs(theta[want]), 1e-300)
        nconv = int(np.sum(res[want] <= thr))
        if nconv >= min(nev, m) or hlast == 0.0:
            break
        # restart: keep the leading part of the sorted Schur form
        p = min(m - 1, nev + (m - nev) // 2)
        mags = np.sort(np.abs(np.diag(T)))[::-1]
        cut = 0.5 * (mags[p - 1] + mags[p]) if p < m else 0.0
        if mags[p - 1] == mags[min(p, m - 1)]:
            cut = mags[p - 1] * (1 - 1e-12)
        T2, Z2, sdim = sla.schur(Hm, output="complex", sort=lambda x: abs(x) > cut)
        if sdim == 0:
            raise SolverError("restart selected no Ritz values")
        k = int(sdim)
        b = H[m, m - 1] * Z2[m - 1, :k]
        Vnew = V[:, :m] @ Z2[:, :k]
        V[:, :k] = Vnew
        V[:, k] = V[:, m]
        V[:, k + 1:] = 0.0
        H[:] = 0.0
        H[:k, :k] = T2[:k, :k]
        H[k, :k] = b
    else:
        log.warning("Krylov-Schur reached maxiter=%d", maxiter)

    order = np.argsort(-np.abs(theta), kind="stable")[: min(nev, m)]
    vecs = V[:, :m] @ Y[:, order]
    hlast = abs(H[m, m - 1]) if m == ncv else 0.0
    res = hlast * np.abs(Y[m - 1, order])
    nconv = int(np.sum(res <= tol * np.maximum(np.abs(theta[order]), 1e-300)))
    return theta[order], vecs, nconv, it, n_matvec


def _factor(K, Mt, shift):
    A = (K - shift * Mt).astype(complex).tocsc()
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:  # exactly singular
        raise SolverError(f"factorization at shift {shift} failed: {exc}") from exc
    if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) == 0:
        raise SolverError(f"shift {shift} is an eigenvalue or the pencil is singular")
    return lu


def pair_residual(K, Mt, lam, x) -> float:
    r = K @ x - lam * (Mt @ x)
    return float(np.linalg.norm(r) / max(np.linalg.norm(x), 1e-300))


def solve_shift_invert(problem: EigenProblem, nev: int = 1, shift: complex = 0.0,
                       tol: float = 1e-10, ncv: int | None = None,
                       maxiter: int = 300, seed: int = 0, return_info: bool = False):
    """``nev`` finite eigenpairs closest to ``shift``, ordered by modulus.

    Eigenvectors are normalized so the velocity block has unit mass-norm and
    its largest entry is real positive.
    """
    K = sp.csc_matrix(problem.K)
    Mt = sp.csc_matrix(problem.Mt)
    n = K.shape[0]
    if nev < 1:
        raise ValueError("nev must be at least 1")
    lu = _factor(K, Mt, shift)

    def op(x):
        return lu.solve(np.asarray(Mt @ x, complex))

    rng = np.random.default_rng(seed)
    v0 = op(rng.standard_normal(n) + 0j)  # purge the component in ker(Mt)
    if np.linalg.norm(v0) == 0:
        raise SolverError("pencil has no finite eigenvalues")
    n_finite = int(np.count_nonzero(Mt.diagonal())) if sp.issparse(Mt) else n
    nwant = int(min(nev, max(n_finite, 1)))
    theta, vecs, nconv, it, nmv = krylov_schur(
        op, n, nwant, ncv=ncv, tol=tol, maxiter=maxiter, v0=v0, rng=rng
    )
    keep = np.abs(theta) > 1e-10 * max(1.0, np.max(np.abs(theta), initial=0.0))
    theta, vecs = theta[keep], vecs[:, keep]
    lam = shift + 1.0 / theta
    real_pencil = not (np.iscomplexobj(K.data) or np.iscomplexobj(Mt.data))
    pairs = []
    for i in range(lam.size):
        x = vecs[:, i]
        Mx = Mt @ x
        den = np.vdot(Mx, Mx)
        if den != 0:
            lam_i = np.vdot(Mx, K @ x) / den
            if abs(lam_i - lam[i]) <= 1e-6 * max(1.0, abs(lam[i])):
                lam[i] = lam_i
        if real_pencil and abs(lam[i].imag) <= 1e-10 * max(1.0, abs(lam[i])):
            lam[i] = lam[i].real
        x = _normalize(x, Mt)
        pairs.append(EigenPair(complex(lam[i]), x, pair_residual(K, Mt, lam[i], x)))
    if real_pencil:
        # conjugate pairs are exact for real pencils; complete them so the
        # modulus ordering (negative imaginary part first) is canonical
        vals = [p.value for p in pairs]
        for p in list(pairs):
            z = np.conj(p.value)
            if z != p.value and min(abs(v - z) for v in vals) > 1e-8 * max(1.0, abs(z)):
                x = np.conj(p.vector)
                pairs.append(EigenPair(complex(z), x, pair_residual(K, Mt, z, x)))
                vals.append(z)
    order = _order(np.array([p.value for p in pairs]))
    pairs = [pairs[i] for i in order][:nev]
    if nconv < min(nwant, lam.size):
        log.warning("only %d of %d Ritz pairs met tol=%g", nconv, nwant, tol)
    if return_info:
        return pairs, SolveInfo(nconv, it, nmv, complex(shift))
    return pairs


def _normalize(x, Mt):
    nrm = np.sqrt(abs(np.vdot(x, -(Mt @ x)))) if sp.issparse(Mt) else 0.0
    if not nrm > 0:
        nrm = np.linalg.norm(x)
    x = x / nrm
    i = int(np.argmax(np.abs(x)))
    if x[i] != 0:
        a = abs(x[i])
        x = x * (a / x[i])
        x[i] = a
    return x


def dense_generalized_eigenvalues(K, Mt) -> np.ndarray:
    """All finite eigenvalues by the QZ algorithm, ordered like the sparse solver."""
    Kd = K.toarray() if sp.issparse(K) else np.asarray(K)
    Md = Mt.toarray() if sp.issparse(Mt) else np.asarray(Mt)
    alpha, beta = sla.eig(Kd, Md, right=False, homogeneous_eigvals=True)
    scale = max(np.max(np.abs(beta)), 1e-300)
    finite = np.abs(beta) > 1e-12 * scale
    finite &= np.abs(alpha) < 1e10 * np.abs(beta) * max(1.0, np.abs(Kd).max())
    w = alpha[finite] / beta[finite]
    return w[_order(w)]


def solve_source(system: SparseSystem, rhs_u: np.ndarray):
    """Solve the source problem ``K x = (0, 0, rhs_u)``; returns ``(sigma, u)``."""
    K = system.saddle_matrix()
    b = np.zeros(K.shape[0])
    b[system.n_sigma + 1:] = rhs_u
    x = spla.spsolve(K, b)
    if not np.all(np.isfinite(x)):
        raise SolverError("source problem solve failed")
    return x[: system.n_sigma], x[system.n_sigma + 1:]


def spectrum_adjoint_check(primal: SparseSystem, adjoint: SparseSystem, nev: int = 4,
                           shift: complex = 0.0, tol: float = 1e-10):
    """Leading eigenvalues of both problems and the worst conjugate mismatch.

    Since the adjoint pencil is ``(K^T, Mt)``, its spectrum is the complex
    conjugate of the primal one.
    """
    p = solve_shift_invert(EigenProblem.from_system(primal), nev, shift, tol)
    a = solve_shift_invert(EigenProblem.from_system(adjoint), nev, np.conj(shift), tol)
    lp = np.array([x.value for x in p])
    la = np.array([x.value for x in a])
    worst = 0.0
    for z in lp:
        d = np.min(np.abs(np.conj(la) - z)) / max(1.0, abs(z))
        worst = max(worst, float(d))
    return lp, la, worst
