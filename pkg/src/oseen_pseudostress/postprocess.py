"""Pressure recovery, convergence-rate fitting and spectrum filtering."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fields import ConvectionField
from .quadrature import MAX_DEGREE
from .spaces import SpacePair

log = logging.getLogger(__name__)

ALPHA_BOUNDS = (0.5, 8.0)


# -- pressure ---------------------------------------------------------------

@dataclass(eq=False)
class PressureField:
    space: SpacePair = field(repr=False)
    coeffs: np.ndarray  # (nc, nd) per-cell coefficients in the velocity scalar basis
    mean: complex  # integral mean after the correction; vanishes up to roundoff

    def evaluate(self, ref_points) -> np.ndarray:
        """Values ``(nc, npts)`` at reference points of every cell."""
        psi = self.space.vbasis.values(ref_points)
        return self.coeffs @ psi

    def integral(self) -> complex:
        rule, _, wdet = self.space.quadrature(self.space.velocity_degree)
        return complex(np.sum(wdet * self.evaluate(rule.points)))

    def l2_norm(self) -> float:
        rule, _, wdet = self.space.quadrature(2 * self.space.velocity_degree)
        vals = self.evaluate(rule.points)
        return float(np.sqrt(np.sum(wdet * np.abs(vals) ** 2)))


def recover_pressure(space: SpacePair, sigma_coeffs, u_coeffs,
                     beta: ConvectionField | None = None) -> PressureField:
    """``p = -(1/2)(tr sigma + u.beta)`` projected onto ``P_k`` per cell, mean removed.

    When ``sigma`` satisfies the zero-mean-trace constraint the mean removal
    is the usual ``(1/|Omega|) int u.beta`` correction.
    """
    kv = space.velocity_degree
    extra = beta.quad_degree if beta is not None else 0
    deg = min(kv + max(space.basis.poly_degree, kv + 1 + extra), MAX_DEGREE)
    rule, pts, wdet = space.quadrature(deg)
    sig = space.evaluate_sigma(sigma_coeffs, rule.points)  # (nc, q, 2, 2)
    val = sig[..., 0, 0] + sig[..., 1, 1]
    if beta is not None and not beta.is_zero:
        u = space.evaluate_u(u_coeffs, rule.points)
        nc, nq = wdet.shape
        b = beta(pts.reshape(-1, 2)).reshape(nc, nq, 2)
        val = val + np.einsum("cqr,cqr->cq", u, b)
    val = -0.5 * val
    psi = space.vbasis.values(rule.points)  # (nd, q)
    rhs = np.einsum("cq,cq,dq->cd", wdet, val, psi)
    _, _, det = space.geometry
    ref_mass = np.einsum("q,aq,bq->ab", rule.weights, psi, psi)
    coeffs = np.linalg.solve(ref_mass, (rhs / det[:, None]).T).T
    # the projection preserves cell integrals, so the mean comes from val directly
    area = space.mesh.area
    mean = np.sum(wdet * val) / area
    coeffs = coeffs - mean * _constant_coeffs(space)[None, :]
    p = PressureField(space, coeffs, 0.0)
    p.mean = p.integral() / area
    return p


def _constant_coeffs(space: SpacePair) -> np.ndarray:
    c = np.zeros(space.vbasis.dim)
    c[space.vbasis.exponents.index((0, 0))] = 1.0
    return c


# -- convergence fits -------------------------------------------------------

@dataclass(frozen=True)
class Level:
    N: int
    h: float
    dof: int
    value: complex


@dataclass(frozen=True)
class RateFit:
    """``lambda_h ~ lambda_extr + C h^alpha``; unpacks as the first three fields."""

    alpha: float
    lambda_extr: complex
    fit_residual: float
    C: complex = 0.0
    monotone: bool = True
    at_bound: bool = False

    def __iter__(self):
        return iter((self.alpha, self.lambda_extr, self.fit_residual))

    @property
    def warning(self) -> bool:
        return (not self.monotone) or self.at_bound


def _coerce_levels(levels):
    hs, vals = [], []
    for lv in levels:
        if isinstance(lv, Level):
            hs.append(lv.h)
            vals.append(lv.value)
        else:
            h, v = lv
            hs.append(h)
            vals.append(v)
    h = np.asarray(hs, float)
    v = np.asarray(vals, complex)
    order = np.argsort(-h, kind="stable")
    return h[order], v[order]


def _inner(h, v, alpha):
    """Best ``(lambda_extr, C)`` for fixed ``alpha`` and the squared residual."""
    X = np.column_stack([np.ones_like(h), h**alpha])
    coef, *_ = np.linalg.lstsq(X.astype(complex), v, rcond=None)
    r = v - X @ coef
    return coef, float(np.real(np.vdot(r, r)))


def _golden(fun, a, b, tol=1e-13, maxit=200):
    g = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(maxit):
        if abs(b - a) <= tol * max(1.0, abs(c)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fun(d)
    return c if fc <= fd else d


def fit_rate(levels, bounds=ALPHA_BOUNDS) -> RateFit:
    """Least-squares fit of ``lambda_h = lambda_extr + C h^alpha`` over all levels.

    ``levels`` holds :class:`Level` objects or ``(h, lambda_h)`` pairs; input
    order is irrelevant. Complex data are fitted jointly in real and
    imaginary part.
    """
    h, v = _coerce_levels(levels)
    if h.size < 3:
        raise ValueError("at least three levels are required for a rate fit")
    if np.unique(h).size != h.size:
        raise ValueError("mesh sizes must be distinct")
    scale = max(1.0, float(np.max(np.abs(v))))
    if np.max(np.abs(v - v[-1])) <= 1e-14 * scale:
        return RateFit(float("inf"), complex(v[-1]), 0.0, 0.0, True, False)

    lo, hi = bounds
    hn = h / h.max()  # conditioning: fit in normalized mesh size

    def obj(a):
        return _inner(hn, v, a)[1]

    grid = np.linspace(lo, hi, 301)
    vals = np.array([obj(a) for a in grid])
    i = int(np.argmin(vals))
    a0 = grid[max(i - 1, 0)]
    a1 = grid[min(i + 1, grid.size - 1)]
    alpha = _golden(obj, a0, a1)
    coef, res = _inner(hn, v, alpha)
    lam, Cn = complex(coef[0]), complex(coef[1])
    C = Cn / h.max() ** alpha
    err = np.abs(v - lam)
    monotone = bool(np.all(np.diff(err) < 0))
    at_bound = bool(min(alpha - lo, hi - alpha) <= 1e-6)
    if not monotone:
        log.warning("non-monotone convergence: |lambda_h - lambda_extr| = %s", err)
    return RateFit(float(alpha), lam, float(np.sqrt(res)), C, monotone, at_bound)


@dataclass
class ConvergenceReport:
    """Tracked eigenvalue across levels (coarse to fine) with its fits."""

    index: int
    levels: list
    fit: RateFit | None = None
    fit_last3: RateFit | None = None

    @property
    def alpha(self) -> float:
        return self.fit.alpha if self.fit else float("nan")

    @property
    def lambda_extr(self) -> complex:
        return self.fit.lambda_extr if self.fit else complex("nan")

    @property
    def fit_residual(self) -> float:
        return self.fit.fit_residual if self.fit else float("nan")

    @classmethod
    def build(cls, index: int, levels) -> "ConvergenceReport":
        levels = sorted(levels, key=lambda lv: -lv.h)
        rep = cls(index, levels)
        if len(levels) >= 3:
            rep.fit = fit_rate(levels)
            if len(levels) > 3:
                rep.fit_last3 = fit_rate(levels[-3:])
            else:
                rep.fit_last3 = rep.fit
        return rep


# -- spectra ----------------------------------------------------------------

def _value(p) -> complex:
    return complex(getattr(p, "value", p))


def filter_spectrum(pairs, window=None, tol=1e-6):
    """Pairs inside ``window = (re_min, re_max, im_min, im_max)`` sorted by real
    then imaginary part. Real parts equal within ``tol * max(1, |lambda|)`` count
    as equal so that conjugate pairs stay adjacent."""
    items = list(pairs)
    if window is not None:
        r0, r1, i0, i1 = window
        items = [p for p in items
                 if r0 <= _value(p).real <= r1 and i0 <= _value(p).imag <= i1]
    items.sort(key=lambda p: (_value(p).real, _value(p).imag))
    out, group = [], []
    for p in items:
        z = _value(p)
        if group and abs(z.real - _value(group[0]).real) <= tol * max(1.0, abs(z)):
            group.append(p)
        else:
            out.extend(sorted(group, key=lambda q: _value(q).imag))
            group = [p]
    out.extend(sorted(group, key=lambda q: _value(q).imag))
    return out


def conjugate_pairs(values, tol=1e-6):
    """Index pairs ``(i, j)`` with ``values[j] ~ conj(values[i])`` and ``Im > 0`` at ``i``."""
    vals = np.asarray([_value(v) for v in values])
    used, out = set(), []
    for i, z in enumerate(vals):
        if z.imag <= tol * max(1.0, abs(z)) or i in used:
            continue
        d = np.abs(vals - np.conj(z))
        d[i] = np.inf
        j = int(np.argmin(d)) if d.size else -1
        if j >= 0 and d[j] <= tol * max(1.0, abs(z)) and j not in used:
            used.update((i, j))
            out.append((i, j))
    return out
