"""Serialization of run results: CSV tables, JSON reports, spectrum files and
reference tables for ``--check``."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

CSV_HEADER = ["level", "N", "h", "dof", "eig_index", "re", "im", "alpha",
              "extr_re", "extr_im", "fit_residual", "dof_unconstrained"]


def fmt(x) -> str:
    """17 significant digits; ``inf``/``nan`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def jsonable(obj):
    """Recursively convert numpy scalars, complex numbers and non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [jsonable(obj.real), jsonable(obj.imag)]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else fmt(x)
    return obj


def write_json(path, payload) -> None:
    text = json.dumps(jsonable(payload), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def convergence_rows(levels, reports):
    """One row per level per tracked eigenvalue, coarse to fine."""
    rows = []
    for li, lv in enumerate(levels):
        for rep in reports:
            val = rep.levels[li].value
            fit = rep.fit
            alpha = fit.alpha if fit else float("nan")
            ex = fit.lambda_extr if fit else complex("nan")
            res = fit.fit_residual if fit else float("nan")
            rows.append([str(li), str(lv["N"]), fmt(lv["h"]), str(lv["dof"]),
                         str(rep.index), fmt(val.real), fmt(val.imag), fmt(alpha),
                         fmt(ex.real), fmt(ex.imag), fmt(res), str(lv["dof_unconstrained"])])
    return rows


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- spectrum files -----------------------------------------------------------

def check_conjugate_symmetry(values, tol=1e-6) -> bool:
    vals = np.asarray(values, complex)
    for z in vals:
        if abs(z.imag) <= tol * max(1.0, abs(z)):
            continue
        if np.min(np.abs(vals - np.conj(z))) > tol * max(1.0, abs(z)):
            return False
    return True


def write_spectrum(path, values, tol=1e-6) -> None:
    vals = np.asarray(values, complex)
    if not check_conjugate_symmetry(vals, tol):
        raise ValueError("spectrum is not closed under conjugation")
    lines = [f"{fmt(z.real)} {fmt(z.imag)}" for z in vals]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_spectrum(path) -> np.ndarray:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        re_, im_ = line.split()
        out.append(complex(float(re_), float(im_)))
    return np.array(out, complex)


# -- reference tables ---------------------------------------------------------

REFERENCE_HEADER = ["eig_index", "extr_re", "extr_im", "alpha", "tol_lambda", "tol_alpha"]


def read_reference(path):
    """Rows of a ``--check`` table; missing tolerances default to 1e-2 and 0.2."""
    out = []
    for row in read_csv(path):
        out.append({
            "eig_index": int(row["eig_index"]),
            "extr": complex(float(row["extr_re"]), float(row.get("extr_im") or 0.0)),
            "alpha": float(row["alpha"]) if row.get("alpha") not in (None, "") else None,
            "tol_lambda": float(row.get("tol_lambda") or 1e-2),
            "tol_alpha": float(row.get("tol_alpha") or 0.2),
        })
    return out


def check_against_reference(reports, reference):
    """List of ``(eig_index, ok, message)`` for every reference row."""
    by_index = {r.index: r for r in reports}
    results = []
    for ref in reference:
        rep = by_index.get(ref["eig_index"])
        if rep is None or rep.fit is None:
            results.append((ref["eig_index"], False, "eigenvalue not tracked or not fitted"))
            continue
        d = abs(rep.fit.lambda_extr - ref["extr"])
        ok = d <= ref["tol_lambda"]
        msg = f"|extr - ref| = {d:.3e} (tol {ref['tol_lambda']:g})"
        if ref["alpha"] is not None:
            da = abs(rep.fit.alpha - ref["alpha"])
            ok = ok and da <= ref["tol_alpha"]
            msg += f", |alpha - ref| = {da:.3f} (tol {ref['tol_alpha']:g})"
        results.append((ref["eig_index"], bool(ok), msg))
    return results
