"""Locating exceptional points of the Bloch-space generator.

Three layers, in increasing order of machinery:

* 2-D condition-number maps over a parameter grid (the EP landscape).
* Local refinement of an EP2 by derivative-free minimization of the
  eigenvalue cluster diameter (Nelder-Mead with restarts).
* High-order (EP3..EP5) searches. A k-fold coalescence of this real
  generator occurs at a real eigenvalue lambda*, so it solves
  p(lambda*) = p'(lambda*) = ... = p^(k-1)(lambda*) = 0 for the
  characteristic polynomial p. Those conditions are solved with
  Levenberg-Marquardt on (k-1) free parameters plus lambda*, then polished
  with a few Newton steps in multiprecision arithmetic.

The multiprecision step is not a luxury: a defective k-fold eigenvalue
computed in double precision splits by roughly ||M|| * eps_mach^(1/k)
(about 0.1 kHz for k = 4 at this matrix scale) no matter how accurately
the parameters are known, and rounding the parameters themselves to
float64 already limits the true diameter to a comparable value. Verifying
a sub-1e-2 kHz cluster therefore requires carrying the refined location
and the eigenvalues at elevated precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
import multiprocessing

import numpy as np
from scipy.optimize import least_squares, minimize

from .errors import AllStartsFailed, ConvergenceFailure, Inconclusive, TrackingAmbiguous
from .model import SystemParams, explicit_dynamical_matrix
from .spectral import eigendecompose, max_condition_number, permutation_cycles, track_spectrum

#: Internal frequency unit (kHz) used to keep eigenvalues O(1) in root solves.
_SCALE = 1.0e3

_SUBSETS = {k: np.array(list(combinations(range(8), k))) for k in (2, 3, 4, 5)}
_SUBSET_PAIRS = {k: np.array(list(combinations(range(k), 2))) for k in (2, 3, 4, 5)}

#: Convergence thresholds for a refined candidate (our own; see README).
DIAMETER_TOL = 1e-3
CONDNUM_MIN = 1e4


def cluster_diameter(eigvals: np.ndarray, k: int):
    """Smallest max-pairwise-distance among all size-k eigenvalue subsets.

    Returns (diameter, indices of the optimal subset).
    """
    sub = np.asarray(eigvals)[_SUBSETS[k]]
    ij = _SUBSET_PAIRS[k]
    d = np.abs(sub[:, ij[:, 0]] - sub[:, ij[:, 1]]).max(axis=1)
    j = int(np.argmin(d))
    return float(d[j]), tuple(int(i) for i in _SUBSETS[k][j])


@dataclass(frozen=True)
class ScanGrid:
    """Rectangular scan over two SystemParams fields.

    axis1, axis2  (field name, min, max, n_points) with n_points >= 2.
    fixed         parameter values held constant over the grid.
    """

    axis1: tuple
    axis2: tuple
    fixed: SystemParams

    def __post_init__(self):
        for name, lo, hi, n in (self.axis1, self.axis2):
            if n < 2:
                raise ValueError(f"axis {name}: need at least 2 points, got {n}")
            if not lo < hi:
                raise ValueError(f"axis {name}: need min < max, got [{lo}, {hi}]")
            if name not in self.fixed.as_dict():
                raise ValueError(f"unknown parameter name {name!r}")

    def axis_values(self, which: int) -> np.ndarray:
        name, lo, hi, n = self.axis1 if which == 1 else self.axis2
        return np.linspace(lo, hi, n)


def _scan_cell(args):
    fixed_dict, name1, v1, name2, v2, clamp = args
    p = SystemParams(**{**fixed_dict, name1: v1, name2: v2})
    try:
        n = max_condition_number(explicit_dynamical_matrix(p))
    except ConvergenceFailure:
        return np.nan
    return min(n, clamp)


def scan_condition_map(grid: ScanGrid, workers: int = 1, clamp: float = 1e16) -> np.ndarray:
    """Max eigenvalue condition number at every grid point.

    result[i, j] corresponds to (axis1[i], axis2[j]). Cells where the
    eigensolver fails are NaN; infinities are clamped for serialization.
    Parallel and serial runs produce identical values (ordered map).
    """
    a1, a2 = grid.axis_values(1), grid.axis_values(2)
    fixed = grid.fixed.as_dict()
    tasks = [
        (fixed, grid.axis1[0], float(v1), grid.axis2[0], float(v2), clamp)
        for v1 in a1
        for v2 in a2
    ]
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            flat = pool.map(_scan_cell, tasks, chunksize=max(1, len(tasks) // (4 * workers)))
    else:
        flat = [_scan_cell(t) for t in tasks]
    return np.array(flat).reshape(len(a1), len(a2))


@dataclass
class EPCandidate:
    """A refined degeneracy candidate and its quality metrics.

    cluster_diameter is the verified diameter: computed in multiprecision
    for order >= 3 (see module docstring), in float64 for order 2.
    float64_diameter is always the plain double-precision value at
    `location`; hp_location carries the refined coordinates as strings at
    full working precision for orders where float64 rounding matters.
    """

    location: SystemParams
    order: int
    cluster_diameter: float
    max_cond_num: float
    cluster_indices: tuple
    success: bool
    free_params: tuple
    float64_diameter: float = None
    residual: float = None
    hp_location: tuple = None
    message: str = ""
    n_evaluations: int = 0


def _params_from_vector(seed: SystemParams, free_params, x) -> SystemParams:
    return seed.replace(**{name: float(v) for name, v in zip(free_params, x)})


def _diameter_objective(seed, free_params, k, matrix_of):
    def f(x):
        p = _params_from_vector(seed, free_params, x)
        w = np.linalg.eigvals(matrix_of(p))
        return cluster_diameter(w, k)[0]

    return f


def _candidate_at(p: SystemParams, order: int, free_params, **extra) -> EPCandidate:
    m = explicit_dynamical_matrix(p)
    w = np.linalg.eigvals(m)
    d64, idx = cluster_diameter(w, order)
    cond = max_condition_number(m)
    diam = extra.pop("verified_diameter", d64)
    return EPCandidate(
        location=p,
        order=order,
        cluster_diameter=diam,
        max_cond_num=cond,
        cluster_indices=idx,
        success=bool(diam < DIAMETER_TOL and cond > CONDNUM_MIN),
        free_params=tuple(free_params),
        float64_diameter=d64,
        **extra,
    )


def refine_ep(
    seed: SystemParams,
    free_params,
    target_order: int = 2,
    diameter_tol: float = DIAMETER_TOL,
    max_fev: int = 8000,
    matrix_of=None,
) -> EPCandidate:
    """Refine an EP candidate near `seed` over the given free parameters.

    Order 2 minimizes the 2-cluster diameter with restarted Nelder-Mead;
    higher orders go through the polynomial root-condition solver (which a
    pure diameter descent cannot reach, see the module docstring). Returns
    a candidate either way; success requires the diameter below
    `diameter_tol` and a diverging condition number.

    `matrix_of` substitutes the map params -> matrix (default: the explicit
    dynamical matrix); useful for synthetic test families. Only honored for
    target_order 2.
    """
    free_params = tuple(free_params)
    if len(free_params) < target_order - 1:
        raise ValueError(
            f"need at least {target_order - 1} free parameters for order "
            f"{target_order}, got {len(free_params)}"
        )
    if target_order != 2:
        if matrix_of is not None:
            raise ValueError("matrix_of is only supported for target_order 2")
        return _refine_high_order(seed, free_params, target_order)
    if matrix_of is None:
        matrix_of = explicit_dynamical_matrix

    f = _diameter_objective(seed, free_params, 2, matrix_of)
    x = np.array([getattr(seed, name) for name in free_params], dtype=float)
    best = f(x)
    nfev = 1
    for spread in (10.0, 1.0, 0.05, 0.002):
        simplex = np.vstack([x] + [x + spread * v for v in np.eye(len(x))])
        res = minimize(
            f,
            x,
            method="Nelder-Mead",
            options=dict(
                initial_simplex=simplex,
                xatol=1e-11,
                fatol=1e-14,
                maxfev=max_fev,
                maxiter=max_fev,
            ),
        )
        nfev += res.nfev
        if res.fun < best:
            x, best = res.x, res.fun
    p = _params_from_vector(seed, free_params, x)
    if matrix_of is explicit_dynamical_matrix:
        cand = _candidate_at(p, 2, free_params, n_evaluations=nfev)
    else:
        w = np.linalg.eigvals(matrix_of(p))
        d64, idx = cluster_diameter(w, 2)
        cond = max_condition_number(matrix_of(p))
        cand = EPCandidate(
            location=p,
            order=2,
            cluster_diameter=d64,
            max_cond_num=cond,
            cluster_indices=idx,
            success=bool(d64 < DIAMETER_TOL and cond > CONDNUM_MIN),
            free_params=free_params,
            float64_diameter=d64,
            n_evaluations=nfev,
        )
    if not cand.success:
        cand.message = f"no convergence: diameter {cand.cluster_diameter:.3e} kHz"
    return cand


def _char_conditions(p: SystemParams, lam: float, k: int) -> np.ndarray:
    """First k derivatives of the (scaled) characteristic polynomial at a
    real lambda, the defining conditions of a k-fold real eigenvalue."""
    coeffs = np.real(np.poly(explicit_dynamical_matrix(p) / _SCALE))
    out = np.empty(k)
    c = coeffs
    for j in range(k):
        out[j] = np.polyval(c, lam)
        c = np.polyder(c)
    return out


def _root_solve(seed: SystemParams, free_params, k: int, lam0: float):
    """Square LM solve of the k root conditions over (k-1) parameters and
    lambda; remaining free parameters stay at their seed values."""
    names = free_params[: k - 1]

    def residual(y):
        p = _params_from_vector(seed, names, y[:-1])
        return _char_conditions(p, y[-1], k)

    y0 = np.array([getattr(seed, n) for n in names] + [lam0], dtype=float)
    try:
        res = least_squares(
            residual, y0, method="lm", xtol=3e-16, ftol=3e-16, max_nfev=400
        )
    except (ValueError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(res.x)):
        return None
    p = _params_from_vector(seed, names, res.x[:-1])
    return p, float(res.x[-1]), float(np.max(np.abs(res.fun))), int(res.nfev)


# ---------------------------------------------------------------------------
# multiprecision verification


def _mp_matrix(values: dict, mp):
    v = {k: val if isinstance(val, mp.mpf) else mp.mpf(float(val)) for k, val in values.items()}
    g1, g2 = v["gamma1"], v["gamma2"]
    ku1, ku2, kd1, kd2 = v["kappa_u1"], v["kappa_u2"], v["kappa_d1"], v["kappa_d2"]
    d1, d2, om1, om2 = v["delta1"], v["delta2"], v["omega1"], v["omega2"]
    sq3 = mp.sqrt(3)
    g11 = g2 / 8 + (g1 + kd1 + ku1 + ku2) / 2
    g33 = ku2 / 2 + kd1 + ku1
    g38 = (kd1 - kd2 - ku1 - ku2 / 2) / sq3
    g44 = g1 / 8 + (g2 + ku1 + kd2 + ku2) / 2
    g66 = (g1 + g2) / 8 + (kd1 + kd2) / 2
    g83 = -sq3 / 2 * ku2
    g88 = ku2 / 2 + kd2
    z = mp.mpf(0)
    return mp.matrix(
        [
            [-g11, d1, z, z, z, z, -om2, z],
            [-d1, -g11, 2 * om1, z, z, -om2, z, z],
            [z, -2 * om1, -g33, z, -om2, z, z, g38],
            [z, z, z, -g44, d2, z, om1, z],
            [z, z, om2, -d2, -g44, -om1, z, sq3 * om2],
            [z, om2, z, z, om1, -g66, -(d1 - d2), z],
            [om2, z, z, -om1, z, (d1 - d2), -g66, z],
            [z, z, g83, z, -sq3 * om2, z, z, -g88],
        ]
    )


def _mp_charpoly(a, mp):
    """Faddeev-LeVerrier coefficients of det(lambda I - A), monic, high
    order first."""
    n = a.rows
    ident = mp.eye(n)
    coeffs = [mp.mpf(1)]
    mk = mp.zeros(n, n)
    for k in range(1, n + 1):
        mk = a * mk + coeffs[-1] * ident
        am = a * mk
        coeffs.append(-sum(am[i, i] for i in range(n)) / k)
    return coeffs


def _mp_polish(seed: SystemParams, free_params, k: int, lam_scaled: float, dps: int = 50, steps: int = 6):
    """Newton-refine the root conditions in multiprecision; returns the
    refined parameter dict (mp values), lambda, residual and the verified
    cluster diameter from multiprecision eigenvalues."""
    from mpmath import mp

    old_dps = mp.dps
    mp.dps = dps
    try:
        names = list(free_params[: k - 1])
        base = {key: mp.mpf(float(val)) for key, val in seed.as_dict().items()}
        y = [base[n] for n in names] + [mp.mpf(float(lam_scaled))]
        scale = mp.mpf(_SCALE)

        def conditions(yv):
            vals = dict(base)
            for nm, v in zip(names, yv[:-1]):
                vals[nm] = v
            a = _mp_matrix(vals, mp) / scale
            c = _mp_charpoly(a, mp)
            out = []
            cc = list(c)
            for j in range(k):
                out.append(mp.polyval(cc, yv[-1]))
                deg = len(cc) - 1
                cc = [cc[i] * (deg - i) for i in range(deg)]
            return out

        n_unknown = len(y)
        h = mp.mpf(10) ** (-(dps // 2))
        for _ in range(steps):
            f0 = conditions(y)
            jac = mp.zeros(k, n_unknown)
            for j in range(n_unknown):
                yp = list(y)
                yp[j] = yp[j] + h
                fp = conditions(yp)
                for i in range(k):
                    jac[i, j] = (fp[i] - f0[i]) / h
            try:
                dy = mp.lu_solve(jac, mp.matrix([-v for v in f0]))
            except ZeroDivisionError:
                break
            y = [y[j] + dy[j] for j in range(n_unknown)]
        resid = max(abs(v) for v in conditions(y))

        vals = dict(base)
        for nm, v in zip(names, y[:-1]):
            vals[nm] = v
        eigvals, _ = mp.eig(_mp_matrix(vals, mp))
        w = np.array([complex(e) for e in eigvals])
        diam, idx = cluster_diameter(w, k)
        hp_loc = tuple(mp.nstr(vals[nm], dps) for nm in names)
        return vals, float(resid), diam, idx, hp_loc
    finally:
        mp.dps = old_dps


def _refine_high_order(seed: SystemParams, free_params, k: int, dps: int = 50) -> EPCandidate:
    """Root-condition solve plus multiprecision polish from a single seed."""
    w = np.linalg.eigvals(explicit_dynamical_matrix(seed))
    d0, idx0 = cluster_diameter(w, k)
    lam_starts = [float(np.mean(w[list(idx0)]).real) / _SCALE]
    lam_starts += sorted({round(float(v), 3) for v in w.real / _SCALE})

    best = None
    nfev = 0
    for lam0 in lam_starts:
        out = _root_solve(seed, free_params, k, lam0)
        if out is None:
            continue
        p, lam, resid, n = out
        nfev += n
        if resid > 1e-10:
            continue
        d64, _ = cluster_diameter(np.linalg.eigvals(explicit_dynamical_matrix(p)), k)
        if d64 > 50.0:
            continue
        if best is None or d64 < best[2]:
            best = (p, lam, d64)
    if best is None:
        cand = _candidate_at(seed, k, free_params, n_evaluations=nfev)
        cand.success = False
        cand.message = "no convergence: root conditions unsolved from this seed"
        return cand

    p, lam, d64 = best
    _, resid, diam_mp, idx, hp_loc = _mp_polish(p, free_params, k, lam, dps=dps)
    cand = _candidate_at(
        p,
        k,
        free_params,
        verified_diameter=diam_mp,
        residual=resid,
        hp_location=hp_loc,
        n_evaluations=nfev,
    )
    cand.cluster_indices = idx
    if not cand.success:
        cand.message = f"no convergence: verified diameter {diam_mp:.3e} kHz"
    return cand


def _matrix_with_complex_param(p: SystemParams, name: str, value: complex) -> np.ndarray:
    """Explicit dynamical matrix with one parameter analytically continued
    to a complex value (entries are affine in every parameter, so the
    closed form evaluates verbatim)."""
    m = explicit_dynamical_matrix(p.replace(**{name: 0.0})).astype(complex)
    unit = explicit_dynamical_matrix(p.replace(**{name: 1.0})) - m.real
    return m + value * unit


def classify_ep_order(candidate: EPCandidate, radius: float = 1e-3) -> int:
    """Order of a refined candidate from loop monodromy.

    The loop is a circle of the given radius in the complexified plane of
    the candidate's first free parameter. A real-parameter circle is
    unusable for orders above 2: lines of real-axis pair degeneracies
    emanate from a high-order EP of this real generator, every enclosing
    real circle crosses them, and branch continuation through such a pinch
    is ill-defined. Analytic continuation in one parameter avoids the real
    degeneracy set entirely and exposes the k-th-root branch structure.

    The radius is halved until two consecutive loops agree on the length
    of the permutation cycle containing the coalescing cluster. The result
    is cross-checked against the number of pairwise aligned right
    eigenvectors in the cluster; Inconclusive is raised on disagreement
    (with the monodromy result in the message).
    """
    p0 = candidate.location
    name_a = candidate.free_params[0]
    center = getattr(p0, name_a)
    w_ref = np.linalg.eigvals(explicit_dynamical_matrix(p0))
    diam_ref, idx_ref = cluster_diameter(w_ref, candidate.order)
    # a regular point: no cluster anywhere near coalescence
    gap_scale = np.median(np.abs(w_ref[:, None] - w_ref[None, :])[~np.eye(8, dtype=bool)])
    if diam_ref > 0.05 * gap_scale and candidate.max_cond_num < 1e3:
        return 1

    def circle(rad):
        def curve(s):
            z = center + rad * np.exp(2j * np.pi * s)
            return _matrix_with_complex_param(p0, name_a, z)

        return curve

    cycle_lengths = []
    for rad in (radius, radius / 2, radius / 4, radius / 8):
        try:
            tracked = track_spectrum(circle(rad), n_samples=256, closed=True)
        except TrackingAmbiguous:
            cycle_lengths.append(None)
            continue
        perm = tracked.permutation
        lam0 = tracked.samples[0][1]
        members = {int(np.argmin(np.abs(lam0 - w_ref[j]))) + 1 for j in idx_ref}
        lengths = set()
        for cyc in permutation_cycles(perm):
            if members & set(cyc):
                lengths.add(len(cyc))
        for m in members:
            if not any(m in cyc for cyc in permutation_cycles(perm)):
                lengths.add(1)
        cycle_lengths.append(max(lengths) if lengths else 1)
        if len(cycle_lengths) >= 2 and cycle_lengths[-1] == cycle_lengths[-2] and cycle_lengths[-1] is not None:
            break
    stable = [c for c in cycle_lengths if c is not None]
    if not stable or (len(stable) >= 2 and stable[-1] != stable[-2]):
        raise Inconclusive(f"monodromy order unstable across radii: {cycle_lengths}")
    order_mono = stable[-1]
    if order_mono == 1:
        return 1

    aligned = _aligned_eigenvector_count(candidate)
    if aligned != order_mono:
        raise Inconclusive(
            f"monodromy order {order_mono} but {aligned} aligned eigenvectors"
        )
    return order_mono


def _aligned_eigenvector_count(candidate: EPCandidate, threshold: float = 0.9) -> int:
    """Largest set of cluster right eigenvectors that are pairwise parallel.

    In double precision the eigenvectors of a defective cluster of order
    k >= 3 are strongly contaminated by Jordan-chain mixing (the backward
    error splits the eigenvalue by ~eps^(1/k) and the computed vectors
    spread over the chain), so the count is taken from the multiprecision
    eigenvectors at the refined high-precision location when available.
    """
    k = candidate.order
    if candidate.hp_location is not None and k >= 3:
        from mpmath import mp

        old = mp.dps
        mp.dps = 30
        try:
            vals = {key: mp.mpf(float(v)) for key, v in candidate.location.as_dict().items()}
            for name, s in zip(candidate.free_params, candidate.hp_location):
                vals[name] = mp.mpf(s)
            eigvals, ervecs = mp.eig(_mp_matrix(vals, mp))
            w = np.array([complex(e) for e in eigvals])
            _, idx = cluster_diameter(w, k)
            vecs = []
            for j in idx:
                v = np.array([complex(ervecs[i, j]) for i in range(8)])
                vecs.append(v / np.linalg.norm(v))
        finally:
            mp.dps = old
    else:
        es = eigendecompose(explicit_dynamical_matrix(candidate.location))
        _, idx = cluster_diameter(es.lambdas, k)
        vecs = [es.right[:, j] for j in idx]

    for size in range(len(vecs), 1, -1):
        for combo in combinations(range(len(vecs)), size):
            if all(
                abs(np.vdot(vecs[a], vecs[b])) > threshold
                for a, b in combinations(combo, 2)
            ):
                return size
    return 1


def _seed_fan(seed: SystemParams, free_params, scales=(100.0, 300.0)):
    """Deterministic auxiliary starts around a seed for multi-start search."""
    out = []
    base = np.array([getattr(seed, n) for n in free_params], dtype=float)
    for s in scales:
        for j in range(len(base)):
            for sign in (+1.0, -1.0):
                x = base.copy()
                x[j] += sign * s
                out.append(_params_from_vector(seed, free_params, x))
        for signs in ([1, 1, -1, -1], [-1, 1, 1, -1], [1, -1, 1, -1], [-1, -1, 1, 1]):
            x = base + s * np.array(signs[: len(base)], dtype=float)
            out.append(_params_from_vector(seed, free_params, x))
    return out


def search_high_order_ep(
    target_order: int,
    seeds,
    free_params,
    widen: bool = True,
) -> EPCandidate:
    """Multi-start EP search over the given seeds.

    Order 2 delegates each seed to :func:`refine_ep`. Higher orders run the
    root-condition solver from every seed and, when `widen` is set and no
    seed converges directly, from a deterministic fan of displaced starts
    around each seed (the quoted reference coordinates are not reliable for this
    model, so widening is usually required). Returns the converged
    candidate with the smallest verified diameter.

    Raises AllStartsFailed with per-seed diagnostics if nothing converges.
    """
    if target_order not in (2, 3, 4, 5):
        raise ValueError(f"target_order must be within 2..5, got {target_order}")
    free_params = tuple(free_params)
    seeds = list(seeds)

    diagnostics = []
    converged = []
    rounds = [seeds]
    if widen and target_order >= 3:
        rounds.append([s2 for s in seeds for s2 in _seed_fan(s, free_params)])
    for round_seeds in rounds:
        for s in round_seeds:
            cand = (
                refine_ep(s, free_params, 2)
                if target_order == 2
                else _refine_high_order(s, free_params, target_order)
            )
            if cand.success:
                converged.append(cand)
            else:
                diagnostics.append(
                    {
                        "seed": s.as_dict(),
                        "diameter": cand.cluster_diameter,
                        "message": cand.message,
                    }
                )
        if converged:
            break
    if not converged:
        raise AllStartsFailed(
            f"no start converged for order {target_order} "
            f"({len(diagnostics)} attempts)",
            diagnostics=diagnostics,
        )
    return min(converged, key=lambda c: c.cluster_diameter)
