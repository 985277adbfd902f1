"""Non-Hermitian eigenanalysis of the Bloch-space dynamical matrix.

Left and right eigenpairs are defined by M r = lambda r and M^T l = lambda l
with the bilinear pairing l . r (no conjugation). Away from degeneracies the
pairs are normalized to l . r = 1; the condition number of an eigenvalue is
|l||r| / |l . r|, which is scaling invariant and diverges at an exceptional
point where l . r -> 0.

Branch tracking along parameter paths matches eigenvalues between
consecutive samples by optimal assignment in the complex plane, bisecting
any segment where the motion is comparable to the smallest inter-branch
gap. For a closed path the net relabeling is returned as a permutation.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .errors import ConvergenceFailure, TrackingAmbiguous

#: Overlap threshold below which a left/right pair is declared defective.
EP_CLUSTER_TOL = 1e-6

#: Condition-number sentinel used when the biorthogonal overlap underflows.
COND_INF = np.inf


@dataclass(frozen=True)
class EigenSystem:
    """All eight eigenpairs of one 8x8 real matrix.

    lambdas      complex eigenvalues (kHz).
    right, left  columns right[:, i], left[:, i]; right vectors have unit
                 norm with the largest-modulus component phased real
                 positive, left vectors are scaled to left . right = 1
                 unless the pair is flagged defective (then unit norm).
    cond_nums    per-eigenvalue condition numbers, >= 1 (inf at an EP).
    defective    boolean mask of pairs with |l . r| below EP_CLUSTER_TOL.
    conj_pairs   index pairs (i, j), i < j, with lambda_i = conj(lambda_j)
                 and Im lambda_i > 0.
    """

    lambdas: np.ndarray
    right: np.ndarray
    left: np.ndarray
    cond_nums: np.ndarray
    defective: np.ndarray
    conj_pairs: tuple

    def reordered(self, order) -> "EigenSystem":
        order = np.asarray(order)
        inv = {int(o): k for k, o in enumerate(order)}
        pairs = tuple(
            tuple(sorted((inv[i], inv[j]))) for i, j in self.conj_pairs if i in inv and j in inv
        )
        return EigenSystem(
            lambdas=self.lambdas[order],
            right=self.right[:, order],
            left=self.left[:, order],
            cond_nums=self.cond_nums[order],
            defective=self.defective[order],
            conj_pairs=pairs,
        )


def _phase_fix(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    k = int(np.argmax(np.abs(v)))
    return v * (abs(v[k]) / v[k])


def _conj_pairs(lambdas: np.ndarray, tol: float) -> tuple:
    pairs = []
    used = set()
    for i in range(len(lambdas)):
        if i in used or lambdas[i].imag <= tol:
            continue
        d = np.abs(lambdas - np.conj(lambdas[i]))
        d[i] = np.inf
        for j in used:
            d[j] = np.inf
        j = int(np.argmin(d))
        if d[j] <= tol * max(1.0, abs(lambdas[i])):
            pairs.append((i, j) if i < j else (j, i))
            used.update((i, j))
    return tuple(pairs)


def eigendecompose(m: np.ndarray, ep_tol: float = EP_CLUSTER_TOL) -> EigenSystem:
    """Full biorthogonal eigendecomposition of a real 8x8 matrix."""
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    try:
        lambdas, vl, vr = sla.eig(m, left=True, right=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise ConvergenceFailure(f"dense eigensolver failed: {exc}") from exc

    n = m.shape[0]
    right = np.empty_like(vr)
    left = np.empty_like(vr)
    cond = np.empty(n)
    defective = np.zeros(n, dtype=bool)
    for i in range(n):
        r = _phase_fix(vr[:, i])
        # scipy returns vl with vl^H M = lambda vl^H; conjugating gives the
        # transpose-eigenvector convention M^T l = lambda l.
        l = vl[:, i].conj()
        l = l / np.linalg.norm(l)
        overlap = l @ r
        cond[i] = COND_INF if abs(overlap) < 1e-300 else 1.0 / abs(overlap)
        if abs(overlap) < ep_tol:
            defective[i] = True
        else:
            l = l / overlap
        right[:, i] = r
        left[:, i] = l

    # Within a numerically coincident nondefective eigenvalue group the raw
    # solver bases of the left and right invariant subspaces are mutually
    # arbitrary; re-pair them through the bilinear Gram matrix so that the
    # condition numbers reflect the subspace geometry (1 for normal
    # matrices) instead of the accidental basis choice. Defective groups
    # (singular Gram matrix) keep their diverging per-vector values.
    scale = max(1.0, float(np.max(np.abs(lambdas))))
    close = np.abs(lambdas[:, None] - lambdas[None, :]) <= 1e-8 * scale
    seen = set()
    for i in range(n):
        if i in seen:
            continue
        group = [j for j in range(n) if close[i, j]]
        seen.update(group)
        if len(group) < 2:
            continue
        r_raw = right[:, group]
        l_raw = np.stack(
            [vl[:, j].conj() / np.linalg.norm(vl[:, j]) for j in group], axis=1
        )
        # a defective cluster's computed eigenvectors collapse onto the
        # single true eigenvector and do not span the invariant subspace;
        # only a spanning (nondefective) group can be re-paired
        span = min(
            np.linalg.svd(r_raw, compute_uv=False)[-1],
            np.linalg.svd(l_raw, compute_uv=False)[-1],
        )
        if span <= 0.05:
            defective[group] = True
            continue
        q_l, _ = np.linalg.qr(l_raw)
        q_r, _ = np.linalg.qr(r_raw)
        gram = q_l.T @ q_r
        sv = np.linalg.svd(gram, compute_uv=False)
        if sv[-1] <= ep_tol:
            defective[group] = True
            continue
        l_new = q_l @ np.linalg.inv(gram).T
        for k, j in enumerate(group):
            right[:, j] = _phase_fix(q_r[:, k])
            left[:, j] = l_new[:, k] / (l_new[:, k] @ right[:, j])
            cond[j] = np.linalg.norm(left[:, j])
            defective[j] = False
    return EigenSystem(
        lambdas=lambdas,
        right=right,
        left=left,
        cond_nums=cond,
        defective=defective,
        conj_pairs=_conj_pairs(lambdas, 1e-9),
    )


def condition_numbers(es: EigenSystem) -> np.ndarray:
    """Per-eigenvalue condition numbers |l||r| / |l . r| (recomputed)."""
    out = np.empty(len(es.lambdas))
    for i in range(len(es.lambdas)):
        l, r = es.left[:, i], es.right[:, i]
        denom = abs(l @ r)
        out[i] = COND_INF if denom < 1e-300 else np.linalg.norm(l) * np.linalg.norm(r) / denom
    return out


def max_condition_number(m: np.ndarray) -> float:
    """Largest eigenvalue condition number of a real matrix."""
    return float(np.max(eigendecompose(m).cond_nums))


@dataclass(frozen=True)
class TrackedSpectrum:
    """Eigenvalue branches continued along a parameter path.

    samples      list of (s, lambdas[8]) with branch-aligned eigenvalues;
                 s is the normalized path parameter in [0, 1].
    permutation  for closed paths, dict branch -> branch (1-based) mapping
                 each starting branch to the branch whose starting value it
                 reaches after one circuit; None for open paths.
    label_order  index array mapping branch slot k to column k of the
                 eigensystem at s=0 (the labeling in force along the path).
    """

    samples: list
    permutation: dict | None
    label_order: np.ndarray

    def branch_values(self) -> np.ndarray:
        return np.array([lam for _, lam in self.samples])

    def parameters(self) -> np.ndarray:
        return np.array([s for s, _ in self.samples])


def _match_step(prev: np.ndarray, new: np.ndarray):
    """Optimal assignment of new eigenvalues to previous branches.

    Returns (order, max_move, min_gap): `order` aligns `new` to `prev`,
    `max_move` is the largest branch displacement and `min_gap` the smallest
    inter-branch distance of `prev`.
    """
    cost = np.abs(prev[:, None] - new[None, :])
    rows, cols = linear_sum_assignment(cost)
    order = np.empty(len(prev), dtype=int)
    order[rows] = cols
    max_move = float(cost[rows, cols].max())
    pair = np.abs(prev[:, None] - prev[None, :])
    pair[np.diag_indices_from(pair)] = np.inf
    return order, max_move, float(pair.min())


def track_spectrum(
    curve,
    n_samples: int,
    matrix_of=None,
    label_order=None,
    safety: float = 0.5,
    min_step: float = 1e-8,
    closed: bool = True,
):
    """Continue all eigenvalue branches along a parameter curve.

    curve        callable s in [0, 1] -> SystemParams (or -> matrix when
                 matrix_of is None and the return value is an ndarray).
    n_samples    initial number of uniform segments; segments are bisected
                 adaptively whenever the branch motion exceeds `safety`
                 times the smallest inter-branch gap.
    matrix_of    callable params -> matrix; defaults to the explicit
                 dynamical matrix.
    label_order  optional index array fixing the branch labeling at s=0
                 (defaults to sorting by real part, ties by imaginary part).
    closed       compute the end-to-start permutation (requires the curve
                 to return to its starting matrix at s=1).

    Raises TrackingAmbiguous if bisection reaches `min_step` while the
    matching is still ambiguous (path too close to a degeneracy).
    """
    if matrix_of is None:
        from .model import build_dynamical_system

        matrix_of = lambda p: build_dynamical_system(p).m

    def mat(s):
        out = curve(s)
        return out if isinstance(out, np.ndarray) else matrix_of(out)

    grid = list(np.linspace(0.0, 1.0, n_samples + 1))
    w0 = np.linalg.eigvals(mat(0.0))
    if label_order is None:
        label_order = np.lexsort((w0.imag, w0.real))
    label_order = np.asarray(label_order, dtype=int)
    lam = w0[label_order]
    lam0 = lam.copy()
    samples = [(0.0, lam.copy())]

    i = 1
    while i < len(grid):
        s_prev, s_cur = grid[i - 1], grid[i]
        w = np.linalg.eigvals(mat(s_cur))
        order, move, gap = _match_step(lam, w)
        if move > safety * gap:
            if (s_cur - s_prev) <= min_step:
                raise TrackingAmbiguous(
                    f"branch matching ambiguous at s = {s_cur:.6f}: "
                    f"move {move:.3e} vs gap {gap:.3e} at the step floor"
                )
            grid.insert(i, 0.5 * (s_prev + s_cur))
            continue
        lam = w[order]
        samples.append((s_cur, lam.copy()))
        i += 1

    permutation = None
    if closed:
        order, move, gap = _match_step(lam, lam0)
        if move > safety * gap:
            raise TrackingAmbiguous("end-to-start matching ambiguous on closed path")
        permutation = {k + 1: int(order[k]) + 1 for k in range(len(lam0))}
    return TrackedSpectrum(samples=samples, permutation=permutation, label_order=label_order)


def permutation_cycles(perm: dict) -> list:
    """Disjoint cycles of a branch permutation, singletons omitted."""
    cycles = []
    seen = set()
    for start in sorted(perm):
        if start in seen:
            continue
        cyc = [start]
        seen.add(start)
        cur = perm[start]
        while cur != start:
            cyc.append(cur)
            seen.add(cur)
            cur = perm[cur]
        if len(cyc) > 1:
            cycles.append(tuple(cyc))
    return cycles
