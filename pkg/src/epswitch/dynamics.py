"""Bloch-vector evolution along parameter loops and the mode-switch runs.

A loop is an ellipse in the (delta1, omega1) plane,

    delta1(t) = D_c + R_D cos(2 pi t / T + phi),
    omega1(t) = O_c + R_O sin(2 pi t / T + phi),

traversed counterclockwise as written; "clockwise" reverses the time
argument (t -> T - t), which is the opposite geometric orientation with
delta1 on the horizontal axis. The equation of motion dS/dt = M(t) S + c
is integrated with classical RK4; M is affine in (delta1, omega1), so the
stage matrices are assembled from three precomputed components.

Branch labels along a loop are anchored at the enclosed EP2: close to the
degeneracy the coalescing pair is unambiguous (the two nearest upper-half-
plane eigenvalues), and labels are transported from there to the loop start
by spectral continuation. Branches 1 and 2 are the coalescing pair (1 the
less damped of the two at the anchor), 8 and 7 their complex conjugates,
and branch 5 is the least damped of the remaining four. The mixed input
states are S = Re(r1 + r8) and Re(r2 + r7), rescaled by one common factor
keeping both density matrices positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .errors import (
    DegenerateTop,
    NotConjugatePaired,
    StepTooLarge,
    TrackingAmbiguous,
)
from .model import (
    SystemParams,
    bloch_to_rho,
    build_dynamical_system,
    explicit_dynamical_matrix,
    positivity_margin,
    PURE_STATE_RADIUS,
)
from .spectral import EigenSystem, eigendecompose, track_spectrum
from .eptools import refine_ep

DIRECTIONS = ("cw", "ccw")


@dataclass(frozen=True)
class LoopPath:
    """Closed elliptic path around a point of the (delta1, omega1) plane."""

    center: tuple
    radii: tuple
    phase: float
    period: float
    direction: str = "ccw"
    base_params: SystemParams = field(default_factory=SystemParams)

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError(f"period must be positive, got {self.period}")
        if min(self.radii) < 0:
            raise ValueError(f"radii must be nonnegative, got {self.radii}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")

    def with_direction(self, direction: str) -> "LoopPath":
        return LoopPath(self.center, self.radii, self.phase, self.period, direction, self.base_params)

    def point(self, t: float) -> tuple:
        tt = self.period - t if self.direction == "cw" else t
        th = 2.0 * np.pi * tt / self.period + self.phase
        return (
            self.center[0] + self.radii[0] * np.cos(th),
            self.center[1] + self.radii[1] * np.sin(th),
        )

    def params_at(self, t: float) -> SystemParams:
        d1, om1 = self.point(t)
        return self.base_params.replace(delta1=d1, omega1=om1)

    def encloses(self, point: tuple) -> bool:
        if min(self.radii) == 0:
            return False
        dx = (point[0] - self.center[0]) / self.radii[0]
        dy = (point[1] - self.center[1]) / self.radii[1]
        return dx * dx + dy * dy < 1.0


def make_loop_path(center, radii, phase, period, direction="ccw", base_params=None) -> LoopPath:
    """Construct a LoopPath; see the class for the parametrization."""
    return LoopPath(
        center=tuple(center),
        radii=tuple(radii),
        phase=float(phase),
        period=float(period),
        direction=direction,
        base_params=base_params if base_params is not None else SystemParams(),
    )


@dataclass
class Trajectory:
    """Time series of the Bloch vector along a loop, plus diagnostics
    attached by the coefficient and decay analyses."""

    times: np.ndarray
    states: np.ndarray
    path: LoopPath
    coefficients: np.ndarray = None       # (n_coef, 8) complex, when computed
    coefficient_times: np.ndarray = None
    accumulated_decay: np.ndarray = None  # (n_coef, 8, 8), when computed

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _affine_components(path: LoopPath):
    """M(t) = m0 + delta1(t) * md + omega1(t) * mo; c is time independent."""
    base = path.base_params
    sys0 = build_dynamical_system(base.replace(delta1=0.0, omega1=0.0))
    md = explicit_dynamical_matrix(base.replace(delta1=1.0, omega1=0.0)) - sys0.m
    mo = explicit_dynamical_matrix(base.replace(delta1=0.0, omega1=1.0)) - sys0.m
    return sys0.m, md, mo, sys0.drive


def _rk4_run(path: LoopPath, s0: np.ndarray, n_steps: int) -> np.ndarray:
    m0, md, mo, c = _affine_components(path)

    def mat(t):
        d1, om1 = path.point(t)
        return m0 + d1 * md + om1 * mo

    dt = path.period / n_steps
    states = np.empty((n_steps + 1, 8))
    s = np.array(s0, dtype=float)
    states[0] = s
    a_next = mat(0.0)
    for k in range(n_steps):
        t = k * dt
        a1 = a_next
        a2 = mat(t + 0.5 * dt)
        a3 = mat(t + dt)
        k1 = a1 @ s + c
        k2 = a2 @ (s + 0.5 * dt * k1) + c
        k3 = a2 @ (s + 0.5 * dt * k2) + c
        k4 = a3 @ (s + dt * k3) + c
        s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[k + 1] = s
        a_next = a3
    return states


def integrate(
    s0: np.ndarray,
    path: LoopPath,
    dt: float = None,
    guard_tol: float = 1e-6,
    max_halvings: int = 6,
) -> Trajectory:
    """RK4 integration of dS/dt = M(t) S + c over one loop period.

    The step defaults to T/4096 and is halved until the final state changes
    by less than `guard_tol` under one further halving; StepTooLarge is
    raised if the guard never passes.
    """
    n = 4096 if dt is None else max(16, int(np.ceil(path.period / dt)))
    for _ in range(max_halvings):
        states = _rk4_run(path, s0, n)
        finer = _rk4_run(path, s0, 2 * n)
        if np.max(np.abs(finer[-1] - states[-1])) <= guard_tol:
            times = np.linspace(0.0, path.period, 2 * n + 1)
            return Trajectory(times=times, states=finer, path=path)
        n *= 2
    raise StepTooLarge(
        f"final state still moving more than {guard_tol:g} after "
        f"{max_halvings} halvings (n = {n})"
    )


def propagate_frozen(s0: np.ndarray, p: SystemParams, t: float) -> np.ndarray:
    """Exact propagation for frozen parameters via eigendecomposition,
    used as the oracle for the RK4 integrator in tests."""
    sys = build_dynamical_system(p)
    es = eigendecompose(sys.m)
    shift = np.linalg.solve(sys.m, sys.drive) if np.any(sys.drive) else np.zeros(8)
    a = np.linalg.solve(es.right, s0 + shift)
    return np.real(es.right @ (np.exp(es.lambdas * t) * a)) - shift


# ---------------------------------------------------------------------------
# branch labeling anchored at the EP


def _upper_pair_indices(lambdas: np.ndarray):
    iu = [i for i in range(8) if lambdas[i].imag > 1e-9]
    if len(iu) < 2:
        raise NotConjugatePaired("fewer than two upper-half-plane eigenvalues")
    pairs = sorted(
        (abs(lambdas[a] - lambdas[b]), a, b)
        for k, a in enumerate(iu)
        for b in iu[k + 1:]
    )
    return pairs[0][1], pairs[0][2]


def _conj_partner(lambdas: np.ndarray, i: int) -> int:
    d = np.abs(lambdas - np.conj(lambdas[i]))
    d[i] = np.inf
    return int(np.argmin(d))


def loop_branch_labels(path: LoopPath, ep_point: tuple) -> np.ndarray:
    """Branch labeling at the loop start, anchored near the enclosed EP.

    Returns an index array `order` such that column order[k] of the start
    eigensystem is branch k+1. The coalescing pair is identified at an
    anchor point close to the EP (where it is the nearest upper-half-plane
    pair), labeled 1 (less damped at the anchor) and 2, transported to the
    loop start by continuation; 8 and 7 are their conjugates and branch 5
    is the least damped of the rest.
    """
    start = np.array(path.point(0.0))
    ep = np.array(ep_point, dtype=float)
    anchor = ep + 0.02 * (start - ep)
    base = path.base_params

    def seg_matrix(s):
        pt = anchor + s * (start - anchor)
        return explicit_dynamical_matrix(base.replace(delta1=pt[0], omega1=pt[1]))

    w_anchor = np.linalg.eigvals(seg_matrix(0.0))
    a, b = _upper_pair_indices(w_anchor)
    if w_anchor[a].real < w_anchor[b].real:
        a, b = b, a
    tracked = track_spectrum(
        seg_matrix, n_samples=128, label_order=np.arange(8), closed=False
    )
    lam_end = tracked.samples[-1][1]

    w0 = np.linalg.eigvals(seg_matrix(1.0))
    i1 = int(np.argmin(np.abs(w0 - lam_end[a])))
    i2 = int(np.argmin(np.abs(w0 - lam_end[b])))
    if i1 == i2:
        raise TrackingAmbiguous("coalescing-pair continuation collapsed to one branch")
    i8, i7 = _conj_partner(w0, i1), _conj_partner(w0, i2)
    if len({i1, i2, i7, i8}) != 4:
        raise NotConjugatePaired("coalescing pair lacks distinct conjugate partners")
    rest = sorted(
        (i for i in range(8) if i not in (i1, i2, i7, i8)),
        key=lambda i: w0[i].real,
    )
    # slots:       1   2   3        4        5         6        7   8
    return np.array([i1, i2, rest[0], rest[1], rest[-1], rest[2], i7, i8])


def start_eigensystem(path: LoopPath, ep_point: tuple) -> EigenSystem:
    """Eigensystem at the loop start, columns in branch-label order."""
    es = eigendecompose(explicit_dynamical_matrix(path.params_at(0.0)))
    return es.reordered(loop_branch_labels(path, ep_point))


# ---------------------------------------------------------------------------
# input states


def build_input_states(es: EigenSystem, margin_tol: float = 1e-6):
    """The two real mixed input states from the coalescing quadruplet.

    `es` must be in branch-label order (see :func:`start_eigensystem`);
    branches (1, 8) and (2, 7) must be conjugate pairs. Both superpositions
    Re(r1 + r8) and Re(r2 + r7) are normalized and rescaled by the largest
    common factor keeping both density matrices positive semidefinite
    (bisection to `margin_tol` on the factor).

    Returns (s_in_1, s_in_2, scale).
    """
    lam = es.lambdas
    for i, j in ((0, 7), (1, 6)):
        if abs(lam[i] - np.conj(lam[j])) > 1e-6 * max(1.0, abs(lam[i])):
            raise NotConjugatePaired(
                f"branches {i + 1} and {j + 1} are not conjugate partners: "
                f"{lam[i]:.6g} vs {lam[j]:.6g}"
            )
    raw1 = es.right[:, 0] + es.right[:, 7]
    raw2 = es.right[:, 1] + es.right[:, 6]
    if max(np.max(np.abs(raw1.imag)), np.max(np.abs(raw2.imag))) > 1e-9:
        raise NotConjugatePaired("conjugate-pair superposition is not real")
    u1 = raw1.real / np.linalg.norm(raw1.real)
    u2 = raw2.real / np.linalg.norm(raw2.real)

    def both_positive(scale):
        return (
            positivity_margin(bloch_to_rho(scale * u1)) >= 0.0
            and positivity_margin(bloch_to_rho(scale * u2)) >= 0.0
        )

    lo, hi = 0.0, PURE_STATE_RADIUS
    while hi - lo > margin_tol * PURE_STATE_RADIUS:
        mid = 0.5 * (lo + hi)
        if both_positive(mid):
            lo = mid
        else:
            hi = mid
    return lo * u1, lo * u2, lo


def nearest_pure_state(rho: np.ndarray, degeneracy_tol: float = 1e-10) -> np.ndarray:
    """Best rank-one (pure-state) approximation of a density matrix.

    Raises DegenerateTop with both candidate projectors when the two top
    eigenvalues coincide within `degeneracy_tol`.
    """
    vals, vecs = np.linalg.eigh(np.asarray(rho, dtype=complex))
    if vals[-1] - vals[-2] < degeneracy_tol:
        cands = [np.outer(vecs[:, k], vecs[:, k].conj()) for k in (-1, -2)]
        raise DegenerateTop(
            f"top eigenvalues degenerate: {vals[-1]:.12g} vs {vals[-2]:.12g}",
            candidates=cands,
        )
    psi = vecs[:, -1]
    return np.outer(psi, psi.conj())


# ---------------------------------------------------------------------------
# instantaneous-basis analyses


def _tracked_eigensystems(path: LoopPath, times: np.ndarray, label_order: np.ndarray):
    """Eigensystems along the loop at the given times, columns carried in
    branch order by continuity (adaptively refined between samples)."""
    from .spectral import _match_step

    def eigvals_at(t):
        return np.linalg.eigvals(explicit_dynamical_matrix(path.params_at(t)))

    def transport(lam, t_a, t_b):
        """Branch-ordered eigenvalues at t_b continued from lam at t_a."""
        stack = [(t_a, t_b)]
        cur = lam
        t_cur = t_a
        while stack:
            lo, hi = stack.pop()
            w = eigvals_at(hi)
            order, move, gap = _match_step(cur, w)
            if move > 0.5 * gap:
                if hi - lo <= 1e-9 * path.period:
                    raise TrackingAmbiguous(
                        f"branch continuation ambiguous near t = {hi:.6g}"
                    )
                mid = 0.5 * (lo + hi)
                stack.append((mid, hi))
                stack.append((lo, mid))
                continue
            cur = w[order]
            t_cur = hi
        return cur

    out = []
    lam = None
    for k, t in enumerate(times):
        es = eigendecompose(explicit_dynamical_matrix(path.params_at(t)))
        if lam is None:
            order = np.asarray(label_order, dtype=int)
        else:
            lam = transport(lam, times[k - 1], t)
            cost = np.abs(lam[:, None] - es.lambdas[None, :])
            order = np.argmin(cost, axis=1)
            if len(set(order.tolist())) != 8:
                raise TrackingAmbiguous(
                    f"branch continuation ambiguous at t = {t:.6g}"
                )
        es = es.reordered(order)
        lam = es.lambdas
        out.append(es)
    return out


def adiabatic_coefficients(
    traj: Trajectory,
    path: LoopPath,
    label_order: np.ndarray,
    n_samples: int = 512,
) -> Trajectory:
    """Expansion coefficients a_i(t) = l_i(t) . S(t) over the instantaneous
    branch-labeled eigenbasis, attached to the trajectory.

    Samples the eigenbasis at `n_samples` + 1 points of the time grid (the
    states are interpolated exactly since sampling lands on grid points).
    """
    idx = np.unique(np.linspace(0, len(traj.times) - 1, n_samples + 1).astype(int))
    times = traj.times[idx]
    systems = _tracked_eigensystems(path, times, label_order)
    coef = np.empty((len(idx), 8), dtype=complex)
    for row, (k, es) in enumerate(zip(idx, systems)):
        coef[row] = es.left.T @ traj.states[k]
    traj.coefficients = coef
    traj.coefficient_times = times
    return traj


def accumulated_decay(
    path: LoopPath,
    n_samples: int = 512,
    label_order: np.ndarray = None,
) -> tuple:
    """Cumulative decay-rate differences Gamma_lj(t) along the loop.

    Gamma_lj(t) = integral_0^t Re[lambda_l(u) - lambda_j(u)] du (trapezoid
    rule on the tracked branches); positive for all t and all j means branch
    l is the least-decaying mode over the whole loop. Reversing the loop
    direction negates the final values.

    Returns (times, gamma) with gamma[k, l, j] the matrix at times[k].
    """
    if label_order is None:
        label_order = np.arange(8)
    times = np.linspace(0.0, path.period, n_samples + 1)
    systems = _tracked_eigensystems(path, times, label_order)
    lam = np.array([es.lambdas for es in systems])
    re_diff = lam.real[:, :, None] - lam.real[:, None, :]
    gamma = np.zeros_like(re_diff)
    dt = np.diff(times)
    increments = 0.5 * (re_diff[1:] + re_diff[:-1]) * dt[:, None, None]
    gamma[1:] = np.cumsum(increments, axis=0)
    return times, gamma


# ---------------------------------------------------------------------------
# the switch experiment


@dataclass
class SwitchReport:
    """Outcome of one mode-switch run.

    projections_* are the normalized moduli |l_i(0) . S| over the eight
    branches at the loop start. The verdict is True when the dominant output
    branches are exactly the coalescence partners of the dominant input
    branches (1 <-> 2 and 8 <-> 7).
    """

    input_label: int
    direction: str
    input_state: np.ndarray
    output_state: np.ndarray
    input_bloch: np.ndarray
    output_bloch: np.ndarray
    projections_in: np.ndarray
    projections_out: np.ndarray
    swapped: bool
    input_scale: float
    ep_point: tuple

    def output_offdiagonal(self) -> np.ndarray:
        """Presentation variant of the output state with the diagonal
        zeroed, used for off-diagonal presentation."""
        out = self.output_state.copy()
        np.fill_diagonal(out, 0.0)
        return out


_SWAP_PARTNER = {1: 2, 2: 1, 7: 8, 8: 7, 3: 3, 4: 4, 5: 5, 6: 6}


def _normalized_projections(es: EigenSystem, s: np.ndarray) -> np.ndarray:
    p = np.abs(es.left.T @ s)
    return p / p.sum()


def locate_loop_ep(path: LoopPath) -> tuple:
    """Refine the EP2 enclosed by (or nearest to) a loop, seeding the
    refinement at the loop center."""
    seed = path.base_params.replace(delta1=path.center[0], omega1=path.center[1])
    cand = refine_ep(seed, ("delta1", "omega1"), target_order=2)
    return (cand.location.delta1, cand.location.omega1)


def run_switch_experiment(
    input_label: int,
    direction: str,
    path: LoopPath,
    ep_point: tuple = None,
    dt: float = None,
) -> SwitchReport:
    """Prepare a mixed input state, drive it once around the loop, and
    project the result on the starting eigenbasis.

    input_label selects Re(r1 + r8) (1) or Re(r2 + r7) (2); direction
    overrides the path's. The EP anchoring the branch labels is refined
    from the loop center unless `ep_point` is given.
    """
    if input_label not in (1, 2):
        raise ValueError(f"input_label must be 1 or 2, got {input_label}")
    path = path.with_direction(direction)
    if ep_point is None:
        ep_point = locate_loop_ep(path)
    labels = loop_branch_labels(path, ep_point)
    es0 = eigendecompose(explicit_dynamical_matrix(path.params_at(0.0))).reordered(labels)
    s1, s2, scale = build_input_states(es0)
    s_in = s1 if input_label == 1 else s2

    traj = integrate(s_in, path, dt=dt)
    s_out = traj.final_state

    p_in = _normalized_projections(es0, s_in)
    p_out = _normalized_projections(es0, s_out)
    top_in = set(np.argsort(p_in)[-2:] + 1)
    top_out = set(np.argsort(p_out)[-2:] + 1)
    swapped = top_out == {_SWAP_PARTNER[b] for b in top_in}

    return SwitchReport(
        input_label=input_label,
        direction=direction,
        input_state=bloch_to_rho(s_in),
        output_state=bloch_to_rho(s_out),
        input_bloch=s_in,
        output_bloch=s_out,
        projections_in=p_in,
        projections_out=p_out,
        swapped=swapped,
        input_scale=scale,
        ep_point=tuple(ep_point),
    )
