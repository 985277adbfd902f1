"""Exceptional-point mode switching in a dissipative driven three-level
system: Bloch-space Lindblad dynamics, non-Hermitian spectral analysis,
EP location up to fifth order and non-reciprocal switch experiments."""

__version__ = "0.1.0"

from .model import (
    GELL_MANN,
    REFERENCE_PARAMS,
    PURE_STATE_RADIUS,
    DynamicalSystem,
    SystemParams,
    bloch_to_rho,
    build_dynamical_system,
    build_hamiltonian,
    build_lindblad_terms,
    build_superoperator,
    compare_printed_matrix,
    explicit_dynamical_matrix,
    printed_dynamical_matrix,
    positivity_margin,
    rho_to_bloch,
)
from .spectral import (
    EigenSystem,
    TrackedSpectrum,
    condition_numbers,
    eigendecompose,
    max_condition_number,
    permutation_cycles,
    track_spectrum,
)
from .eptools import (
    EPCandidate,
    ScanGrid,
    classify_ep_order,
    cluster_diameter,
    refine_ep,
    scan_condition_map,
    search_high_order_ep,
)
from .dynamics import (
    LoopPath,
    SwitchReport,
    Trajectory,
    accumulated_decay,
    adiabatic_coefficients,
    build_input_states,
    integrate,
    locate_loop_ep,
    loop_branch_labels,
    make_loop_path,
    nearest_pure_state,
    propagate_frozen,
    run_switch_experiment,
    start_eigensystem,
)

__all__ = [name for name in dir() if not name.startswith("_")]
