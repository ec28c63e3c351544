"""Mode-power statistics of sound in a randomly perturbed shallow-water waveguide."""

from ._backend import HAVE_NUMBA, backend_name
from .coupling import CouplingModel, alpha_to_nu, build_coupling, nu_to_alpha
from .errors import *  # noqa: F401,F403
from .fields import ArrayGeometry, CorrelationCurve, correlation_curve, correlation_radius, forward_radii
from .inversion import InverseProblem, InversionResult, minimize, misfit, sensitivity
from .moments import (MomentState, propagate, propagate_Q, propagate_S, scintillation_index,
                      spectral_summary, weak_dissipation_expansion)
from .modes import EnvironmentParams, ModeSet, SourceSpec, solve_modes, source_amplitudes
from .montecarlo import simulate_powers, synthesize_snapshots
from .pipeline import (RecordingMeta, SnapshotSet, empirical_correlation, empirical_radius,
                       empirical_scintillation, extract_coefficients, read_snapshots, write_snapshots)

__version__ = "0.1.0"
