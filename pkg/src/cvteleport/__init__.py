"""Continuous-variable teleportation of atomic motional states.

Truncated Fock-space engine (states, channels, Bell analysis, protocol
orchestration) with an independent Gaussian-formalism oracle for every
Gaussian-input path, plus a reproducible CLI.
"""

from .bell import (GridSpec, HomodyneSetting, MeasurementOutcome, OutcomeGrid,
                   bell_project_direct, bell_project_operator, outcome_density,
                   quadrature_eigenvector, sample_outcome, sample_outcomes)
from .channels import (GammaProfile, LaserEnvelope, PhysicalParams, TransferMap,
                       apply_read_map, apply_write_map, constant_gamma,
                       gamma_from_physics, gaussian_gamma, prepare_epr_lossy,
                       profile_from_physics, transfer_efficiency, validate_regime)
from .errors import (BasisMismatchError, ConfigError, CutoffTooSmallError,
                     GridTooSmallError, QuadratureRangeError,
                     RegimeValidationError, SimulationError, TruncationError)
from .fock import (BasisSpec, DensityOperator, FockVector, ModeOperator,
                   beamsplitter, cat_state, coherent, displace, epr_state,
                   fidelity, fock_state, overlap, partial_trace,
                   quadrature_moments, squeezed_state, tensor_product,
                   trace_distance, two_mode_squeeze, vacuum)
from .gaussian import (GaussianState, SymplecticOp, condition_on_homodyne,
                       epr_gaussian, fidelity_with_coherent,
                       gaussian_fidelity_pure, loss_channel,
                       teleport_fidelity_coherent, vacuum_gaussian)
from .protocol import (FidelityReport, InputSpec, ProtocolConfig, SweepRow,
                       TeleportRecord, assemble_initial_state, average_fidelity,
                       ideal_limit_state, run_teleport, sweep)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
