"""Bell-state analysis: quadrature projections, outcome densities, sampling.

Convention (fixed once, documented here, and used consistently by the
protocol layer):

* The sending station mixes the input mode V with Alice's resource mode A
  on a 50/50 beamsplitter ``U = exp[(pi/4)(b_A^dag b_V - b_A b_V^dag)]``.
  After U, mode A carries ``c_+ = (b_V + b_A)/sqrt(2)`` and mode V carries
  ``c_- = (b_V - b_A)/sqrt(2)``.
* Detector D_+ measures the quadrature of c_+ at local-oscillator phase
  ``theta_+ = 0`` (outcome chi_+); D_- measures c_- at ``theta_- = pi/2``
  (outcome chi_-).  The quadrature at phase theta is
  ``e^{-i theta} c + e^{i theta} c^dag`` with vacuum outcome density
  ``(2 pi)^{-1/2} exp(-chi^2 / 2)``.
* ``alpha = (chi_+ + i chi_-) / sqrt(2)``.  With these choices the
  unnormalized conditional state of Bob's mode admits the closed operator
  form ``(2 pi)^{-1/2} e^{|alpha|^2/2} <alpha|_V <alpha*|_A
  exp(-b_V b_A) |Psi>`` (normalized coherent bras), whose squared norm is
  the joint outcome density.  The e^{|alpha|^2/2} prefactor is what remains
  of the (2 pi)^{-1/2} e^{-|alpha|^2/2} projector normalization after the
  two unnormalized exponential bras <0|e^{alpha b} = e^{|alpha|^2/2}<alpha*|
  are rewritten as normalized coherent bras; the test suite checks the two
  routes agree to 1e-8 in overlap and 1e-6 in density.
  An overall conjugation of alpha (equivalently chi_- -> -chi_-) would
  describe the same physics with the opposite LO rotation direction; this
  package fixes the direction so that a coherent input |beta> on V with a
  vacuum resource centers the outcome density at
  (sqrt(2) Re beta, sqrt(2) Im beta).

Quadrature eigenvectors are delta-normalized and therefore not normalizable;
their Fock coefficients do not decay with n.  The standalone constructor
enforces |chi| <= sqrt(2 N) so that the classical turning point of the top
level lies beyond chi and the truncated eigenrelation holds away from the
cutoff.  Projection routines contract the eigenbra against states whose
photon-number tails are already controlled, which is accurate for any
finite chi; they therefore bypass the strict range check (the state's tail
weight, tracked in ``trunc_budget``, is the relevant error control).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import fock
from .errors import GridTooSmallError, QuadratureRangeError

THETA_PLUS_DEFAULT = 0.0
THETA_MINUS_DEFAULT = math.pi / 2
DEFAULT_HALF_WIDTH = 8.0
DEFAULT_POINTS = 161
DEFICIT_LIMIT = 1e-2
SIGMA_COVERAGE = 6.0


@dataclass(frozen=True)
class HomodyneSetting:
    """Local-oscillator phases of the two detectors."""

    theta_plus: float = THETA_PLUS_DEFAULT
    theta_minus: float = THETA_MINUS_DEFAULT


@dataclass(frozen=True)
class MeasurementOutcome:
    """One Bell-analysis record: (chi_+, chi_-) and the derived alpha."""

    chi_plus: float
    chi_minus: float
    alpha: complex = field(default=None)
    density_weight: float = 0.0

    def __post_init__(self):
        derived = (self.chi_plus + 1j * self.chi_minus) / math.sqrt(2.0)
        if self.alpha is None:
            object.__setattr__(self, "alpha", derived)
        elif abs(self.alpha - derived) > 1e-12:
            raise ValueError(
                f"alpha {self.alpha} inconsistent with outcomes {derived} beyond 1e-12")
        if self.density_weight < 0:
            raise ValueError("density_weight must be >= 0")


def quadrature_range_max(cutoff: int) -> float:
    """Largest |chi| for which the truncated eigenvector is reliable."""
    return math.sqrt(2.0 * cutoff)


def quadrature_amplitudes(chi: float, theta: float, cutoff: int) -> np.ndarray:
    """Fock coefficients of the delta-normalized quadrature eigenvector.

    Three-term recursion (the eigenrelation itself):
    psi_0 = (2 pi)^{-1/4} e^{-chi^2/4},  psi_1 = chi psi_0,
    psi_{n+1} = (chi psi_n - sqrt(n) psi_{n-1}) / sqrt(n+1),
    then the phase e^{i n theta} rotates the measured quadrature to theta.
    """
    psi = np.zeros(cutoff + 1)
    psi[0] = (2 * math.pi) ** (-0.25) * math.exp(-chi * chi / 4.0)
    if cutoff >= 1:
        psi[1] = chi * psi[0]
    for n in range(1, cutoff):
        psi[n + 1] = (chi * psi[n] - math.sqrt(n) * psi[n - 1]) / math.sqrt(n + 1)
    if theta == 0.0:
        return psi.astype(np.complex128)
    return psi * np.exp(1j * theta * np.arange(cutoff + 1))


def quadrature_amplitudes_series(chi: float, theta: float, cutoff: int) -> np.ndarray:
    """Same coefficients from the exponential-projector series.

    (2 pi)^{-1/4} e^{-chi^2/4} exp[chi e^{i th} b^dag - e^{2 i th} b^dag^2 / 2]
    applied to vacuum; the generator is nilpotent so the matrix exponential
    terminates and is exact for every level it can reach.  Kept as the
    independent cross-check route for the recursion.
    """
    cre = fock._cre_matrix(cutoff)
    gen = chi * np.exp(1j * theta) * cre - 0.5 * np.exp(2j * theta) * (cre @ cre)
    col = expm(gen)[:, 0]
    return (2 * math.pi) ** (-0.25) * math.exp(-chi * chi / 4.0) * col


def quadrature_eigenvector(chi: float, theta: float, cutoff: int,
                           strict_range: bool = True) -> fock.FockVector:
    """Delta-normalized quadrature eigenvector as an (unnormalized) FockVector."""
    if strict_range and abs(chi) > quadrature_range_max(cutoff):
        raise QuadratureRangeError(
            f"|chi| = {abs(chi):.3f} beyond reliable range "
            f"{quadrature_range_max(cutoff):.3f} for cutoff {cutoff}")
    basis = fock.BasisSpec(("q",), cutoff)
    return fock.FockVector(basis, quadrature_amplitudes(chi, theta, cutoff),
                           normalized=False)


def _quadrature_matrix(chis: np.ndarray, theta: float, cutoff: int) -> np.ndarray:
    """Rows of quadrature amplitudes for a whole grid of chi values."""
    chis = np.asarray(chis, dtype=float)
    psi = np.zeros((chis.size, cutoff + 1))
    psi[:, 0] = (2 * math.pi) ** (-0.25) * np.exp(-chis ** 2 / 4.0)
    if cutoff >= 1:
        psi[:, 1] = chis * psi[:, 0]
    for n in range(1, cutoff):
        psi[:, n + 1] = (chis * psi[:, n] - math.sqrt(n) * psi[:, n - 1]) / math.sqrt(n + 1)
    if theta == 0.0:
        return psi.astype(np.complex128)
    return psi * np.exp(1j * theta * np.arange(cutoff + 1))


# ---------------------------------------------------------------------------
# Bell projection, two routes


def bell_transform(state: fock.FockVector, victor_mode: str = "Vx",
                   alice_mode: str = "Ax") -> fock.FockVector:
    """Apply the sending-station 50/50 beamsplitter.

    Afterwards ``alice_mode`` carries c_+ and ``victor_mode`` carries c_-.
    """
    return fock.beamsplitter(state, (alice_mode, victor_mode), 0.5)


def _contract_two_bras(state: fock.FockVector, bra_a: np.ndarray, mode_a: str,
                       bra_b: np.ndarray, mode_b: str) -> fock.FockVector:
    basis = state.basis
    ax_a, ax_b = basis.axis(mode_a), basis.axis(mode_b)
    tensor = state.tensor_view()
    out = np.tensordot(bra_a.conj(), tensor, axes=([0], [ax_a]))
    # removing ax_a shifts later axes down by one
    ax_b2 = ax_b if ax_b < ax_a else ax_b - 1
    out = np.tensordot(bra_b.conj(), out, axes=([0], [ax_b2]))
    remaining = tuple(m for m in basis.modes if m not in (mode_a, mode_b))
    sub = basis.subset(remaining)
    return fock.FockVector(sub, out.reshape(-1), normalized=False,
                           trunc_budget=state.trunc_budget)


def bell_project_direct(state: fock.FockVector,
                        outcome: MeasurementOutcome | tuple[float, float],
                        setting: HomodyneSetting = HomodyneSetting(),
                        victor_mode: str = "Vx", alice_mode: str = "Ax",
                        pretransformed: bool = False) -> fock.FockVector:
    """Beamsplitter-then-quadrature-projection route.

    Returns the unnormalized conditional state of the remaining mode(s);
    its squared norm is the joint outcome density p(chi_+, chi_-).
    Set ``pretransformed`` when ``state`` already went through
    ``bell_transform`` (grids, repeated outcomes).
    """
    chi_p, chi_m = _outcome_pair(outcome)
    if not pretransformed:
        if not state.normalized:
            raise ValueError("bell projection expects a normalized input state")
        state = bell_transform(state, victor_mode, alice_mode)
    cutoff = state.basis.cutoff
    bra_plus = quadrature_amplitudes(chi_p, setting.theta_plus, cutoff)
    bra_minus = quadrature_amplitudes(chi_m, setting.theta_minus, cutoff)
    return _contract_two_bras(state, bra_plus, alice_mode, bra_minus, victor_mode)


def _lower_pair(tensor: np.ndarray, ax_v: int, ax_a: int) -> np.ndarray:
    """Apply b_V b_A to an amplitude tensor."""
    t = fock._mode_annihilate(tensor, ax_v)
    return fock._mode_annihilate(t, ax_a)


def bell_project_operator(state: fock.FockVector,
                          outcome: MeasurementOutcome | tuple[float, float],
                          victor_mode: str = "Vx", alice_mode: str = "Ax"
                          ) -> fock.FockVector:
    """Closed operator-form route for the same projection.

    Computes (2 pi)^{-1/2} e^{|alpha|^2/2} <alpha|_V <alpha*|_A
    exp(-b_V b_A)|Psi> with normalized coherent bras;
    exp(-b_V b_A) is nilpotent under truncation, so its series terminates.
    The squared norm equals the density of ``bell_project_direct``.
    """
    if not state.normalized:
        raise ValueError("bell projection expects a normalized input state")
    chi_p, chi_m = _outcome_pair(outcome)
    alpha = (chi_p + 1j * chi_m) / math.sqrt(2.0)
    basis = state.basis
    ax_v, ax_a = basis.axis(victor_mode), basis.axis(alice_mode)
    tensor = state.tensor_view()
    total = tensor.copy()
    term = tensor
    for k in range(1, basis.cutoff + 1):
        term = -_lower_pair(term, ax_v, ax_a) / k
        total += term
        if not np.any(term):
            break
    shaped = fock.FockVector(basis, total.reshape(-1), normalized=False,
                             trunc_budget=state.trunc_budget)
    bra_v = fock._coherent_amplitudes(alpha, basis.cutoff)
    bra_a = fock._coherent_amplitudes(np.conj(alpha), basis.cutoff)
    bob = _contract_two_bras(shaped, bra_v, victor_mode, bra_a, alice_mode)
    scale = (2 * math.pi) ** (-0.5) * math.exp(abs(alpha) ** 2 / 2.0)
    return fock.FockVector(bob.basis, scale * bob.amplitudes, normalized=False,
                           trunc_budget=bob.trunc_budget)


def _outcome_pair(outcome) -> tuple[float, float]:
    if isinstance(outcome, MeasurementOutcome):
        return outcome.chi_plus, outcome.chi_minus
    chi_p, chi_m = outcome
    return float(chi_p), float(chi_m)


# ---------------------------------------------------------------------------
# outcome densities on a grid


@dataclass(frozen=True)
class GridSpec:
    """Symmetric square outcome grid [-L, L]^2 with n points per axis."""

    half_width: float = DEFAULT_HALF_WIDTH
    n_points: int = DEFAULT_POINTS

    def __post_init__(self):
        if self.half_width <= 0 or self.n_points < 2:
            raise ValueError("grid needs half_width > 0 and n_points >= 2")

    @property
    def axis_points(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_points)

    @property
    def spacing(self) -> float:
        return 2 * self.half_width / (self.n_points - 1)

    @property
    def axis_weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


@dataclass(frozen=True)
class OutcomeGrid:
    """Joint outcome density p(chi_+, chi_-) sampled on a GridSpec."""

    spec: GridSpec
    density: np.ndarray  # shape (n, n), axis 0 = chi_+, axis 1 = chi_-
    normalization_deficit: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        dens = np.asarray(self.density, dtype=float)
        n = self.spec.n_points
        if dens.shape != (n, n):
            raise ValueError("density shape does not match grid spec")
        if dens.min() < -1e-14:
            raise ValueError("density must be nonnegative")
        dens = np.clip(dens, 0.0, None)
        dens.setflags(write=False)
        object.__setattr__(self, "density", dens)

    @property
    def chi_plus(self) -> np.ndarray:
        return self.spec.axis_points

    @property
    def chi_minus(self) -> np.ndarray:
        return self.spec.axis_points

    @property
    def cell_weights(self) -> np.ndarray:
        w = self.spec.axis_weights
        return np.outer(w, w)

    def probabilities(self) -> np.ndarray:
        p = self.density * self.cell_weights
        return p / p.sum()


def outcome_marginal_moments(state: fock.FockVector, victor_mode: str = "Vx",
                             alice_mode: str = "Ax",
                             setting: HomodyneSetting = HomodyneSetting(),
                             pretransformed: bool = False
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Means and standard deviations of (chi_+, chi_-) from state moments."""
    if not pretransformed:
        state = bell_transform(state, victor_mode, alice_mode)
    mean, cov = fock.quadrature_moments(state, (alice_mode, victor_mode))
    # rows of the measured functionals in (X_A, P_A, X_V, P_V) order
    rows = np.zeros((2, 4))
    rows[0, 0] = math.cos(setting.theta_plus)
    rows[0, 1] = math.sin(setting.theta_plus)
    rows[1, 2] = math.cos(setting.theta_minus)
    rows[1, 3] = math.sin(setting.theta_minus)
    mu = rows @ mean
    var = np.diag(rows @ cov @ rows.T)
    return mu, np.sqrt(var)


def auto_grid(state: fock.FockVector, victor_mode: str = "Vx",
              alice_mode: str = "Ax",
              setting: HomodyneSetting = HomodyneSetting(),
              n_points: int = DEFAULT_POINTS,
              pretransformed: bool = False) -> GridSpec:
    """Default grid, expanded so +-L covers mean +- 6 sigma on both axes."""
    mu, sig = outcome_marginal_moments(state, victor_mode, alice_mode, setting,
                                       pretransformed=pretransformed)
    need = float(np.max(np.abs(mu) + SIGMA_COVERAGE * sig))
    return GridSpec(max(DEFAULT_HALF_WIDTH, math.ceil(need * 2) / 2.0), n_points)


def outcome_density(state, grid: GridSpec | None = None,
                    setting: HomodyneSetting = HomodyneSetting(),
                    victor_mode: str = "Vx", alice_mode: str = "Ax",
                    deficit_limit: float = DEFICIT_LIMIT) -> OutcomeGrid:
    """Joint outcome density over a grid, from direct-route squared norms.

    ``state`` may be a FockVector or a list of (weight, FockVector) branches
    (a mixed input).  When no grid is given one is sized from the quadrature
    second moments of the state (6 sigma coverage).  The normalization
    deficit |1 - sum p dA| is recorded; above ``deficit_limit`` the grid is
    rejected.
    """
    branches = fock._as_branches(state)
    transformed = [(w, bell_transform(s, victor_mode, alice_mode))
                   for w, s in branches]
    if grid is None:
        mixture = [(w, s) for w, s in transformed]
        mu, sig = _mixture_outcome_moments(mixture, victor_mode, alice_mode, setting)
        need = float(np.max(np.abs(mu) + SIGMA_COVERAGE * sig))
        grid = GridSpec(max(DEFAULT_HALF_WIDTH, math.ceil(need * 2) / 2.0))
    dens = np.zeros((grid.n_points, grid.n_points))
    for w, s in transformed:
        dens += w * _density_grid_pure(s, grid, setting, victor_mode, alice_mode)
    total = float(np.sum(dens * grid.cell_weights))
    deficit = abs(1.0 - total)
    if deficit > deficit_limit:
        raise GridTooSmallError(
            f"outcome grid captures only {total:.6f} of the probability mass "
            f"(deficit {deficit:.3e} > {deficit_limit:.1e}); widen the grid")
    meta = {"half_width": grid.half_width, "n_points": grid.n_points,
            "theta_plus": setting.theta_plus, "theta_minus": setting.theta_minus,
            "captured_mass": total}
    return OutcomeGrid(grid, dens, deficit, meta)


def _mixture_outcome_moments(transformed, victor_mode, alice_mode, setting):
    mus, variances = [], []
    weights = [w for w, _ in transformed]
    stats = [outcome_marginal_moments(s, victor_mode, alice_mode, setting,
                                      pretransformed=True)
             for _, s in transformed]
    mu = np.sum([w * m for w, (m, _) in zip(weights, stats)], axis=0)
    second = np.sum([w * (s ** 2 + m ** 2) for w, (m, s) in zip(weights, stats)],
                    axis=0)
    var = np.maximum(second - mu ** 2, 0.0)
    return mu, np.sqrt(var)


def _density_grid_pure(transformed: fock.FockVector, grid: GridSpec,
                       setting: HomodyneSetting, victor_mode: str,
                       alice_mode: str, chunk: int = 32) -> np.ndarray:
    basis = transformed.basis
    cutoff = basis.cutoff
    xs = grid.axis_points
    bras_p = np.conj(_quadrature_matrix(xs, setting.theta_plus, cutoff))
    bras_m = np.conj(_quadrature_matrix(xs, setting.theta_minus, cutoff))
    ax_v, ax_a = basis.axis(victor_mode), basis.axis(alice_mode)
    tensor = np.moveaxis(transformed.tensor_view(), (ax_v, ax_a), (0, 1))
    rest = tensor.reshape(cutoff + 1, cutoff + 1, -1)
    dens = np.empty((grid.n_points, grid.n_points))
    for lo in range(0, grid.n_points, chunk):
        hi = min(lo + chunk, grid.n_points)
        # [p, v, b] block: contract Alice axis with the chi_+ bras
        block = np.einsum('pa,vab->pvb', bras_p[lo:hi], rest, optimize=True)
        bob = np.einsum('mv,pvb->pmb', bras_m, block, optimize=True)
        dens[lo:hi] = np.sum(np.abs(bob) ** 2, axis=2)
    return dens


def integrate_bob_marginal(state, grid: GridSpec | None = None,
                           setting: HomodyneSetting = HomodyneSetting(),
                           victor_mode: str = "Vx", alice_mode: str = "Ax",
                           bob_mode: str = "Bx") -> fock.DensityOperator:
    """Outcome-integrated (unconditioned) Bob state from the grid.

    Equals the partial trace of the input over (V, A) up to quadrature
    error; used by the no-signaling checks.
    """
    branches = fock._as_branches(state)
    basis = branches[0][1].basis
    cutoff = basis.cutoff
    if grid is None:
        grid = auto_grid(branches[0][1], victor_mode, alice_mode, setting)
    xs = grid.axis_points
    cell_w = np.outer(grid.axis_weights, grid.axis_weights)
    bras_p = np.conj(_quadrature_matrix(xs, setting.theta_plus, cutoff))
    bras_m = np.conj(_quadrature_matrix(xs, setting.theta_minus, cutoff))
    rho = np.zeros((cutoff + 1, cutoff + 1), dtype=np.complex128)
    for w, s in branches:
        t = bell_transform(s, victor_mode, alice_mode)
        ax_v, ax_a = t.basis.axis(victor_mode), t.basis.axis(alice_mode)
        tensor = np.moveaxis(t.tensor_view(), (ax_v, ax_a), (0, 1))
        rest = tensor.reshape(cutoff + 1, cutoff + 1, -1)
        for lo in range(0, grid.n_points, 32):
            hi = min(lo + 32, grid.n_points)
            block = np.einsum('pa,vab->pvb', bras_p[lo:hi], rest, optimize=True)
            bob = np.einsum('mv,pvb->pmb', bras_m, block, optimize=True)
            rho += w * np.einsum('pmb,pmc,pm->bc', bob, bob.conj(), cell_w[lo:hi],
                                 optimize=True)
    return fock.DensityOperator(fock.BasisSpec((bob_mode,), cutoff), rho)


# ---------------------------------------------------------------------------
# sampling


def sample_outcomes(grid: OutcomeGrid, n: int, seed) -> np.ndarray:
    """Draw n outcomes by inverse-CDF over cells plus uniform in-cell jitter.

    Deterministic for a given seed (numpy SeedSequence semantics).
    """
    rng = np.random.default_rng(seed)
    probs = grid.probabilities().reshape(-1)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    i_p, i_m = np.unravel_index(idx, grid.density.shape)
    h = grid.spec.spacing
    jitter = rng.uniform(-0.5 * h, 0.5 * h, size=(n, 2))
    xs = grid.spec.axis_points
    out = np.column_stack([xs[i_p], xs[i_m]]) + jitter
    return out


def sample_outcome(grid: OutcomeGrid, seed) -> MeasurementOutcome:
    """One outcome; ``density_weight`` is the density at the parent cell."""
    rng = np.random.default_rng(seed)
    probs = grid.probabilities().reshape(-1)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    i_p, i_m = np.unravel_index(idx, grid.density.shape)
    h = grid.spec.spacing
    chi_p = float(grid.spec.axis_points[i_p] + rng.uniform(-0.5 * h, 0.5 * h))
    chi_m = float(grid.spec.axis_points[i_m] + rng.uniform(-0.5 * h, 0.5 * h))
    return MeasurementOutcome(chi_p, chi_m,
                              density_weight=float(grid.density[i_p, i_m]))
