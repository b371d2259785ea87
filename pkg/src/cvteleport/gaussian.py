"""Gaussian-formalism engine: the independent oracle for the Fock simulator.

States are (mean, covariance) pairs in the vacuum-variance-1 convention,
``X = b + b^dag``, ``P = -i(b - b^dag)``, coordinates ordered
``(X_1, P_1, X_2, P_2, ...)``.  With this scaling a homodyne record chi is
directly comparable to the quadrature eigenvalues used by the Fock engine's
Bell analysis, so no unit conversion sits between the two engines.

The coherent-input teleportation benchmark 1/(1 + e^{-2r}) is *computed*
here by running the protocol's conditioning pipeline, never hard-coded; the
closed form appears only in tests as an expected value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SimulationError

UNCERTAINTY_TOL = 1e-8
SYMPLECTIC_TOL = 1e-10


def symplectic_form(n_modes: int) -> np.ndarray:
    """Omega with [X, P] = 2i per mode: blocks [[0, 1], [-1, 0]]."""
    omega = np.zeros((2 * n_modes, 2 * n_modes))
    for k in range(n_modes):
        omega[2 * k, 2 * k + 1] = 1.0
        omega[2 * k + 1, 2 * k] = -1.0
    return omega


@dataclass(frozen=True)
class GaussianState:
    """Mean vector and symmetric covariance matrix of a Gaussian state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size) or mean.size % 2:
            raise ValueError("mean/cov dimensions inconsistent")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def n_modes(self) -> int:
        return self.mean.size // 2

    def validate(self) -> "GaussianState":
        omega = symplectic_form(self.n_modes)
        evals = np.linalg.eigvalsh(self.cov + 1j * omega)
        if evals.min() < -UNCERTAINTY_TOL:
            raise ValueError(f"uncertainty relation violated: min eig {evals.min():.3e}")
        return self

    @property
    def purity(self) -> float:
        return float(1.0 / math.sqrt(np.linalg.det(self.cov)))


@dataclass(frozen=True)
class SymplecticOp:
    """Affine Gaussian map: R -> S R + d."""

    matrix: np.ndarray
    displacement: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.matrix, dtype=float)
        d = np.asarray(self.displacement, dtype=float).reshape(-1)
        if s.shape != (d.size, d.size):
            raise ValueError("matrix/displacement shapes inconsistent")
        omega = symplectic_form(d.size // 2)
        defect = np.max(np.abs(s.T @ omega @ s - omega))
        if defect > SYMPLECTIC_TOL:
            raise ValueError(f"matrix is not symplectic: defect {defect:.3e}")
        object.__setattr__(self, "matrix", s)
        object.__setattr__(self, "displacement", d)

    def apply(self, state: GaussianState) -> GaussianState:
        if state.n_modes * 2 != self.displacement.size:
            raise ValueError("mode count mismatch")
        return GaussianState(self.matrix @ state.mean + self.displacement,
                             self.matrix @ state.cov @ self.matrix.T)


def vacuum_gaussian(n_modes: int) -> GaussianState:
    return GaussianState(np.zeros(2 * n_modes), np.eye(2 * n_modes))


def displacement_symplectic(n_modes: int, mode: int, beta: complex) -> SymplecticOp:
    """D(beta) on one mode: mean shift (2 Re beta, 2 Im beta)."""
    d = np.zeros(2 * n_modes)
    d[2 * mode] = 2 * beta.real
    d[2 * mode + 1] = 2 * beta.imag
    return SymplecticOp(np.eye(2 * n_modes), d)


def rotation_symplectic(n_modes: int, mode: int, phi: float) -> SymplecticOp:
    """b -> e^{i phi} b on one mode."""
    s = np.eye(2 * n_modes)
    c, sn = math.cos(phi), math.sin(phi)
    i = 2 * mode
    s[i:i + 2, i:i + 2] = [[c, -sn], [sn, c]]
    return SymplecticOp(s, np.zeros(2 * n_modes))


def beamsplitter_symplectic(n_modes: int, mode_i: int, mode_j: int,
                            transmissivity: float, phase: float = 0.0) -> SymplecticOp:
    """Gaussian image of the Fock engine's beamsplitter convention.

    Heisenberg action: b_i -> cos(t) b_i + e^{i phi} sin(t) b_j and
    b_j -> cos(t) b_j - e^{-i phi} sin(t) b_i with cos(t) = sqrt(T).
    """
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError("transmissivity must be in [0, 1]")
    theta = math.acos(math.sqrt(transmissivity))
    c, sn = math.cos(theta), math.sin(theta)
    rot = np.array([[math.cos(phase), -math.sin(phase)],
                    [math.sin(phase), math.cos(phase)]])
    s = np.eye(2 * n_modes)
    ii, jj = 2 * mode_i, 2 * mode_j
    s[ii:ii + 2, ii:ii + 2] = c * np.eye(2)
    s[ii:ii + 2, jj:jj + 2] = sn * rot
    s[jj:jj + 2, jj:jj + 2] = c * np.eye(2)
    s[jj:jj + 2, ii:ii + 2] = -sn * rot.T
    return SymplecticOp(s, np.zeros(2 * n_modes))


def two_mode_squeeze_symplectic(n_modes: int, mode_a: int, mode_b: int,
                                r: float) -> SymplecticOp:
    """Gaussian image of exp[r(b_a b_b - b_a^dag b_b^dag)].

    Heisenberg action: b_a -> cosh(r) b_a - sinh(r) b_b^dag, and likewise
    with a and b exchanged; in quadratures X_a -> ch X_a - sh X_b,
    P_a -> ch P_a + sh P_b.
    """
    ch, sh = math.cosh(r), math.sinh(r)
    s = np.eye(2 * n_modes)
    aa, bb = 2 * mode_a, 2 * mode_b
    for i, j in ((aa, bb), (bb, aa)):
        s[i, i] = ch
        s[i + 1, i + 1] = ch
        s[i, j] = -sh
        s[i + 1, j + 1] = sh
    return SymplecticOp(s, np.zeros(2 * n_modes))


def epr_gaussian(r: float) -> GaussianState:
    """Two-mode squeezed vacuum, built by running the squeezer on vacuum.

    The cross-correlation signs (X-X negative, P-P positive) follow the
    (-tanh r)^m number-basis amplitudes of the Fock construction.
    """
    return two_mode_squeeze_symplectic(2, 0, 1, r).apply(vacuum_gaussian(2))


def loss_channel(state: GaussianState, mode: int, eta: float) -> GaussianState:
    """Pure-loss channel: mean -> sqrt(eta) mean, cov -> eta cov + (1-eta) I."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"efficiency must be in [0, 1], got {eta}")
    n = state.n_modes
    g = np.eye(2 * n)
    i = 2 * mode
    g[i, i] = g[i + 1, i + 1] = math.sqrt(eta)
    add = np.zeros((2 * n, 2 * n))
    add[i, i] = add[i + 1, i + 1] = 1.0 - eta
    return GaussianState(g @ state.mean, g @ state.cov @ g.T + add)


def _quadrature_row(n_modes: int, mode: int, theta: float) -> np.ndarray:
    """Row vector of the measured functional cos(theta) X + sin(theta) P."""
    v = np.zeros(2 * n_modes)
    v[2 * mode] = math.cos(theta)
    v[2 * mode + 1] = math.sin(theta)
    return v


def condition_on_homodyne(state: GaussianState, mode: int, theta: float,
                          chi: float) -> tuple[GaussianState, float]:
    """Condition on a homodyne record chi of (e^{-i th} b + e^{i th} b^dag).

    Returns the conditional Gaussian state of the *remaining* modes (the
    measured mode is consumed and dropped) and the Gaussian outcome density
    (2 pi s^2)^{-1/2} exp(-(chi - m)^2 / (2 s^2)).
    """
    v = _quadrature_row(state.n_modes, mode, theta)
    var = float(v @ state.cov @ v)
    if var < 1e-12:
        raise SimulationError("conditioning variance is singular")
    m = float(v @ state.mean)
    density = math.exp(-((chi - m) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)
    a = state.cov @ v
    mean_new = state.mean + a * (chi - m) / var
    cov_new = state.cov - np.outer(a, a) / var
    keep = [i for i in range(2 * state.n_modes)
            if i not in (2 * mode, 2 * mode + 1)]
    return GaussianState(mean_new[keep], cov_new[np.ix_(keep, keep)]), density


def gaussian_fidelity_pure(state: GaussianState, target: GaussianState) -> float:
    """Overlap <t|rho|t> where the target is a pure Gaussian state.

    Tr[rho1 rho2] = 2^n / sqrt(det(S1 + S2)) * exp(-1/2 d^T (S1+S2)^{-1} d);
    equal to fidelity when one state is pure.
    """
    n = state.n_modes
    if target.n_modes != n:
        raise ValueError("mode count mismatch")
    total = state.cov + target.cov
    delta = state.mean - target.mean
    val = (2.0 ** n) / math.sqrt(np.linalg.det(total)) * math.exp(
        -0.5 * float(delta @ np.linalg.solve(total, delta)))
    return float(val)


def fidelity_with_coherent(state: GaussianState, beta: complex) -> float:
    n = state.n_modes
    if n != 1:
        raise ValueError("coherent target comparison is single-mode")
    target = GaussianState(np.array([2 * beta.real, 2 * beta.imag]), np.eye(2))
    return gaussian_fidelity_pure(state, target)


# ---------------------------------------------------------------------------
# the protocol in Gaussian form

_V, _A, _B = 0, 1, 2


def _pre_measurement_state(r: float, beta: complex,
                           eta_epr: tuple[float, float] = (1.0, 1.0)) -> GaussianState:
    """Input on V, (lossy) entangled resource on (A, B), Bell beamsplitter applied.

    After the beamsplitter mode A carries c_+ = (b_V + b_A)/sqrt(2) and mode
    V carries c_- = (b_V - b_A)/sqrt(2); the homodyne records are chi_+ = X
    of mode A and chi_- = P of mode V.
    """
    state = vacuum_gaussian(3)
    state = two_mode_squeeze_symplectic(3, _A, _B, r).apply(state)
    if eta_epr[0] < 1.0:
        state = loss_channel(state, _A, eta_epr[0])
    if eta_epr[1] < 1.0:
        state = loss_channel(state, _B, eta_epr[1])
    state = displacement_symplectic(3, _V, beta).apply(state)
    return beamsplitter_symplectic(3, _A, _V, 0.5).apply(state)


def _conditional_decomposition(state: GaussianState):
    """Split the 3-mode pre-measurement state around the two homodyne reads.

    Returns (m_q, S_qq, c, L, S_cond) such that the outcome pair
    q = (chi_+, chi_-) is N(m_q, S_qq) and the conditional Bob state is
    mean = c + L (q - m_q), covariance S_cond.
    """
    v1 = _quadrature_row(3, _A, 0.0)          # chi_+ : X of the c_+ carrier
    v2 = _quadrature_row(3, _V, math.pi / 2)  # chi_- : P of the c_- carrier
    vmat = np.vstack([v1, v2])
    bob_rows = [2 * _B, 2 * _B + 1]
    m_q = vmat @ state.mean
    s_qq = vmat @ state.cov @ vmat.T
    s_bq = state.cov[bob_rows, :] @ vmat.T
    l_mat = s_bq @ np.linalg.inv(s_qq)
    s_cond = state.cov[np.ix_(bob_rows, bob_rows)] - l_mat @ s_bq.T
    c = state.mean[bob_rows]
    return m_q, s_qq, c, l_mat, s_cond


def conditional_teleport(r: float, beta: complex, outcome: tuple[float, float],
                         gain: float = 1.0,
                         eta_epr: tuple[float, float] = (1.0, 1.0)
                         ) -> tuple[GaussianState, float]:
    """Bob's post-correction state at a fixed outcome, plus the joint density.

    The correction displaces by gain * alpha with alpha =
    (chi_+ + i chi_-)/sqrt(2), i.e. mean shift sqrt(2) * gain * (chi_+, chi_-).
    """
    state = _pre_measurement_state(r, beta, eta_epr)
    m_q, s_qq, c, l_mat, s_cond = _conditional_decomposition(state)
    q = np.asarray(outcome, dtype=float)
    dev = q - m_q
    density = math.exp(-0.5 * float(dev @ np.linalg.solve(s_qq, dev))) / (
        2 * math.pi * math.sqrt(np.linalg.det(s_qq)))
    mean = c + l_mat @ dev + math.sqrt(2) * gain * q
    return GaussianState(mean, s_cond), density


def unconditional_output(r: float, beta: complex, gain: float = 1.0,
                         eta_epr: tuple[float, float] = (1.0, 1.0)) -> GaussianState:
    """Outcome-averaged post-correction Bob state (a Gaussian mixture)."""
    state = _pre_measurement_state(r, beta, eta_epr)
    m_q, s_qq, c, l_mat, s_cond = _conditional_decomposition(state)
    t = l_mat + math.sqrt(2) * gain * np.eye(2)
    mean = c + math.sqrt(2) * gain * m_q
    cov = s_cond + t @ s_qq @ t.T
    return GaussianState(mean, cov)


def teleport_fidelity_coherent(r: float, gain: float = 1.0,
                               eta_epr: tuple[float, float] = (1.0, 1.0),
                               beta: complex = 0j) -> float:
    """Average teleportation fidelity for a coherent input, via the pipeline.

    Fidelity is linear in the state, so the density-weighted average over
    outcomes equals the fidelity of the unconditional output state.  For
    unit gain and ideal channels the result is independent of beta and of
    any particular outcome.
    """
    if r < 0:
        raise ValueError("squeezing parameter must be >= 0")
    out = unconditional_output(r, beta, gain, eta_epr)
    return fidelity_with_coherent(out, beta)
