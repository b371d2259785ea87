"""Motion-light interface: coupling rate profiles, validity checks, transfer maps.

The motional mode couples to the propagating field at an effective rate
``Gamma(t) = [g0 * eta_x * |E_L(t)| / Delta]^2 / kappa``.  Solving the
resulting linear input-output dynamics and keeping the matched temporal
mode reduces every transfer to a beamsplitter of transmissivity
``eta(t) = 1 - exp(-2 * integral(Gamma))`` between the effective field mode
and the motional mode; ``eta = 1`` is a perfect swap.  All rates are
angular (rad/s); Gamma comes out in 1/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.sparse.linalg import expm_multiply
from scipy.special import erf

from . import fock
from .errors import RegimeValidationError

DEFAULT_REGIME_RATIO = 10.0
LAMB_DICKE_MAX = 0.2
RESONANCE_RTOL = 1e-6


# ---------------------------------------------------------------------------
# physical parameters and Gamma profiles


@dataclass(frozen=True)
class LaserEnvelope:
    """|E_L(t)| envelope: constant, gaussian, or sampled."""

    kind: str  # constant | gaussian | custom
    peak: float
    t0: float = 0.0
    tau: float = 1.0
    samples_t: np.ndarray | None = None
    samples_v: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "gaussian", "custom"):
            raise ValueError(f"unknown envelope kind {self.kind!r}")
        if self.peak < 0:
            raise ValueError("peak amplitude must be >= 0")
        if self.kind == "custom":
            t = np.asarray(self.samples_t, dtype=float)
            v = np.asarray(self.samples_v, dtype=float)
            if t.ndim != 1 or t.shape != v.shape or t.size < 2:
                raise ValueError("custom envelope needs matching 1-d sample arrays")
            if np.any(np.diff(t) <= 0):
                raise ValueError("custom envelope times must increase")
            if np.any(v < 0):
                raise ValueError("envelope samples must be >= 0")
            object.__setattr__(self, "samples_t", t)
            object.__setattr__(self, "samples_v", v)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full_like(t, self.peak)
        elif self.kind == "gaussian":
            out = self.peak * np.exp(-((t - self.t0) ** 2) / (2 * self.tau ** 2))
        else:
            out = np.interp(t, self.samples_t, self.samples_v, left=0.0, right=0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class PhysicalParams:
    """Cavity-QED parameters of one node (angular rates, rad/s)."""

    g0: float
    eta_x: float
    delta: float
    kappa: float
    nu_x: float
    laser: LaserEnvelope
    omega_a: float | None = None
    omega_c: float | None = None
    omega_l: float | None = None

    def __post_init__(self):
        for name in ("g0", "kappa", "nu_x"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.delta == 0:
            raise ValueError("detuning delta must be nonzero")
        if self.eta_x <= 0:
            raise ValueError("Lamb-Dicke parameter must be positive")

    @property
    def drive_rate_peak(self) -> float:
        """|g0 eta_x E_L_peak / delta|, the effective drive strength."""
        return abs(self.g0 * self.eta_x * self.laser.peak / self.delta)


@dataclass(frozen=True)
class RegimeCheck:
    name: str
    ratio: float
    threshold: float
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[RegimeCheck, ...]
    passed: bool
    gamma_peak: float
    gamma_timescale: float  # 1/gamma_peak, seconds
    override: bool = False

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "override": self.override,
            "gamma_peak_per_s": self.gamma_peak,
            "gamma_timescale_s": self.gamma_timescale,
            "checks": [
                {"name": c.name, "ratio": c.ratio, "threshold": c.threshold,
                 "passed": c.passed}
                for c in self.checks
            ],
        }


def gamma_peak(params: PhysicalParams) -> float:
    return params.drive_rate_peak ** 2 / params.kappa


def validate_regime(params: PhysicalParams,
                    ratio: float = DEFAULT_REGIME_RATIO) -> ValidationReport:
    """Check the validity inequalities; boundaries are inclusive.

    Required: eta_x <= 0.2 (Lamb-Dicke), nu_x >= ratio * kappa (rotating
    wave with respect to the trap frequency), kappa >= ratio * drive rate
    (adiabatic elimination of the cavity field), and, when the optical
    frequencies are supplied, the Raman resonance omega_c - omega_l = nu_x.
    """
    eps = 1e-12  # inclusive boundaries up to floating-point roundoff
    checks = [
        RegimeCheck("lamb_dicke (eta_x <= 0.2)",
                    params.eta_x, LAMB_DICKE_MAX,
                    params.eta_x <= LAMB_DICKE_MAX * (1 + eps)),
        RegimeCheck("trap_vs_cavity (nu_x >= R*kappa)",
                    params.nu_x / params.kappa, ratio,
                    params.nu_x >= ratio * params.kappa * (1 - eps)),
        RegimeCheck("cavity_vs_drive (kappa >= R*|g0 eta_x E_L/delta|)",
                    math.inf if params.drive_rate_peak == 0
                    else params.kappa / params.drive_rate_peak,
                    ratio,
                    params.kappa >= ratio * params.drive_rate_peak * (1 - eps)),
    ]
    if params.omega_c is not None and params.omega_l is not None:
        rel = abs((params.omega_c - params.omega_l) - params.nu_x) / params.nu_x
        checks.append(RegimeCheck("raman_resonance (omega_c - omega_l = nu_x)",
                                  rel, RESONANCE_RTOL, rel <= RESONANCE_RTOL))
    if params.omega_a is not None and params.omega_l is not None:
        rel = abs((params.omega_a - params.omega_l) - params.delta) / abs(params.delta)
        checks.append(RegimeCheck("detuning_consistency (omega_a - omega_l = delta)",
                                  rel, RESONANCE_RTOL, rel <= RESONANCE_RTOL))
    peak = gamma_peak(params)
    return ValidationReport(tuple(checks), all(c.passed for c in checks),
                            peak, math.inf if peak == 0 else 1.0 / peak)


def gamma_from_physics(params: PhysicalParams, t,
                       override: bool = False,
                       ratio: float = DEFAULT_REGIME_RATIO):
    """Gamma(t) = [g0 eta_x |E_L(t)| / delta]^2 / kappa.

    Raises ``RegimeValidationError`` naming the violated inequalities unless
    ``override`` is set.
    """
    report = validate_regime(params, ratio)
    if not report.passed and not override:
        raise RegimeValidationError(
            "parameters violate the validity regime: " + ", ".join(report.failures()),
            failures=report.failures(),
        )
    env = np.asarray(params.laser(t))
    rate = (params.g0 * params.eta_x * env / params.delta) ** 2 / params.kappa
    return rate if rate.ndim else float(rate)


@dataclass(frozen=True)
class GammaProfile:
    """Gamma(t) plus its running integral (dimensionless)."""

    gamma: Callable
    integral: Callable
    metadata: dict = field(default_factory=dict)

    def __call__(self, t):
        return self.gamma(t)


def constant_gamma(rate: float) -> GammaProfile:
    if rate < 0:
        raise ValueError("rate must be >= 0")

    def gamma(t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, rate)
        return out if out.ndim else float(out)

    def integral(t):
        t = np.asarray(t, dtype=float)
        out = rate * t
        return out if out.ndim else float(out)

    return GammaProfile(gamma, integral, {"kind": "constant", "rate": rate})


def gaussian_gamma(peak_rate: float, t0: float, tau: float) -> GammaProfile:
    """Gamma(t) = peak * exp(-(t-t0)^2 / tau^2); erf closed-form integral."""
    if peak_rate < 0 or tau <= 0:
        raise ValueError("need peak_rate >= 0 and tau > 0")
    pref = peak_rate * tau * math.sqrt(math.pi) / 2.0

    def gamma(t):
        t = np.asarray(t, dtype=float)
        out = peak_rate * np.exp(-((t - t0) ** 2) / tau ** 2)
        return out if out.ndim else float(out)

    def integral(t):
        t = np.asarray(t, dtype=float)
        val = pref * (erf((t - t0) / tau) - erf((0.0 - t0) / tau))
        return val if val.ndim else float(val)

    return GammaProfile(gamma, integral,
                        {"kind": "gaussian", "peak": peak_rate, "t0": t0, "tau": tau})


def sampled_gamma(times, rates) -> GammaProfile:
    times = np.asarray(times, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0):
        raise ValueError("Gamma samples must be >= 0")
    cum = cumulative_trapezoid(rates, times, initial=0.0)

    def gamma(t):
        out = np.interp(t, times, rates, left=0.0, right=0.0)
        return out if np.ndim(out) else float(out)

    def integral(t):
        out = np.interp(t, times, cum, left=0.0, right=float(cum[-1]))
        return out if np.ndim(out) else float(out)

    return GammaProfile(gamma, integral, {"kind": "custom"})


def profile_from_physics(params: PhysicalParams, override: bool = False,
                         ratio: float = DEFAULT_REGIME_RATIO) -> GammaProfile:
    """GammaProfile backed by the physical parameters; validation recorded
    in the profile metadata (including whether an override was used)."""
    report = validate_regime(params, ratio)
    if not report.passed and not override:
        raise RegimeValidationError(
            "parameters violate the validity regime: " + ", ".join(report.failures()),
            failures=report.failures(),
        )
    env = params.laser
    peak = gamma_peak(params)
    if env.kind == "constant":
        base = constant_gamma(peak)
    elif env.kind == "gaussian":
        # envelope ~ exp(-(t-t0)^2/(2 tau^2)) squares to width tau/sqrt(2)
        base = gaussian_gamma(peak, env.t0, env.tau / math.sqrt(2.0))
    else:
        grid = env.samples_t
        vals = (params.g0 * params.eta_x * env(grid) / params.delta) ** 2 / params.kappa
        base = sampled_gamma(grid, vals)
    meta = dict(base.metadata)
    meta["validation"] = report.to_dict()
    meta["override"] = bool(override and not report.passed)
    return GammaProfile(base.gamma, base.integral, meta)


@dataclass(frozen=True)
class TransferMap:
    """Scalar summary of one motion-light transfer."""

    efficiency: float
    direction: str  # write | read

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")
        if self.direction not in ("write", "read"):
            raise ValueError("direction must be 'write' or 'read'")


def transfer_efficiency(profile: GammaProfile, t: float) -> float:
    """eta(t) = 1 - exp(-2 * integral_0^t Gamma)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return float(1.0 - math.exp(-2.0 * float(profile.integral(t))))


# ---------------------------------------------------------------------------
# transfer maps on truncated Fock states


def _check_eta(eta: float):
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"efficiency must be in [0, 1], got {eta}")


def _transfer_pure(state: fock.FockVector, source: str, target: str,
                   eta: float) -> fock.DensityOperator:
    joint = fock.tensor_product(
        fock.FockVector(fock.BasisSpec((source,), state.basis.cutoff),
                        state.amplitudes, normalized=state.normalized,
                        trunc_budget=state.trunc_budget),
        fock.vacuum(fock.BasisSpec((target,), state.basis.cutoff)))
    # target keeps sqrt(1-eta) of itself and gains sqrt(eta) of the source
    mixed = fock.beamsplitter(joint, (target, source), 1.0 - eta)
    return fock.partial_trace(mixed, (target,))


def _transfer_density(state: fock.DensityOperator, source: str, target: str,
                      eta: float) -> fock.DensityOperator:
    cutoff = state.basis.cutoff
    dim = cutoff + 1
    proj0 = np.zeros((dim, dim), dtype=np.complex128)
    proj0[0, 0] = 1.0
    big = np.kron(proj0, state.matrix)  # pair ordering (target slow, source fast)
    gen = fock._bs_generator(cutoff, fock._bs_angle(1.0 - eta))
    big = expm_multiply(gen, big)
    big = expm_multiply(gen, big.conj().T).conj().T
    pair = fock.BasisSpec((target, source), cutoff)
    rho_full = fock.DensityOperator(pair, big, trunc_budget=state.trunc_budget)
    return fock.partial_trace(rho_full, (target,))


def apply_write_map(light_state, eta: float, motion_label: str = "motion"):
    """Write an incident field state onto a vacuum-initialized motional mode.

    The matched-mode solution of the transfer dynamics is a beamsplitter of
    transmissivity eta between the effective input-field mode and the
    motional mode; the reflected port is traced out.  eta = 1 is a perfect
    swap (pure in, pure out); eta = 0 leaves the motion in vacuum.
    """
    _check_eta(eta)
    cutoff = light_state.basis.cutoff
    target_basis = fock.BasisSpec((motion_label,), cutoff)
    if eta == 1.0 and isinstance(light_state, fock.FockVector):
        return fock.FockVector(target_basis, light_state.amplitudes,
                               normalized=light_state.normalized,
                               trunc_budget=light_state.trunc_budget)
    if eta == 0.0:
        if isinstance(light_state, fock.FockVector):
            return fock.vacuum(target_basis)
        return fock.as_density(fock.vacuum(target_basis))
    if isinstance(light_state, fock.FockVector):
        out = _transfer_pure(light_state, "in_field", motion_label, eta)
    else:
        out = _transfer_density(light_state, "in_field", motion_label, eta)
    return out


def apply_read_map(motion_state, eta: float, out_label: str = "out_field"):
    """Read a motional state onto the temporal output-field mode.

    Mirror image of the write map.  The sign the physical reflection imprints
    on the output mode operator is a fixed mode relabeling, irrelevant for
    vacuum cavity inputs; it is absorbed into the local-oscillator phase
    convention of the Bell analysis.
    """
    _check_eta(eta)
    cutoff = motion_state.basis.cutoff
    target_basis = fock.BasisSpec((out_label,), cutoff)
    if eta == 1.0 and isinstance(motion_state, fock.FockVector):
        return fock.FockVector(target_basis, motion_state.amplitudes,
                               normalized=motion_state.normalized,
                               trunc_budget=motion_state.trunc_budget)
    if eta == 0.0:
        if isinstance(motion_state, fock.FockVector):
            return fock.vacuum(target_basis)
        return fock.as_density(fock.vacuum(target_basis))
    if isinstance(motion_state, fock.FockVector):
        return _transfer_pure(motion_state, "motion_src", out_label, eta)
    return _transfer_density(motion_state, "motion_src", out_label, eta)


def prepare_epr_lossy(r: float, eta_a: float, eta_b: float,
                      basis: fock.BasisSpec | None = None,
                      cutoff: int = 30,
                      modes: tuple[str, str] = ("Ax", "Bx"),
                      tail_tol: float = 1e-8) -> fock.DensityOperator:
    """Entangled resource after finite-efficiency writing into both traps.

    The pure two-mode squeezed resource is sent through independent loss
    channels of efficiency eta_a, eta_b, each realized literally as a
    beamsplitter onto a vacuum ancilla followed by a partial trace.  With
    eta_a = eta_b = 1 this reproduces the pure resource exactly.
    """
    _check_eta(eta_a)
    _check_eta(eta_b)
    if basis is None:
        basis = fock.BasisSpec(modes, cutoff)
    modes = basis.modes
    pure = fock.epr_state(basis, (modes[0], modes[1]), r, tail_tol=tail_tol)
    if eta_a == 1.0 and eta_b == 1.0:
        return fock.as_density(pure)
    anc_a, anc_b = "_anc_a", "_anc_b"
    anc_vac = fock.vacuum(fock.BasisSpec((anc_a, anc_b), basis.cutoff))
    joint = fock.tensor_product(pure, anc_vac)
    if eta_a < 1.0:
        joint = fock.beamsplitter(joint, (modes[0], anc_a), eta_a)
    if eta_b < 1.0:
        joint = fock.beamsplitter(joint, (modes[1], anc_b), eta_b)
    rho = fock.partial_trace(joint, modes)
    return fock.DensityOperator(basis, rho.matrix, trunc_budget=pure.trunc_budget)
