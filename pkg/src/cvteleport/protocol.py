"""End-to-end teleportation runs: preparation, measurement, correction, statistics.

Mode layout: the state to be sent lives on ``Vx``, the entangled resource on
``(Ax, Bx)``.  After Alice's measurement yields (chi_+, chi_-), Bob displaces
his mode by ``gain * alpha`` with ``alpha = (chi_+ + i chi_-)/sqrt(2)`` --
the direction that undoes the conditional displacement in the conventions of
:mod:`cvteleport.bell` (see that module's docstring; an opposite LO rotation
direction would conjugate alpha here and flip the sign of the chi_- record,
with identical physics).

Finite channel efficiencies compose exactly: nothing acts between the loss
events on a given mode, so the input mode V sees one effective loss
``eta_write * eta_read`` and Alice's resource mode sees
``eta_epr_a * eta_read`` (Bob's sees ``eta_epr_b``).  Mixed states are
carried as weighted pure branches (eigendecompositions), which keeps
three-mode density matrices out of memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from . import bell, channels, fock, gaussian
from .errors import ConfigError

VICTOR, ALICE, BOB = "Vx", "Ax", "Bx"
QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InputSpec:
    """State to teleport: coherent(beta) | fock(n) | cat(beta, parity) | squeezed(s)."""

    kind: str
    beta: complex = 0j
    n: int = 0
    parity: int = +1
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("coherent", "fock", "cat", "squeezed"):
            raise ConfigError(f"unknown input kind {self.kind!r}")

    def build(self, basis: fock.BasisSpec, mode: str) -> fock.FockVector:
        if self.kind == "coherent":
            return fock.coherent(basis, mode, self.beta)
        if self.kind == "fock":
            return fock.fock_state(basis, {mode: self.n})
        if self.kind == "cat":
            return fock.cat_state(basis, mode, self.beta, self.parity)
        return fock.squeezed_state(basis, mode, self.s)

    @property
    def is_gaussian_coherent(self) -> bool:
        return self.kind == "coherent"

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("coherent", "cat"):
            out["beta"] = [self.beta.real, self.beta.imag]
        if self.kind == "cat":
            out["parity"] = "even" if self.parity == 1 else "odd"
        if self.kind == "fock":
            out["n"] = self.n
        if self.kind == "squeezed":
            out["s"] = self.s
        return out


@dataclass(frozen=True)
class ProtocolConfig:
    """Everything one run depends on; together with the seed it fixes all outputs."""

    r: float
    cutoff: int = 40
    input: InputSpec = field(default_factory=lambda: InputSpec("coherent", beta=0.5))
    gain: float = 1.0
    eta_write: float = 1.0
    eta_read: float = 1.0
    eta_epr_a: float = 1.0
    eta_epr_b: float = 1.0
    grid: bell.GridSpec | None = None
    seed: int = 0
    setting: bell.HomodyneSetting = field(default_factory=bell.HomodyneSetting)
    epr_tail_tol: float = 1e-8

    def __post_init__(self):
        if self.r < 0:
            raise ConfigError("r must be >= 0")
        if self.cutoff < 1:
            raise ConfigError("cutoff must be >= 1")
        if not 0.0 < self.gain <= 2.0:
            raise ConfigError("gain must be in (0, 2]")
        for name in ("eta_write", "eta_read", "eta_epr_a", "eta_epr_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")

    @property
    def lam(self) -> float:
        """Entanglement strength tanh(r)."""
        return math.tanh(self.r)

    @property
    def all_unit_efficiency(self) -> bool:
        return (self.eta_write == self.eta_read ==
                self.eta_epr_a == self.eta_epr_b == 1.0)

    @property
    def basis(self) -> fock.BasisSpec:
        return fock.BasisSpec((VICTOR, ALICE, BOB), self.cutoff)

    @property
    def bob_basis(self) -> fock.BasisSpec:
        return fock.BasisSpec((BOB,), self.cutoff)


def derive_seed(master_seed: int, index: int) -> list[int]:
    """Per-record seed material: default_rng([master_seed, index])."""
    return [int(master_seed), int(index)]


# ---------------------------------------------------------------------------
# state assembly


def input_state(config: ProtocolConfig) -> fock.FockVector:
    """The (pure) state to be teleported, on Bob's single-mode basis."""
    return config.input.build(config.bob_basis, BOB)


def assemble_initial_state(config: ProtocolConfig):
    """Input on V tensored with the (possibly lossy) resource on (A, B).

    All-unit efficiencies give a pure FockVector; any finite efficiency
    returns the weighted pure-branch decomposition (list of (weight,
    FockVector)) of the mixed state.
    """
    branches = assemble_initial_branches(config)
    if len(branches) == 1 and abs(branches[0][0] - 1.0) < 1e-12:
        return branches[0][1]
    return branches


def assemble_initial_branches(config: ProtocolConfig) -> list[tuple[float, fock.FockVector]]:
    cutoff = config.cutoff
    eta_v = config.eta_write * config.eta_read
    eta_a = config.eta_epr_a * config.eta_read
    eta_b = config.eta_epr_b

    v_basis = fock.BasisSpec((VICTOR,), cutoff)
    phi = config.input.build(v_basis, VICTOR)
    if eta_v < 1.0:
        rho_v = channels.apply_write_map(phi, eta_v, motion_label=VICTOR)
        v_branches = rho_v.eigen_branches()
    else:
        v_branches = [(1.0, phi)]

    ab_basis = fock.BasisSpec((ALICE, BOB), cutoff)
    if eta_a == 1.0 and eta_b == 1.0:
        ab_branches = [(1.0, fock.epr_state(ab_basis, (ALICE, BOB), config.r,
                                            tail_tol=config.epr_tail_tol))]
    else:
        rho_ab = channels.prepare_epr_lossy(config.r, eta_a, eta_b, basis=ab_basis,
                                            tail_tol=config.epr_tail_tol)
        ab_branches = rho_ab.eigen_branches()

    out = []
    for wv, v in v_branches:
        for wab, ab in ab_branches:
            out.append((wv * wab, fock.tensor_product(v, ab)))
    return out


# ---------------------------------------------------------------------------
# single runs


@dataclass(frozen=True)
class TeleportRecord:
    """One protocol run: outcome, Bob before/after correction, bookkeeping."""

    outcome: bell.MeasurementOutcome
    bob_pre: fock.FockVector | fock.DensityOperator
    bob_post: fock.FockVector | fock.DensityOperator
    fidelity_post: float
    density_weight: float
    truncation_budget: float
    route_check: dict | None = None

    def __post_init__(self):
        if not -1e-8 <= self.fidelity_post <= 1.0 + 1e-8:
            raise ValueError(f"fidelity {self.fidelity_post} outside [0, 1]")


def ideal_limit_state(phi: fock.FockVector, alpha: complex) -> fock.FockVector:
    """Exact strong-entanglement limit of the pre-correction conditional state.

    In the limit the Bell projection reduces to a pure displacement of the
    input: D(-alpha)|phi>.  (With the opposite LO rotation convention this
    would read D(-alpha*); see the bell module docstring.)
    """
    if phi.basis.n_modes != 1:
        raise ValueError("ideal_limit_state expects a single-mode input")
    if alpha == 0:
        return phi
    return fock.displace(phi, phi.basis.modes[0], -alpha)


def _project_branches(branches, outcome, setting, operator_route=False):
    bobs = []
    for w, s in branches:
        if operator_route:
            bob = bell.bell_project_operator(s, outcome,
                                             victor_mode=VICTOR, alice_mode=ALICE)
        else:
            bob = bell.bell_project_direct(s, outcome, setting,
                                           victor_mode=VICTOR, alice_mode=ALICE)
        bobs.append((w, bob))
    return bobs


def _mix_or_pure(weighted_states, basis):
    """Normalized state from weighted unnormalized pure branches."""
    total = sum(w * s.norm ** 2 for w, s in weighted_states)
    if total <= 0:
        raise ValueError("conditional state has zero weight")
    if len(weighted_states) == 1:
        unit, _ = weighted_states[0][1].renormalized()
        return unit, total
    rho = np.zeros((basis.dim, basis.dim), dtype=np.complex128)
    budget = 0.0
    for w, s in weighted_states:
        rho += w * np.outer(s.amplitudes, s.amplitudes.conj())
        budget = max(budget, s.trunc_budget)
    return fock.DensityOperator(basis, rho / total, trunc_budget=budget), total


def run_teleport(config: ProtocolConfig,
                 outcome: bell.MeasurementOutcome | tuple[float, float] | None = None,
                 cross_check: bool = False) -> TeleportRecord:
    """Full protocol at one outcome (given, or sampled with config.seed)."""
    branches = assemble_initial_branches(config)
    if outcome is None:
        grid = bell.outcome_density(branches if len(branches) > 1 else branches[0][1],
                                    config.grid, config.setting,
                                    victor_mode=VICTOR, alice_mode=ALICE)
        outcome = bell.sample_outcome(grid, config.seed)
    elif not isinstance(outcome, bell.MeasurementOutcome):
        outcome = bell.MeasurementOutcome(float(outcome[0]), float(outcome[1]))

    bobs = _project_branches(branches, outcome, config.setting)
    route_check = None
    if cross_check:
        alt = _project_branches(branches, outcome, config.setting, operator_route=True)
        overlaps, dens_err = [], []
        for (w, b1), (_, b2) in zip(bobs, alt):
            n1, n2 = b1.norm, b2.norm
            overlaps.append(abs(fock.overlap(b1, b2)) / (n1 * n2))
            dens_err.append(abs(n1 ** 2 - n2 ** 2) / max(n1 ** 2, 1e-300))
        route_check = {"min_overlap": float(min(overlaps)),
                       "max_density_rel_err": float(max(dens_err))}

    density = sum(w * b.norm ** 2 for w, b in bobs)
    outcome = replace(outcome, density_weight=float(density))
    bob_pre, _ = _mix_or_pure(bobs, config.bob_basis)

    shift = config.gain * outcome.alpha
    corrected = []
    for w, b in bobs:
        unit, _ = b.renormalized()
        weight = w * b.norm ** 2 / density
        corrected.append((weight, fock.displace(unit, BOB, shift) if shift != 0
                          else unit))
    bob_post, _ = _mix_or_pure(corrected, config.bob_basis)

    target = input_state(config)
    fid = fock.fidelity(bob_post, target)
    budget = max(max(b.trunc_budget for _, b in bobs),
                 max(b.trunc_budget for _, b in corrected))
    return TeleportRecord(outcome, bob_pre, bob_post, float(fid), float(density),
                          float(budget), route_check)


# ---------------------------------------------------------------------------
# fidelity statistics


@dataclass(frozen=True)
class FidelityReport:
    """Average teleportation fidelity and its uncertainty for one config."""

    r: float
    gain: float
    method: str  # grid-exact | monte-carlo
    mean: float
    stderr: float
    n_samples: int | None
    quantiles: dict[float, float]
    normalization_deficit: float
    truncation_budget: float


def _displacement_matrix_1d(x: float, cutoff: int, imaginary: bool) -> np.ndarray:
    """expm of x (b^dag - b) (real axis) or i x (b^dag + b) (imaginary axis)."""
    cre, ann = fock._cre_matrix(cutoff), fock._ann_matrix(cutoff)
    gen = 1j * x * (cre + ann) if imaginary else x * (cre - ann)
    return expm(gen)


def _grid_exact(config: ProtocolConfig) -> FidelityReport:
    branches = assemble_initial_branches(config)
    transformed = [(w, bell.bell_transform(s, VICTOR, ALICE)) for w, s in branches]
    if config.grid is not None:
        grid = config.grid
    else:
        mu, sig = bell._mixture_outcome_moments(transformed, VICTOR, ALICE,
                                                config.setting)
        need = float(np.max(np.abs(mu) + bell.SIGMA_COVERAGE * sig))
        grid = bell.GridSpec(max(bell.DEFAULT_HALF_WIDTH, math.ceil(need * 2) / 2.0))

    cutoff = config.cutoff
    xs = grid.axis_points
    bras_p = np.conj(bell._quadrature_matrix(xs, config.setting.theta_plus, cutoff))
    bras_m = np.conj(bell._quadrature_matrix(xs, config.setting.theta_minus, cutoff))
    target = input_state(config).amplitudes

    # target displaced by -gain*alpha per cell, via exact one-axis factors:
    # D(x + iy) = e^{-i x y} D(iy) D(x)
    gx = -config.gain * xs / math.sqrt(2.0)  # Re(-g alpha) over chi_+ axis
    gy = -config.gain * xs / math.sqrt(2.0)  # Im(-g alpha) over chi_- axis
    dx_targets = np.stack([_displacement_matrix_1d(x, cutoff, False) @ target
                           for x in gx])                      # (n, d)
    dy_mats = np.stack([_displacement_matrix_1d(y, cutoff, True) for y in gy])

    dens = np.zeros((grid.n_points, grid.n_points))
    numer = np.zeros((grid.n_points, grid.n_points))
    budget = max(s.trunc_budget for _, s in transformed)
    for w, s in transformed:
        ax_v, ax_a = s.basis.axis(VICTOR), s.basis.axis(ALICE)
        tensor = np.moveaxis(s.tensor_view(), (ax_v, ax_a), (0, 1))
        rest = tensor.reshape(cutoff + 1, cutoff + 1, -1)
        for lo in range(0, grid.n_points, 16):
            hi = min(lo + 16, grid.n_points)
            block = np.einsum('pa,vab->pvb', bras_p[lo:hi], rest, optimize=True)
            bob = np.einsum('mv,pvb->pmb', bras_m, block, optimize=True)
            dens[lo:hi] += w * np.sum(np.abs(bob) ** 2, axis=2)
            # displaced targets for this chunk: t[p, m, :] = phase * Dy_m @ (Dx_p t)
            tgt = np.einsum('mbc,pc->pmb', dy_mats, dx_targets[lo:hi],
                            optimize=True)
            phase = np.exp(-1j * np.outer(gx[lo:hi], gy))
            inner = np.einsum('pmb,pmb->pm', tgt.conj(), bob, optimize=True)
            numer[lo:hi] += w * np.abs(phase * inner) ** 2

    cell_w = np.outer(grid.axis_weights, grid.axis_weights)
    captured = float(np.sum(dens * cell_w))
    deficit = abs(1.0 - captured)
    if deficit > bell.DEFICIT_LIMIT:
        raise bell.GridTooSmallError(
            f"grid captures {captured:.4f} of outcome mass (deficit {deficit:.2e}); "
            "widen the grid")
    mean = float(np.sum(numer * cell_w))
    safe = dens > dens.max() * 1e-12
    fvals = np.where(safe, numer / np.where(safe, dens, 1.0), 0.0)
    quants = _weighted_quantiles(fvals[safe], (dens * cell_w)[safe])
    return FidelityReport(config.r, config.gain, "grid-exact", mean,
                          float(deficit), None, quants, float(deficit),
                          float(budget))


def _weighted_quantiles(values: np.ndarray, weights: np.ndarray) -> dict[float, float]:
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cum = np.cumsum(w) / np.sum(w)
    return {q: float(np.interp(q, cum, v)) for q in QUANTILE_LEVELS}


def _monte_carlo(config: ProtocolConfig, n_samples: int) -> FidelityReport:
    branches = assemble_initial_branches(config)
    state_for_grid = branches if len(branches) > 1 else branches[0][1]
    grid = bell.outcome_density(state_for_grid, config.grid, config.setting,
                                victor_mode=VICTOR, alice_mode=ALICE)
    transformed = [(w, bell.bell_transform(s, VICTOR, ALICE)) for w, s in branches]
    target = input_state(config)
    fids = np.empty(n_samples)
    budget = max(s.trunc_budget for _, s in transformed)
    for i in range(n_samples):
        outcome = bell.sample_outcome(grid, derive_seed(config.seed, i))
        bobs = [(w, bell.bell_project_direct(s, outcome, config.setting,
                                             victor_mode=VICTOR, alice_mode=ALICE,
                                             pretransformed=True))
                for w, s in transformed]
        density = sum(w * b.norm ** 2 for w, b in bobs)
        shift = config.gain * outcome.alpha
        acc = 0.0
        for w, b in bobs:
            unit, _ = b.renormalized()
            moved = fock.displace(unit, BOB, shift) if shift != 0 else unit
            acc += (w * b.norm ** 2 / density) * fock.fidelity(moved, target)
            budget = max(budget, moved.trunc_budget)
        fids[i] = acc
    mean = float(np.mean(fids))
    stderr = float(np.std(fids, ddof=1) / math.sqrt(n_samples))
    quants = {q: float(np.quantile(fids, q)) for q in QUANTILE_LEVELS}
    return FidelityReport(config.r, config.gain, "monte-carlo", mean, stderr,
                          n_samples, quants, float(grid.normalization_deficit),
                          float(budget))


def average_fidelity(config: ProtocolConfig, method: str = "grid-exact",
                     n_samples: int = 10_000) -> FidelityReport:
    """Outcome-averaged post-correction fidelity.

    ``grid-exact`` integrates density * fidelity over the outcome grid, with
    the normalization deficit folded into the error bar; ``monte-carlo``
    averages n sampled outcomes with per-record derived seeds.
    """
    if method == "grid-exact":
        return _grid_exact(config)
    if method == "monte-carlo":
        return _monte_carlo(config, n_samples)
    raise ConfigError(f"unknown averaging method {method!r}")


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepRow:
    parameter: str
    value: float
    report: FidelityReport | None
    oracle_value: float | None
    error: str | None = None


_SWEEPABLE = {"r", "gain", "eta_epr_a", "eta_epr_b", "eta_write", "eta_read"}


def _point_config(config: ProtocolConfig, parameter: str, value: float,
                  index: int) -> ProtocolConfig:
    if parameter == "eta_epr":  # sweep both EPR arms together
        return replace(config, eta_epr_a=value, eta_epr_b=value,
                       seed=_mix_seed(config.seed, index))
    return replace(config, **{parameter: value},
                   seed=_mix_seed(config.seed, index))


def _mix_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def _oracle_for(config: ProtocolConfig) -> float | None:
    if not config.input.is_gaussian_coherent:
        return None
    eta_a = config.eta_epr_a * config.eta_read
    eta_b = config.eta_epr_b
    if config.eta_write * config.eta_read < 1.0:
        return None  # oracle pipeline models resource loss only
    return gaussian.teleport_fidelity_coherent(config.r, config.gain,
                                               (eta_a, eta_b), config.input.beta)


def sweep(config: ProtocolConfig, parameter: str, values,
          method: str = "grid-exact", n_samples: int = 10_000,
          workers: int = 1) -> list[SweepRow]:
    """Independent runs over a parameter list; failures collected per point.

    Each point runs with a seed derived from (master seed, point index), so
    a sweep is reproducible regardless of execution order or worker count.
    """
    if parameter not in _SWEEPABLE and parameter != "eta_epr":
        raise ConfigError(f"cannot sweep parameter {parameter!r}")
    points = [(i, float(v)) for i, v in enumerate(values)]
    if workers > 1 and len(points) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                _sweep_point,
                [(config, parameter, v, i, method, n_samples) for i, v in points]))
        return results
    return [_sweep_point((config, parameter, v, i, method, n_samples))
            for i, v in points]


def _sweep_point(args) -> SweepRow:
    config, parameter, value, index, method, n_samples = args
    point = _point_config(config, parameter, value, index)
    try:
        report = average_fidelity(point, method, n_samples)
        return SweepRow(parameter, value, report, _oracle_for(point))
    except Exception as exc:  # collected, sweep continues
        return SweepRow(parameter, value, None, None, error=str(exc))
