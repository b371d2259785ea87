"""Truncated Fock-space states and the bosonic operator algebra.

Conventions used throughout the package:

* Each mode is truncated to the number basis ``{|0>, ..., |N>}`` with cutoff
  ``N``; a multimode state is stored as a flat complex vector in row-major
  order over the ordered mode labels (the first label varies slowest).
* Quadratures are ``X = b + b^dag`` and ``P = -i(b - b^dag)``, so the vacuum
  variance of either quadrature is 1.
* The beamsplitter between modes ``(i, j)`` is
  ``U = exp[theta (b_i^dag b_j e^{i phi} - b_i b_j^dag e^{-i phi})]`` with
  ``cos(theta) = sqrt(T)``.  With ``phi = 0`` and ``T = 1/2`` a single photon
  entering mode ``i`` splits as ``(|10> - |01>)/sqrt(2)``; the relative phase
  of the reflected arm is pi.  All cross-route comparisons are made through
  overlaps, never through raw amplitude arrays, so this choice only has to be
  consistent, not unique.
* Matrix exponentials are evaluated with scipy's scaling-and-squaring
  routines (`scipy.linalg.expm` for explicit operators,
  `scipy.sparse.linalg.expm_multiply` for their action on states).  Both are
  backward-stable at double precision; the two routes are cross-checked to
  1e-10 in the test suite.

A note on truncation accounting: the generators used here are exactly
anti-Hermitian even after truncation, so their exponentials preserve the
norm identically -- truncation damage shows up as weight piling against the
cutoff rather than as norm loss.  Constructors therefore report a
``trunc_budget``: the exactly-known weight lost to the cutoff where a closed
form exists (coherent amplitudes, EPR tails) plus the guard-band weight (top
``GUARD_LEVELS`` levels of any mode) after each exponential map.  The budget
is cumulative and propagates through protocol-level operations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply
from scipy.special import gammaln

from .errors import BasisMismatchError, CutoffTooSmallError, TruncationError

NORM_ATOL = 1e-10
TRACE_ATOL = 1e-8
GUARD_LEVELS = 5


# ---------------------------------------------------------------------------
# basis


@dataclass(frozen=True)
class BasisSpec:
    """Ordered mode labels plus a common per-mode cutoff."""

    modes: tuple[str, ...]
    cutoff: int

    def __post_init__(self):
        if isinstance(self.modes, str):
            raise TypeError("modes must be a tuple of labels, not a bare string")
        object.__setattr__(self, "modes", tuple(self.modes))
        if len(self.modes) == 0:
            raise ValueError("at least one mode is required")
        if len(set(self.modes)) != len(self.modes):
            raise ValueError(f"duplicate mode labels: {self.modes}")
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def levels(self) -> int:
        """Number of levels per mode, cutoff + 1."""
        return self.cutoff + 1

    @property
    def dim(self) -> int:
        return self.levels ** self.n_modes

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.levels,) * self.n_modes

    def axis(self, mode: str) -> int:
        try:
            return self.modes.index(mode)
        except ValueError:
            raise KeyError(f"mode {mode!r} not in basis {self.modes}") from None

    def subset(self, modes: tuple[str, ...]) -> "BasisSpec":
        for m in modes:
            self.axis(m)
        return BasisSpec(tuple(modes), self.cutoff)


def _require_same_basis(a, b):
    if a.basis != b.basis:
        raise BasisMismatchError(f"basis mismatch: {a.basis} vs {b.basis}")


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class FockVector:
    """Complex amplitude vector over a truncated multimode number basis.

    ``normalized`` marks states meant to be physical (norm within
    ``NORM_ATOL`` of 1); unnormalized conditional states carry
    ``normalized=False`` and their squared norm is meaningful (an outcome
    density).  ``trunc_budget`` is the cumulative truncation-error estimate.
    """

    basis: BasisSpec
    amplitudes: np.ndarray
    normalized: bool = True
    trunc_budget: float = 0.0
    norm_hint: float = field(default=0.0, compare=False)

    def __post_init__(self):
        amps = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if amps.ndim != 1:
            amps = amps.reshape(-1)
        if amps.size != self.basis.dim:
            raise ValueError(
                f"amplitude length {amps.size} != basis dimension {self.basis.dim}"
            )
        if not np.all(np.isfinite(amps.view(np.float64))):
            raise ValueError("amplitudes contain NaN/Inf")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        norm = float(np.linalg.norm(amps))
        object.__setattr__(self, "norm_hint", norm)
        if self.normalized and abs(norm - 1.0) > NORM_ATOL:
            raise ValueError(
                f"state labeled normalized has |norm - 1| = {abs(norm - 1.0):.3e}"
            )

    @property
    def norm(self) -> float:
        return self.norm_hint

    def tensor_view(self) -> np.ndarray:
        """Read-only view reshaped to one axis per mode."""
        return self.amplitudes.reshape(self.basis.shape)

    def renormalized(self) -> tuple["FockVector", float]:
        """Unit-norm copy plus the renormalization factor that was applied."""
        n = self.norm
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        out = FockVector(self.basis, self.amplitudes / n, normalized=True,
                         trunc_budget=self.trunc_budget)
        return out, 1.0 / n

    def with_budget(self, extra: float) -> "FockVector":
        return FockVector(self.basis, self.amplitudes, normalized=self.normalized,
                          trunc_budget=self.trunc_budget + extra)


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian positive-semidefinite matrix over a truncated number basis."""

    basis: BasisSpec
    matrix: np.ndarray
    trunc_budget: float = 0.0

    def __post_init__(self):
        mat = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        if mat.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(
                f"matrix shape {mat.shape} != ({self.basis.dim}, {self.basis.dim})"
            )
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    def validate(self, normalized: bool = True, check_psd: bool = True):
        herm = np.max(np.abs(self.matrix - self.matrix.conj().T))
        if herm > NORM_ATOL:
            raise ValueError(f"density operator not Hermitian: deviation {herm:.3e}")
        if normalized:
            tr = self.trace
            if abs(tr - 1.0) > TRACE_ATOL:
                raise ValueError(f"trace deviates from 1 by {abs(tr - 1.0):.3e}")
        if check_psd:
            evals = np.linalg.eigvalsh(self.matrix)
            if evals.min() < -TRACE_ATOL:
                raise ValueError(f"negative eigenvalue {evals.min():.3e}")
        return self

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()

    def eigen_branches(self, tol: float = 1e-12) -> list[tuple[float, FockVector]]:
        """Decompose into weighted pure branches, dropping weights below tol."""
        evals, evecs = np.linalg.eigh(self.matrix)
        branches = []
        for w, v in zip(evals[::-1], evecs.T[::-1]):
            if w <= tol:
                break
            branches.append((float(w), FockVector(self.basis, v / np.linalg.norm(v),
                                                  trunc_budget=self.trunc_budget)))
        return branches


def as_density(state: FockVector | DensityOperator) -> DensityOperator:
    if isinstance(state, DensityOperator):
        return state
    amps = state.amplitudes
    return DensityOperator(state.basis, np.outer(amps, amps.conj()),
                           trunc_budget=state.trunc_budget)


# ---------------------------------------------------------------------------
# state constructors


def vacuum(basis: BasisSpec) -> FockVector:
    """|0...0> on the given basis."""
    amps = np.zeros(basis.dim, dtype=np.complex128)
    amps[0] = 1.0
    return FockVector(basis, amps)


def fock_state(basis: BasisSpec, occupations: dict[str, int]) -> FockVector:
    """Number state with the given per-mode occupations (unlisted modes at 0)."""
    idx = 0
    for mode in basis.modes:
        n = occupations.get(mode, 0)
        if not 0 <= n <= basis.cutoff:
            raise ValueError(f"occupation {n} for mode {mode!r} outside [0, {basis.cutoff}]")
        idx = idx * basis.levels + n
    amps = np.zeros(basis.dim, dtype=np.complex128)
    amps[idx] = 1.0
    return FockVector(basis, amps)


def _coherent_amplitudes(beta: complex, cutoff: int) -> np.ndarray:
    n = np.arange(cutoff + 1)
    log_fact = gammaln(n + 1.0)
    if beta == 0:
        amps = np.zeros(cutoff + 1, dtype=np.complex128)
        amps[0] = 1.0
        return amps
    # e^{-|b|^2/2} b^n / sqrt(n!) evaluated in log space for stability
    logmag = -abs(beta) ** 2 / 2 + n * math.log(abs(beta)) - 0.5 * log_fact
    phase = np.exp(1j * n * np.angle(beta))
    return np.exp(logmag) * phase


def coherent(basis: BasisSpec, mode: str, beta: complex) -> FockVector:
    """Coherent state |beta> on one mode, vacuum elsewhere.

    The amplitude series is truncated at the cutoff and renormalized; the
    exactly-known weight lost to the cutoff is recorded in ``trunc_budget``.
    """
    if not np.isfinite(beta):
        raise ValueError(f"non-finite coherent amplitude {beta!r}")
    if abs(beta) ** 2 > basis.cutoff / 4:
        warnings.warn(
            f"|beta|^2 = {abs(beta)**2:.3g} is not small against cutoff {basis.cutoff}; "
            "truncation error may be significant",
            stacklevel=2,
        )
    col = _coherent_amplitudes(beta, basis.cutoff)
    kept = float(np.sum(np.abs(col) ** 2))
    lost = max(0.0, 1.0 - kept)
    col = col / math.sqrt(kept)
    state = _embed_single_mode(basis, mode, col)
    return state.with_budget(lost)


def coherent_truncation_loss(beta: complex, cutoff: int) -> float:
    """Weight of |beta> above the cutoff: 1 - sum_{n<=N} e^{-|b|^2}|b|^{2n}/n!."""
    kept = float(np.sum(np.abs(_coherent_amplitudes(beta, cutoff)) ** 2))
    return max(0.0, 1.0 - kept)


def cat_state(basis: BasisSpec, mode: str, beta: complex, parity: int = +1) -> FockVector:
    """Even (+1) or odd (-1) superposition of |beta> and |-beta>."""
    if parity not in (+1, -1):
        raise ValueError("parity must be +1 or -1")
    plus = _coherent_amplitudes(beta, basis.cutoff)
    minus = _coherent_amplitudes(-beta, basis.cutoff)
    col = plus + parity * minus
    norm = np.linalg.norm(col)
    if norm < 1e-12:
        raise ValueError("cat superposition vanishes (beta too small for odd parity?)")
    col = col / norm
    state = _embed_single_mode(basis, mode, col)
    return state.with_budget(coherent_truncation_loss(beta, basis.cutoff))


def squeezed_state(basis: BasisSpec, mode: str, s: float) -> FockVector:
    """Single-mode squeezed vacuum exp[(s/2)(b^2 - b^dag^2)]|0>."""
    gen = 0.5 * s * (_ann_matrix(basis.cutoff) @ _ann_matrix(basis.cutoff)
                     - _cre_matrix(basis.cutoff) @ _cre_matrix(basis.cutoff))
    col = expm(gen)[:, 0]
    state = _embed_single_mode(basis, mode, col / np.linalg.norm(col))
    return state.with_budget(_guard_weight_column(col))


def _embed_single_mode(basis: BasisSpec, mode: str, column: np.ndarray) -> FockVector:
    axis = basis.axis(mode)
    tensor = np.zeros(basis.shape, dtype=np.complex128)
    sl = [0] * basis.n_modes
    sl[axis] = slice(None)
    tensor[tuple(sl)] = column
    return FockVector(basis, tensor.reshape(-1))


def epr_tail_weight(r: float, cutoff: int) -> float:
    """Weight of the two-mode squeezed vacuum above the cutoff: tanh(r)^(2(N+1))."""
    lam = math.tanh(r)
    return lam ** (2 * (cutoff + 1))


def required_cutoff_for_epr(r: float, tail_tol: float = 1e-8) -> int:
    lam2 = math.tanh(r) ** 2
    if lam2 == 0.0:
        return 1
    return max(1, math.ceil(math.log(tail_tol) / math.log(lam2)) - 1)


def epr_state(basis: BasisSpec, modes: tuple[str, str], r: float,
              tail_tol: float = 1e-8) -> FockVector:
    """Two-mode squeezed vacuum with amplitudes (-tanh r)^m / cosh(r) on |m,m>.

    The closed-form amplitudes are returned as-is (not renormalized); the
    weight beyond the cutoff is ``tanh(r)^{2(N+1)}`` and must not exceed
    ``tail_tol``.  The state is flagged normalized only when the tail is
    below ``NORM_ATOL``.
    """
    if r < 0:
        raise ValueError(f"squeezing parameter must be >= 0, got {r}")
    if len(modes) != 2 or modes[0] == modes[1]:
        raise ValueError("epr_state needs two distinct modes")
    tail = epr_tail_weight(r, basis.cutoff)
    if tail > tail_tol:
        need = required_cutoff_for_epr(r, tail_tol)
        raise CutoffTooSmallError(
            f"EPR tail weight {tail:.3e} exceeds {tail_tol:.1e} at cutoff "
            f"{basis.cutoff}; need cutoff >= {need}",
            required_cutoff=need,
        )
    lam = math.tanh(r)
    m = np.arange(basis.levels)
    coeffs = (-lam) ** m / math.cosh(r)
    ax_a, ax_b = basis.axis(modes[0]), basis.axis(modes[1])
    tensor = np.zeros(basis.shape, dtype=np.complex128)
    sl = [0] * basis.n_modes
    for k in range(basis.levels):
        sl[ax_a] = k
        sl[ax_b] = k
        tensor[tuple(sl)] = coeffs[k]
    flat = tensor.reshape(-1)
    return FockVector(basis, flat, normalized=(tail <= NORM_ATOL),
                      trunc_budget=tail)


def tensor_product(a: FockVector, b: FockVector) -> FockVector:
    """Combine two states on disjoint mode sets into one product state."""
    if a.basis.cutoff != b.basis.cutoff:
        raise BasisMismatchError("tensor product requires equal cutoffs")
    if set(a.basis.modes) & set(b.basis.modes):
        raise BasisMismatchError("tensor product requires disjoint mode labels")
    basis = BasisSpec(a.basis.modes + b.basis.modes, a.basis.cutoff)
    amps = np.kron(a.amplitudes, b.amplitudes)
    return FockVector(basis, amps, normalized=a.normalized and b.normalized,
                      trunc_budget=a.trunc_budget + b.trunc_budget)


# ---------------------------------------------------------------------------
# single-mode operator matrices


def _ann_matrix(cutoff: int) -> np.ndarray:
    m = np.zeros((cutoff + 1, cutoff + 1), dtype=np.complex128)
    n = np.arange(1, cutoff + 1)
    m[n - 1, n] = np.sqrt(n)
    return m


def _cre_matrix(cutoff: int) -> np.ndarray:
    return _ann_matrix(cutoff).conj().T


def _number_matrix(cutoff: int) -> np.ndarray:
    return np.diag(np.arange(cutoff + 1).astype(np.complex128))


@dataclass(frozen=True)
class ModeOperator:
    """Dense operator on a (small) truncated basis, tagged by its role."""

    basis: BasisSpec
    matrix: np.ndarray
    kind: str  # annihilation | creation | number | identity | displacement | squeeze | beamsplitter

    UNITARY_KINDS = ("displacement", "squeeze", "beamsplitter", "identity")

    def __post_init__(self):
        mat = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        if mat.shape != (self.basis.dim, self.basis.dim):
            raise ValueError("operator shape does not match basis dimension")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def is_unitary_tagged(self) -> bool:
        return self.kind in self.UNITARY_KINDS

    def unitarity_defect(self) -> float:
        u = self.matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(self.basis.dim))))


def _embed_matrix(basis: BasisSpec, mode: str, small: np.ndarray) -> np.ndarray:
    mats = [small if m == mode else np.eye(basis.levels, dtype=np.complex128)
            for m in basis.modes]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def annihilation_op(basis: BasisSpec, mode: str) -> ModeOperator:
    return ModeOperator(basis, _embed_matrix(basis, mode, _ann_matrix(basis.cutoff)),
                        "annihilation")


def creation_op(basis: BasisSpec, mode: str) -> ModeOperator:
    return ModeOperator(basis, _embed_matrix(basis, mode, _cre_matrix(basis.cutoff)),
                        "creation")


def number_op(basis: BasisSpec, mode: str) -> ModeOperator:
    return ModeOperator(basis, _embed_matrix(basis, mode, _number_matrix(basis.cutoff)),
                        "number")


def identity_op(basis: BasisSpec) -> ModeOperator:
    return ModeOperator(basis, np.eye(basis.dim, dtype=np.complex128), "identity")


def displacement_op(basis: BasisSpec, mode: str, beta: complex) -> ModeOperator:
    """exp(beta b^dag - beta* b) on one mode, dense scaling-and-squaring."""
    if not np.isfinite(beta):
        raise ValueError(f"non-finite displacement {beta!r}")
    gen = beta * _cre_matrix(basis.cutoff) - np.conj(beta) * _ann_matrix(basis.cutoff)
    return ModeOperator(basis, _embed_matrix(basis, mode, expm(gen)), "displacement")


def two_mode_squeeze_op(basis: BasisSpec, modes: tuple[str, str], r: float) -> ModeOperator:
    """exp[r(b_a b_b - b_a^dag b_b^dag)] as a dense operator (small bases only)."""
    if basis.n_modes != 2 or tuple(modes) != basis.modes:
        raise BasisMismatchError("dense squeeze operator expects a 2-mode basis in order")
    gen = _tms_generator(basis.cutoff, r).toarray()
    return ModeOperator(basis, expm(gen), "squeeze")


def beamsplitter_op(basis: BasisSpec, modes: tuple[str, str], transmissivity: float,
                    phase: float = 0.0) -> ModeOperator:
    """Dense beamsplitter unitary (small bases only); route 1 of two."""
    if basis.n_modes != 2 or tuple(modes) != basis.modes:
        raise BasisMismatchError("dense beamsplitter expects a 2-mode basis in order")
    theta = _bs_angle(transmissivity)
    gen = _bs_generator(basis.cutoff, theta, phase).toarray()
    return ModeOperator(basis, expm(gen), "beamsplitter")


def beamsplitter_op_subspace(basis: BasisSpec, modes: tuple[str, str],
                             transmissivity: float, phase: float = 0.0) -> ModeOperator:
    """Beamsplitter built per total-photon subspace from the binomial closed
    form; route 2, independent of the matrix exponential.

    U|k, l> = (cos b_i^dag - e^{-i phi} sin b_j^dag)^k
              (cos b_j^dag + e^{i phi} sin b_i^dag)^l |00> / sqrt(k! l!)
    expanded with binomial coefficients.
    """
    if basis.n_modes != 2 or tuple(modes) != basis.modes:
        raise BasisMismatchError("subspace beamsplitter expects a 2-mode basis in order")
    n_levels = basis.levels
    theta = _bs_angle(transmissivity)
    c, s = math.cos(theta), math.sin(theta)
    eip, eim = np.exp(1j * phase), np.exp(-1j * phase)
    dim = basis.dim
    u = np.zeros((dim, dim), dtype=np.complex128)
    logf = gammaln(np.arange(2 * n_levels) + 1.0)

    def comb(n, k):
        return math.exp(logf[n] - logf[k] - logf[n - k])

    for k in range(n_levels):
        for l in range(n_levels):
            col = k * n_levels + l
            # term (p, q): from (cos a^dag)^p (-e^{-iphi} sin b^dag)^{k-p}
            #              (cos b^dag)^q (e^{iphi} sin a^dag)^{l-q}
            for p in range(k + 1):
                for q in range(l + 1):
                    na = p + (l - q)
                    nb = q + (k - p)
                    if na >= n_levels or nb >= n_levels:
                        continue  # amplitude truncated away; subspace k+l beyond cutoff
                    amp = (comb(k, p) * comb(l, q)
                           * (c ** (p + q)) * (s ** ((k - p) + (l - q)))
                           * ((-1) ** (k - p)) * (eim ** (k - p)) * (eip ** (l - q)))
                    # operator monomials contribute sqrt(na! nb!) / sqrt(k! l!)
                    amp *= math.exp(0.5 * (logf[na] + logf[nb] - logf[k] - logf[l]))
                    u[na * n_levels + nb, col] += amp
    return ModeOperator(basis, u, "beamsplitter")


# ---------------------------------------------------------------------------
# sparse two-mode generators and their action on states


def _bs_angle(transmissivity: float) -> float:
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"transmissivity must be in [0, 1], got {transmissivity}")
    return math.acos(math.sqrt(transmissivity))


def _bs_generator(cutoff: int, theta: float, phase: float = 0.0) -> sparse.csr_matrix:
    """theta (b_i^dag b_j e^{i phi} - b_i b_j^dag e^{-i phi}) on the (i, j) pair."""
    d = cutoff + 1
    rows, cols, vals = [], [], []
    eip = np.exp(1j * phase)
    for ni in range(d):
        for nj in range(d):
            k = ni * d + nj
            if nj >= 1 and ni + 1 < d:  # b_i^dag b_j
                rows.append((ni + 1) * d + (nj - 1))
                cols.append(k)
                vals.append(theta * eip * math.sqrt(nj * (ni + 1)))
            if ni >= 1 and nj + 1 < d:  # -b_i b_j^dag
                rows.append((ni - 1) * d + (nj + 1))
                cols.append(k)
                vals.append(-theta * np.conj(eip) * math.sqrt(ni * (nj + 1)))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(d * d, d * d))


def _tms_generator(cutoff: int, r: float) -> sparse.csr_matrix:
    """r (b_a b_b - b_a^dag b_b^dag) on the (a, b) pair."""
    d = cutoff + 1
    rows, cols, vals = [], [], []
    for na in range(d):
        for nb in range(d):
            k = na * d + nb
            if na >= 1 and nb >= 1:
                rows.append((na - 1) * d + (nb - 1))
                cols.append(k)
                vals.append(r * math.sqrt(na * nb))
            if na + 1 < d and nb + 1 < d:
                rows.append((na + 1) * d + (nb + 1))
                cols.append(k)
                vals.append(-r * math.sqrt((na + 1) * (nb + 1)))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(d * d, d * d))


def _apply_pair_generator(state: FockVector, gen: sparse.csr_matrix,
                          modes: tuple[str, str]) -> FockVector:
    """Apply exp(gen) on the two chosen modes of a multimode pure state."""
    basis = state.basis
    ax = (basis.axis(modes[0]), basis.axis(modes[1]))
    tensor = state.tensor_view()
    moved = np.moveaxis(tensor, ax, (0, 1))
    pair_shape = moved.shape
    mat = moved.reshape(basis.levels ** 2, -1)
    out = expm_multiply(gen, np.ascontiguousarray(mat))
    out = np.moveaxis(out.reshape(pair_shape), (0, 1), ax)
    return FockVector(basis, out.reshape(-1), normalized=state.normalized,
                      trunc_budget=state.trunc_budget)


def apply_operator(state: FockVector, op: ModeOperator,
                   modes: tuple[str, ...] | None = None) -> FockVector:
    """Apply a dense operator living on ``op.basis`` to the matching modes."""
    basis = state.basis
    if modes is None:
        modes = op.basis.modes
    if op.basis.cutoff != basis.cutoff or len(modes) != op.basis.n_modes:
        raise BasisMismatchError("operator basis incompatible with state")
    ax = tuple(basis.axis(m) for m in modes)
    tensor = state.tensor_view()
    moved = np.moveaxis(tensor, ax, range(len(ax)))
    shape = moved.shape
    mat = moved.reshape(op.basis.dim, -1)
    out = op.matrix @ mat
    out = np.moveaxis(out.reshape(shape), range(len(ax)), ax)
    return FockVector(basis, out.reshape(-1), normalized=False,
                      trunc_budget=state.trunc_budget)


def guard_band_weight(state: FockVector, band: int = GUARD_LEVELS) -> float:
    """Probability weight with any mode occupation in the top ``band`` levels."""
    tensor = np.abs(state.tensor_view()) ** 2
    lo = max(0, state.basis.levels - band)
    total = 0.0
    inner = tensor
    for _ in range(state.basis.n_modes):
        inner = inner[:lo]
        inner = np.moveaxis(inner, 0, -1)
    total = tensor.sum() - inner.sum()
    return float(total)


def _guard_weight_column(col: np.ndarray, band: int = GUARD_LEVELS) -> float:
    return float(np.sum(np.abs(col[len(col) - band:]) ** 2))


def displace(state: FockVector, mode: str, beta: complex,
             loss_tol: float = 1e-3) -> FockVector:
    """Displace one mode by beta via the matrix exponential of beta b^dag - beta* b.

    The truncated generator is exactly anti-Hermitian so the norm is
    preserved; incipient truncation error is measured by the guard-band
    weight of the output and raises ``TruncationError`` above ``loss_tol``.
    The output is renormalized (factor ~1) and the guard weight added to the
    truncation budget.
    """
    if not np.isfinite(beta):
        raise ValueError(f"non-finite displacement {beta!r}")
    if beta == 0:
        return state
    small = expm(beta * _cre_matrix(state.basis.cutoff)
                 - np.conj(beta) * _ann_matrix(state.basis.cutoff))
    out = _apply_one_mode_matrix(state, small, mode)
    guard = guard_band_weight(out)
    if guard > loss_tol:
        raise TruncationError(
            f"displacement pushed weight {guard:.3e} into the top {GUARD_LEVELS} "
            f"levels (tolerance {loss_tol:.1e}); raise the cutoff"
        )
    unit, _factor = out.renormalized()
    return unit.with_budget(guard)


def _apply_one_mode_matrix(state: FockVector, small: np.ndarray, mode: str) -> FockVector:
    basis = state.basis
    ax = basis.axis(mode)
    tensor = state.tensor_view()
    out = np.moveaxis(np.tensordot(small, tensor, axes=([1], [ax])), 0, ax)
    return FockVector(basis, out.reshape(-1), normalized=False,
                      trunc_budget=state.trunc_budget)


def two_mode_squeeze(state: FockVector, modes: tuple[str, str], r: float,
                     loss_tol: float = 1e-6) -> FockVector:
    """Apply exp[r(b_a b_b - b_a^dag b_b^dag)] to a pure state.

    The truncated generator is exactly anti-Hermitian, so the map is exactly
    unitary and invertible -- truncation damage appears as weight piled
    against the cutoff, not as norm loss.  Norm loss beyond ``loss_tol``
    therefore signals a numerical failure and raises ``TruncationError``;
    the guard-band weight (the honest truncation indicator) is added to the
    state's ``trunc_budget``.
    """
    if r == 0.0:
        return state
    out = _apply_pair_generator(state, _tms_generator(state.basis.cutoff, r), modes)
    loss = abs(1.0 - out.norm ** 2)
    if loss > loss_tol:
        raise TruncationError(
            f"two-mode squeeze lost norm {loss:.3e} (tolerance {loss_tol:.1e}); "
            "the exponential action failed to converge"
        )
    guard = guard_band_weight(out)
    unit, _ = out.renormalized()
    return unit.with_budget(guard)


def beamsplitter(state: FockVector, modes: tuple[str, str], transmissivity: float,
                 phase: float = 0.0) -> FockVector:
    """Mix two modes with the documented beamsplitter convention.

    Total photon number is conserved exactly (the generator commutes with
    it), so no truncation guard is needed.
    """
    theta = _bs_angle(transmissivity)
    if theta == 0.0:
        return state
    out = _apply_pair_generator(state, _bs_generator(state.basis.cutoff, theta, phase),
                                modes)
    unit, _ = out.renormalized()
    return unit.with_budget(0.0)


# ---------------------------------------------------------------------------
# overlaps, fidelity, reductions, moments


def overlap(a: FockVector, b: FockVector) -> complex:
    """<a|b> with matching bases."""
    _require_same_basis(a, b)
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def fidelity(state: FockVector | DensityOperator, target: FockVector) -> float:
    """<target|rho|target> against a pure, normalized target."""
    if not target.normalized:
        raise ValueError("fidelity target must be normalized")
    _require_same_basis(state, target)
    if isinstance(state, FockVector):
        val = abs(np.vdot(target.amplitudes, state.amplitudes)) ** 2
    else:
        val = float(np.real(target.amplitudes.conj()
                            @ state.matrix @ target.amplitudes))
    if val > 1.0 + 1e-8:
        raise ValueError(f"fidelity {val} exceeds 1 beyond tolerance")
    return float(min(val, 1.0))


def partial_trace(state: FockVector | DensityOperator,
                  keep_modes: tuple[str, ...]) -> DensityOperator:
    """Reduced density operator over ``keep_modes`` (in the order given)."""
    basis = state.basis
    keep_modes = tuple(keep_modes)
    if not keep_modes:
        raise ValueError("keep_modes must be nonempty")
    keep_ax = tuple(basis.axis(m) for m in keep_modes)
    drop_ax = tuple(i for i in range(basis.n_modes) if i not in keep_ax)
    d_keep = basis.levels ** len(keep_ax)
    sub = basis.subset(keep_modes)
    if isinstance(state, FockVector):
        tensor = state.tensor_view()
        moved = np.transpose(tensor, keep_ax + drop_ax).reshape(d_keep, -1)
        rho = moved @ moved.conj().T
        budget = state.trunc_budget
    else:
        m = basis.n_modes
        tensor = state.matrix.reshape(basis.shape * 2)
        perm = keep_ax + tuple(a + m for a in keep_ax) + drop_ax + tuple(a + m for a in drop_ax)
        moved = np.transpose(tensor, perm)
        d_drop = basis.levels ** len(drop_ax)
        moved = moved.reshape(d_keep, d_keep, d_drop, d_drop)
        rho = np.einsum('ijkk->ij', moved)
        budget = state.trunc_budget
    return DensityOperator(sub, rho, trunc_budget=budget)


def trace_distance(a: DensityOperator, b: DensityOperator) -> float:
    _require_same_basis(a, b)
    evals = np.linalg.eigvalsh(a.matrix - b.matrix)
    return float(0.5 * np.sum(np.abs(evals)))


def number_expectation(state: FockVector | DensityOperator, mode: str) -> float:
    basis = state.basis
    n_diag = np.arange(basis.levels)
    ax = basis.axis(mode)
    if isinstance(state, FockVector):
        probs = np.abs(state.tensor_view()) ** 2
    else:
        probs = np.real(np.diag(state.matrix)).reshape(basis.shape)
    marg = probs.sum(axis=tuple(i for i in range(basis.n_modes) if i != ax))
    return float(np.dot(n_diag, marg))


def _mode_annihilate(tensor: np.ndarray, axis: int) -> np.ndarray:
    """Apply b on one axis of an amplitude tensor."""
    out = np.zeros_like(tensor)
    n = tensor.shape[axis]
    src = [slice(None)] * tensor.ndim
    dst = [slice(None)] * tensor.ndim
    src[axis] = slice(1, n)
    dst[axis] = slice(0, n - 1)
    scale = np.sqrt(np.arange(1, n))
    shape = [1] * tensor.ndim
    shape[axis] = n - 1
    out[tuple(dst)] = tensor[tuple(src)] * scale.reshape(shape)
    return out


def quadrature_moments(state, modes: tuple[str, ...] | None = None
                       ) -> tuple[np.ndarray, np.ndarray]:
    """First and (symmetrized) second quadrature moments of selected modes.

    Returns ``mean`` of shape (2k,) ordered (X_1, P_1, ..., X_k, P_k) and the
    symmetric covariance matrix, in the vacuum-variance-1 convention.
    Accepts a FockVector, a DensityOperator, or a list of (weight, FockVector)
    branches whose weights sum to 1.
    """
    branches = _as_branches(state)
    basis = branches[0][1].basis
    if modes is None:
        modes = basis.modes
    axes = [basis.axis(m) for m in modes]
    k = len(axes)
    first = np.zeros(k, dtype=np.complex128)          # <b_j>
    second_bb = np.zeros((k, k), dtype=np.complex128)  # <b_j b_l>
    second_bdb = np.zeros((k, k), dtype=np.complex128)  # <b_j^dag b_l>
    for w, s in branches:
        t = s.tensor_view()
        lowered = [_mode_annihilate(t, ax) for ax in axes]
        for j in range(k):
            first[j] += w * np.vdot(t, lowered[j])
            for l in range(k):
                second_bdb[j, l] += w * np.vdot(lowered[j], lowered[l])
                second_bb[j, l] += w * np.vdot(t, _mode_annihilate(lowered[l], axes[j]))
    mean = np.zeros(2 * k)
    for j in range(k):
        mean[2 * j] = 2 * first[j].real
        mean[2 * j + 1] = 2 * first[j].imag
    sec = np.zeros((2 * k, 2 * k))
    for j in range(k):
        for l in range(k):
            bb = second_bb[j, l]
            bdb = second_bdb[j, l]
            delta = 1.0 if j == l else 0.0
            sec[2 * j, 2 * l] = 2 * bb.real + 2 * bdb.real + delta
            sec[2 * j + 1, 2 * l + 1] = -2 * bb.real + 2 * bdb.real + delta
            if j == l:
                sec[2 * j, 2 * l + 1] = sec[2 * j + 1, 2 * l] = 2 * bb.imag
            else:
                sec[2 * j, 2 * l + 1] = 2 * bb.imag + 2 * bdb.imag
                sec[2 * j + 1, 2 * l] = 2 * bb.imag - 2 * bdb.imag
    cov = sec - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def _as_branches(state) -> list[tuple[float, FockVector]]:
    if isinstance(state, FockVector):
        return [(1.0, state)]
    if isinstance(state, DensityOperator):
        return state.eigen_branches()
    return list(state)
