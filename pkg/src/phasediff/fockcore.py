"""Truncated Fock-space representation of one- and two-mode bosonic states.

Two-mode basis vectors |n_a, n_b> are stored row-major: index = n_a * (nmax + 1) + n_b.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial, sqrt

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

BASIS_TAG = "fock-pair-row-major"

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = -1e-10
RENORM_DRIFT = 1e-13
RENORM_FAIL = 1e-8


class CutoffError(ValueError):
    """Raised when a probe needs more photons per mode than the cutoff keeps."""


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class FockCutoff:
    nmax: int

    def __post_init__(self):
        if int(self.nmax) != self.nmax or self.nmax < 1:
            raise ValueError(f"nmax must be an integer >= 1, got {self.nmax!r}")

    @property
    def single_dim(self) -> int:
        return self.nmax + 1

    @property
    def dim(self) -> int:
        return (self.nmax + 1) ** 2

    def index(self, n_a: int, n_b: int) -> int:
        return n_a * (self.nmax + 1) + n_b

    def require(self, nmax_needed: int, what: str = "probe") -> None:
        if nmax_needed > self.nmax:
            raise CutoffError(f"{what} needs nmax >= {nmax_needed}, cutoff has nmax = {self.nmax}")


@lru_cache(maxsize=None)
def photon_numbers(nmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-index photon numbers (n_a, n_b) of the two-mode basis."""
    n = np.arange(nmax + 1)
    na = np.repeat(n, nmax + 1)
    nb = np.tile(n, nmax + 1)
    na.setflags(write=False)
    nb.setflags(write=False)
    return na, nb


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def hermitize(matrix: np.ndarray) -> np.ndarray:
    """Symmetrize and renormalize a density matrix that drifted numerically.

    Drift below ``RENORM_DRIFT`` is left alone, drift above ``RENORM_FAIL``
    is an error rather than something to paper over.
    """
    m = np.asarray(matrix, dtype=complex)
    herm_dev = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if herm_dev > RENORM_FAIL:
        raise InvalidStateError(f"matrix is not Hermitian (deviation {herm_dev:.3e})")
    m = 0.5 * (m + m.conj().T)
    tr = np.trace(m).real
    if abs(tr - 1.0) > RENORM_FAIL:
        raise InvalidStateError(f"trace drifted to {tr!r}")
    if abs(tr - 1.0) > RENORM_DRIFT:
        m = m / tr
    return m


@dataclass(frozen=True)
class TwoModeState:
    """Density operator of a two-mode state on a truncated Fock grid."""

    cutoff: FockCutoff
    matrix: np.ndarray
    label: str = ""
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        m = _frozen(self.matrix)
        object.__setattr__(self, "matrix", m)
        d = self.cutoff.dim
        if m.shape != (d, d):
            raise InvalidStateError(f"matrix shape {m.shape} does not match cutoff dimension {d}")
        if self.check:
            self.validate()

    def validate(self) -> None:
        m = self.matrix
        herm_dev = np.max(np.abs(m - m.conj().T))
        if herm_dev > HERMITIAN_TOL:
            raise InvalidStateError(f"state not Hermitian: max deviation {herm_dev:.3e}")
        tr = np.trace(m)
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"state trace {tr} differs from 1")
        lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        if lam[0] < PSD_TOL:
            raise InvalidStateError(f"state not positive semidefinite: eigenvalue {lam[0]:.3e}")

    @classmethod
    def from_ket(cls, cutoff: FockCutoff, ket: np.ndarray, label: str = "") -> TwoModeState:
        ket = np.asarray(ket, dtype=complex)
        ket = ket / np.linalg.norm(ket)
        return cls(cutoff, np.outer(ket, ket.conj()), label)

    @classmethod
    def fock(cls, cutoff: FockCutoff, n_a: int, n_b: int, label: str = "") -> TwoModeState:
        cutoff.require(max(n_a, n_b), f"|{n_a},{n_b}>")
        ket = np.zeros(cutoff.dim, dtype=complex)
        ket[cutoff.index(n_a, n_b)] = 1.0
        return cls.from_ket(cutoff, ket, label or f"|{n_a},{n_b}>")

    @property
    def dim(self) -> int:
        return self.cutoff.dim

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def mean_photons(self) -> float:
        na, nb = photon_numbers(self.cutoff.nmax)
        return float(np.real(np.diag(self.matrix) @ (na + nb)))

    def probabilities(self) -> np.ndarray:
        """Fock-pair populations reshaped to (n_a, n_b)."""
        n = self.cutoff.single_dim
        return np.real(np.diag(self.matrix)).reshape(n, n)

    def support(self, tol: float = 1e-12) -> np.ndarray:
        """Basis indices carrying population above ``tol``."""
        return np.flatnonzero(np.real(np.diag(self.matrix)) > tol)

    def block(self, indices) -> np.ndarray:
        idx = np.asarray(indices)
        return np.array(self.matrix[np.ix_(idx, idx)])

    def with_matrix(self, matrix: np.ndarray, label: str | None = None) -> TwoModeState:
        return TwoModeState(self.cutoff, hermitize(matrix), self.label if label is None else label)

    # serialization

    def to_dict(self) -> dict:
        m = self.matrix
        return {
            "cutoff": self.cutoff.nmax,
            "label": self.label,
            "basis": BASIS_TAG,
            "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in m],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> TwoModeState:
        if doc.get("basis", BASIS_TAG) != BASIS_TAG:
            raise ValueError(f"unsupported basis ordering {doc['basis']!r}")
        m = np.array([[complex(re, im) for re, im in row] for row in doc["matrix"]])
        return cls(FockCutoff(int(doc["cutoff"])), m, doc.get("label", ""))

    @classmethod
    def from_json(cls, text: str) -> TwoModeState:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class QubitProbe:
    """Effective two-level probe on span{|N,0>, |0,N>} after phase shift and diffusion."""

    theta: float
    phi: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")

    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.theta / 2), np.sin(self.theta / 2)
        coh = c * s * np.exp(-1j * self.phi - self.delta**2)
        return np.array([[c * c, coh], [np.conj(coh), s * s]], dtype=complex)


@dataclass(frozen=True)
class ModeOperator:
    cutoff: FockCutoff
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix))

    @property
    def dag(self) -> ModeOperator:
        return ModeOperator(self.cutoff, self.matrix.conj().T)


def annihilation(cutoff: FockCutoff) -> ModeOperator:
    n = cutoff.single_dim
    return ModeOperator(cutoff, np.diag(np.sqrt(np.arange(1, n)), k=1))


def two_mode_operators(cutoff: FockCutoff) -> tuple[np.ndarray, np.ndarray]:
    """Annihilation operators a (mode a) and b (mode b) on the two-mode grid."""
    a1 = annihilation(cutoff).matrix
    eye = np.eye(cutoff.single_dim)
    return np.kron(a1, eye), np.kron(eye, a1)


@lru_cache(maxsize=64)
def _bs_unitary(nmax: int, transmissivity: float, phase: float) -> np.ndarray:
    cutoff = FockCutoff(nmax)
    a, b = two_mode_operators(cutoff)
    eta = np.arccos(np.sqrt(transmissivity))
    gen = np.exp(1j * phase) * a.conj().T @ b
    gen = gen + gen.conj().T
    u = expm(1j * eta * gen)
    u.setflags(write=False)
    return u


def beam_splitter_unitary(cutoff: FockCutoff, transmissivity: float = 0.5, phase: float = 0.0) -> np.ndarray:
    """U = exp[i eta (a^dag b e^{i phase} + a b^dag e^{-i phase})] with cos^2(eta) = transmissivity.

    The generator conserves n_a + n_b, so blocks with total photon number
    <= nmax are exact on the truncated grid.
    """
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"transmissivity must lie in [0, 1], got {transmissivity}")
    return _bs_unitary(cutoff.nmax, float(transmissivity), float(phase))


def beam_splitter(state: TwoModeState, transmissivity: float = 0.5, phase: float = 0.0) -> TwoModeState:
    u = beam_splitter_unitary(state.cutoff, transmissivity, phase)
    return state.with_matrix(u @ state.matrix @ u.conj().T)


def make_noon(n: int, cutoff: FockCutoff) -> TwoModeState:
    if n < 1:
        raise ValueError("N00N photon number must be >= 1")
    cutoff.require(n, f"N00N({n})")
    ket = np.zeros(cutoff.dim, dtype=complex)
    ket[cutoff.index(n, 0)] = 1.0
    ket[cutoff.index(0, n)] = 1.0
    return TwoModeState.from_ket(cutoff, ket, f"noon{n}")


def make_split_photon(cutoff: FockCutoff) -> TwoModeState:
    return TwoModeState(cutoff, make_noon(1, cutoff).matrix, "split_photon")


def make_holland_burnett(n: int, cutoff: FockCutoff) -> TwoModeState:
    """Balanced beam splitter acting on |n, n>."""
    if n < 1:
        raise ValueError("Holland-Burnett photon number must be >= 1")
    cutoff.require(2 * n, f"HB({n})")
    ket = np.zeros(cutoff.dim, dtype=complex)
    ket[cutoff.index(n, n)] = 1.0
    ket = beam_splitter_unitary(cutoff) @ ket
    return TwoModeState.from_ket(cutoff, ket, f"hb{n}")


def holland_burnett_amplitudes(n: int) -> dict[tuple[int, int], float]:
    """Populations of HB(n) from expanding (a^+ + b^+)^n (a^+ - b^+)^n / (2^n n!) on vacuum.

    Independent of the beam-splitter unitary; used as a cross-check.
    """
    coeffs: dict[int, float] = {}
    # (x + y)^n (x - y)^n = (x^2 - y^2)^n = sum_j C(n, j) x^{2(n-j)} (-y^2)^j
    for j in range(n + 1):
        ka, kb = 2 * (n - j), 2 * j
        coeffs[ka] = coeffs.get(ka, 0.0) + comb(n, j) * (-1) ** j
    out = {}
    for ka, c in coeffs.items():
        kb = 2 * n - ka
        amp = c * sqrt(factorial(ka) * factorial(kb)) / (2**n * factorial(n))
        out[(ka, kb)] = amp * amp
    return out


def embed_qubit(probe: QubitProbe, n: int, cutoff: FockCutoff) -> TwoModeState:
    """Place the 2x2 probe matrix on the {|n,0>, |0,n>} block."""
    cutoff.require(n, f"qubit embedding with N={n}")
    idx = [cutoff.index(n, 0), cutoff.index(0, n)]
    m = np.zeros((cutoff.dim, cutoff.dim), dtype=complex)
    m[np.ix_(idx, idx)] = probe.matrix()
    return TwoModeState(cutoff, m, f"qubit(theta={probe.theta:.6g},N={n})")


def qubit_block_indices(n: int, cutoff: FockCutoff) -> list[int]:
    return [cutoff.index(n, 0), cutoff.index(0, n)]


@lru_cache(maxsize=None)
def _swap_permutation(nmax: int) -> np.ndarray:
    na, nb = photon_numbers(nmax)
    return nb * (nmax + 1) + na


def _swap_mismatch(state: TwoModeState, chi: float) -> float:
    perm = _swap_permutation(state.cutoff.nmax)
    na, _ = photon_numbers(state.cutoff.nmax)
    swapped = state.matrix[np.ix_(perm, perm)]
    ph = np.exp(1j * chi * na)
    return float(np.max(np.abs(ph[:, None] * swapped * ph.conj()[None, :] - state.matrix)))


def is_path_symmetric(state: TwoModeState, tol: float = 1e-9) -> bool:
    """True if some relative phase e^{i chi n_a} makes the mode-swapped state equal to the original."""
    grid = np.linspace(0.0, 2 * np.pi, 361)
    vals = np.array([_swap_mismatch(state, c) for c in grid])
    i = int(np.argmin(vals))
    if vals[i] <= tol:
        return True
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda c: _swap_mismatch(state, c), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13})
    return bool(min(res.fun, vals[i]) <= tol)
