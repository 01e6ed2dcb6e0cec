"""Phase shift, phase diffusion and photon loss on two-mode states, with parameter derivatives.

The phase is imprinted as exp(-i phi a^dag a), which puts the factor
e^{-i phi} on the <N,0|rho|0,N> coherence of the effective qubit (the
first qubit basis vector is |N,0>).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from phasediff.fockcore import TwoModeState, photon_numbers


@dataclass(frozen=True)
class ChannelParams:
    phi: float = 0.0
    delta: float = 0.0
    eta_a: float = 1.0
    eta_b: float = 1.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        for name in ("eta_a", "eta_b"):
            eta = getattr(self, name)
            if not 0.0 < eta <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {eta}")

    @classmethod
    def symmetric(cls, phi: float, delta: float, efficiency: float = 1.0) -> ChannelParams:
        return cls(phi, delta, efficiency, efficiency)

    @property
    def lossless(self) -> bool:
        return self.eta_a == 1.0 and self.eta_b == 1.0


@dataclass(frozen=True)
class DifferentiatedState:
    """Encoded state with its derivatives along (phi, delta).

    ``rho`` is a plain matrix so the same container serves full Fock states,
    the 2-D qubit block and two-probe product spaces.
    """

    rho: np.ndarray
    d_phi: np.ndarray
    d_delta: np.ndarray
    label: str = ""
    state: TwoModeState | None = None

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @property
    def derivatives(self) -> tuple[np.ndarray, np.ndarray]:
        return self.d_phi, self.d_delta

    def restrict(self, indices) -> DifferentiatedState:
        """Compress onto a subspace that contains the support of rho and its derivatives."""
        idx = np.asarray(indices)
        ix = np.ix_(idx, idx)
        return DifferentiatedState(self.rho[ix], self.d_phi[ix], self.d_delta[ix], self.label)

    def transform(self, u: np.ndarray) -> DifferentiatedState:
        ud = u.conj().T
        return DifferentiatedState(u @ self.rho @ ud, u @ self.d_phi @ ud, u @ self.d_delta @ ud,
                                   self.label)

    def tensor(self, other: DifferentiatedState | None = None) -> DifferentiatedState:
        """Two independent copies sharing the same parameters (product rule on the derivatives)."""
        o = self if other is None else other
        return DifferentiatedState(
            np.kron(self.rho, o.rho),
            np.kron(self.d_phi, o.rho) + np.kron(self.rho, o.d_phi),
            np.kron(self.d_delta, o.rho) + np.kron(self.rho, o.d_delta),
            f"{self.label}x{o.label}",
        )


def _coherence_order(nmax: int) -> np.ndarray:
    na, _ = photon_numbers(nmax)
    return na[:, None] - na[None, :]


def phase_shift(state: TwoModeState, phi: float) -> TwoModeState:
    k = _coherence_order(state.cutoff.nmax)
    return state.with_matrix(state.matrix * np.exp(-1j * phi * k))


def phase_diffuse(state: TwoModeState, delta: float) -> TwoModeState:
    """Fock-basis dephasing e^{-delta^2 (n_a - m_a)^2} on every coherence."""
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    k = _coherence_order(state.cutoff.nmax)
    return state.with_matrix(state.matrix * np.exp(-(delta**2) * k**2))


def phase_diffuse_sampled(state: TwoModeState, delta: float, draws: int, rng: np.random.Generator) -> TwoModeState:
    """Monte-Carlo average of random phase kicks xi ~ N(0, 2 delta^2) on mode a.

    The width sqrt(2) delta reproduces the closed-form factor exp(-delta^2 k^2).
    """
    na, _ = photon_numbers(state.cutoff.nmax)
    xi = rng.normal(0.0, np.sqrt(2.0) * delta, size=draws)
    acc = np.zeros_like(state.matrix)
    for x in xi:
        ph = np.exp(1j * x * na)
        acc += ph[:, None] * state.matrix * ph.conj()[None, :]
    return state.with_matrix(acc / draws)


@lru_cache(maxsize=64)
def loss_kraus(nmax: int, eta: float) -> tuple[np.ndarray, ...]:
    """Single-mode Kraus operators K_l = sum_n sqrt(C(n,l) eta^{n-l} (1-eta)^l) |n-l><n|."""
    ops = []
    for l in range(nmax + 1):
        k = np.zeros((nmax + 1, nmax + 1))
        for n in range(l, nmax + 1):
            k[n - l, n] = np.sqrt(comb(n, l) * eta ** (n - l) * (1 - eta) ** l)
        k.setflags(write=False)
        ops.append(k)
    return tuple(ops)


def apply_loss_matrix(matrix: np.ndarray, nmax: int, eta_a: float, eta_b: float) -> np.ndarray:
    """Linear loss map on any operator (used for states and their derivatives alike)."""
    n = nmax + 1
    t = matrix.reshape(n, n, n, n)
    if eta_a != 1.0:
        t = sum(np.einsum("ij,jbkd,lk->ibld", K, t, K, optimize=True) for K in loss_kraus(nmax, eta_a))
    if eta_b != 1.0:
        t = sum(np.einsum("ij,ajck,lk->aicl", K, t, K, optimize=True) for K in loss_kraus(nmax, eta_b))
    return np.asarray(t).reshape(n * n, n * n)


def loss(state: TwoModeState, eta_a: float, eta_b: float | None = None) -> TwoModeState:
    eta_b = eta_a if eta_b is None else eta_b
    for eta in (eta_a, eta_b):
        if not 0.0 < eta <= 1.0:
            raise ValueError(f"efficiency must lie in (0, 1], got {eta}")
    out = apply_loss_matrix(state.matrix, state.cutoff.nmax, eta_a, eta_b)
    return state.with_matrix(out)


def encode(state: TwoModeState, params: ChannelParams) -> TwoModeState:
    s = phase_diffuse(phase_shift(state, params.phi), params.delta)
    if not params.lossless:
        s = loss(s, params.eta_a, params.eta_b)
    return s


def encode_with_derivatives(state: TwoModeState, params: ChannelParams) -> DifferentiatedState:
    """Encode and differentiate along phi and delta.

    Derivatives are taken on the shifted, dephased state and then pushed
    through the loss map, which is linear and parameter-free.
    """
    nmax = state.cutoff.nmax
    k = _coherence_order(nmax)
    encoded = phase_diffuse(phase_shift(state, params.phi), params.delta).matrix
    d_phi = -1j * k * encoded
    d_delta = -2.0 * params.delta * k**2 * encoded
    rho = encoded
    if not params.lossless:
        rho = apply_loss_matrix(rho, nmax, params.eta_a, params.eta_b)
        d_phi = apply_loss_matrix(d_phi, nmax, params.eta_a, params.eta_b)
        d_delta = apply_loss_matrix(d_delta, nmax, params.eta_a, params.eta_b)
    out = state.with_matrix(rho)
    return DifferentiatedState(out.matrix, d_phi, d_delta, state.label, out)


def qubit_with_derivatives(theta: float, phi: float, delta: float) -> DifferentiatedState:
    """Effective-qubit probe and its analytic derivatives."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    coh = c * s * np.exp(-1j * phi - delta**2)
    rho = np.array([[c * c, coh], [np.conj(coh), s * s]], dtype=complex)
    d_phi = np.array([[0, -1j * coh], [1j * np.conj(coh), 0]], dtype=complex)
    d_delta = np.array([[0, -2 * delta * coh], [-2 * delta * np.conj(coh), 0]], dtype=complex)
    return DifferentiatedState(rho, d_phi, d_delta, f"qubit(theta={theta:.6g})")
