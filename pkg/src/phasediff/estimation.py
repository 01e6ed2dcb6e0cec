"""Quantum and classical Fisher information for the (phi, delta) pair.

Parameter order is (phi, delta) everywhere: index 0 is the phase, index 1
the diffusion amplitude.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from phasediff.channels import DifferentiatedState

SUPPORT_TOL = 1e-12
SLD_RESIDUAL_TOL = 1e-9
P_FLOOR = 1e-14
DP_FLOOR = 1e-12


class NotIdentifiableError(ValueError):
    """The derivative of rho has weight outside the support of rho."""


class DivergentFisherWarning(RuntimeWarning):
    """An outcome with vanishing probability has a non-vanishing derivative."""


class QuadratureNotConverged(RuntimeError):
    def __init__(self, coarse: np.ndarray, fine: np.ndarray, nodes: int):
        self.coarse = coarse
        self.fine = fine
        self.nodes = nodes
        super().__init__(
            f"continuous Fisher information not converged with {nodes} quadrature points:\n"
            f"coarse={coarse.tolist()}\nfine={fine.tolist()}"
        )


@dataclass(frozen=True)
class SldPair:
    L_phi: np.ndarray
    L_delta: np.ndarray
    commutator_expectation: float
    residual: float


@dataclass(frozen=True)
class FisherMatrices:
    F: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", np.asarray(self.F, dtype=float))
        object.__setattr__(self, "H", np.asarray(self.H, dtype=float))

    def report(self, M: int = 1, **provenance) -> TradeoffReport:
        return tradeoff_report(self.F, self.H, M, **provenance)

    def bound_gap(self) -> float:
        """Smallest eigenvalue of H - F (non-negative when H >= F)."""
        return float(np.linalg.eigvalsh(self.H - self.F)[0])


# SLD and QFI


def sld(diff: DifferentiatedState, support_tol: float = SUPPORT_TOL) -> SldPair:
    """Symmetric logarithmic derivatives in the eigenbasis of rho.

    Matrix elements between eigenvectors whose eigenvalues sum to less
    than ``support_tol`` are set to zero.
    """
    rho = diff.rho
    lam, vec = np.linalg.eigh(rho)
    lam_sum = lam[:, None] + lam[None, :]
    on_support = lam_sum > support_tol
    scale = max(1.0, float(np.max(np.abs(rho))))
    sld_ops = []
    for d in diff.derivatives:
        d_eig = vec.conj().T @ d @ vec
        leak = np.max(np.abs(d_eig[~on_support]), initial=0.0)
        if leak > 1e-9 * scale:
            raise NotIdentifiableError(
                f"parameter not identifiable on this state: derivative weight {leak:.3e} outside the support"
            )
        l_eig = np.zeros_like(d_eig)
        l_eig[on_support] = 2.0 * d_eig[on_support] / lam_sum[on_support]
        sld_ops.append(vec @ l_eig @ vec.conj().T)
    l1, l2 = sld_ops
    residual = 0.0
    for d, l in zip(diff.derivatives, sld_ops):
        r = vec.conj().T @ (2 * d - l @ rho - rho @ l) @ vec
        residual = max(residual, float(np.max(np.abs(r[on_support]), initial=0.0)))
    comm = 2.0 * float(np.imag(np.trace(rho @ l1 @ l2)))
    return SldPair(l1, l2, comm, residual)


def qfi_from_sld(rho: np.ndarray, pair: SldPair) -> np.ndarray:
    ops = (pair.L_phi, pair.L_delta)
    h = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            h[i, j] = np.real(np.trace(rho @ ops[i] @ ops[j]))
    return 0.5 * (h + h.T)


def qfi_matrix(diff: DifferentiatedState) -> np.ndarray:
    return qfi_from_sld(diff.rho, sld(diff))


def _diffusion_qfi(delta: float) -> float:
    if delta == 0:
        return 2.0
    return 4.0 * delta**2 / np.expm1(2.0 * delta**2)


def qfi_closed_form_qubit(theta: float, delta: float) -> np.ndarray:
    """QFI of the effective qubit, diag(e^{-2 delta^2}, 4 delta^2/(e^{2 delta^2}-1)) * sin^2(theta).

    At delta = 0 the second entry takes its limiting value 2 sin^2(theta).
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    s2 = np.sin(theta) ** 2
    return s2 * np.diag([np.exp(-2.0 * delta**2), _diffusion_qfi(delta)])


def qfi_noon(n: int, delta: float) -> np.ndarray:
    return n**2 * qfi_closed_form_qubit(np.pi / 2, n * delta)


def qfi_coherent(alpha_sq: float, theta: float, delta: float) -> np.ndarray:
    """A coherent state acts as |alpha|^2 independent single photons."""
    return alpha_sq * qfi_closed_form_qubit(theta, delta)


def bell_crossover_delta() -> float:
    """Diffusion amplitude where the Bell-measurement advantage vanishes: e^{-d^2} = sqrt(2/(1+sqrt 5))."""
    return float(np.sqrt(0.5 * np.log((1.0 + np.sqrt(5.0)) / 2.0)))


def delta_zero_limit(fn, deltas=(0.005, 0.01, 0.02, 0.04)):
    """Limit delta -> 0+ of a quantity analytic in delta^2.

    Pure probes sit on the boundary of the model at delta = 0, where the
    delta-derivative vanishes identically while the Fisher information
    keeps a finite limit. The limit is obtained by polynomial
    extrapolation in delta^2 from a few small positive amplitudes.
    """
    t = np.asarray(deltas, dtype=float) ** 2
    vals = np.array([np.asarray(fn(d), dtype=float) for d in deltas])
    # Lagrange weights for evaluation at t = 0
    w = np.array([np.prod([-t[m] / (t[k] - t[m]) for m in range(len(t)) if m != k]) for k in range(len(t))])
    return np.tensordot(w, vals, axes=1)


# classical Fisher information


def outcome_fisher(p: np.ndarray, dp: np.ndarray, weights: np.ndarray | None = None,
                   divergent: list | None = None) -> np.ndarray:
    """sum_n w_n dp_i dp_j / p over outcomes; ``dp`` has shape (2, n_outcomes)."""
    p = np.asarray(p, dtype=float)
    dp = np.asarray(dp, dtype=float)
    small = p < P_FLOOR
    dp_big = np.any(np.abs(dp) >= DP_FLOOR, axis=0)
    bad = small & dp_big
    if np.any(bad) and divergent is not None:
        divergent.extend(np.flatnonzero(bad).tolist())
    keep = ~small
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=float)
    pk, dk, wk = p[keep], dp[:, keep], w[keep]
    f = (dk * (wk / pk)) @ dk.T
    return 0.5 * (f + f.T)


def classical_fi_discrete(diff: DifferentiatedState, povm, diagnostics: dict | None = None) -> np.ndarray:
    """F_ij = sum_n (1/p_n) dp_n/dlambda_i dp_n/dlambda_j for a discrete POVM.

    Zero-probability outcomes with vanishing derivative are skipped. If the
    derivative does not vanish the information is formally infinite; such
    outcomes are reported in ``diagnostics["divergent"]`` and through a
    :class:`DivergentFisherWarning`, never clipped silently.
    """
    els = np.asarray(povm.elements)
    if els.shape[1:] != diff.rho.shape:
        raise ValueError(f"POVM acts on dimension {els.shape[1]}, state has {diff.rho.shape[0]}")
    p = np.real(np.einsum("kij,ji->k", els, diff.rho))
    dp = np.stack([np.real(np.einsum("kij,ji->k", els, d)) for d in diff.derivatives])
    bad: list[int] = []
    f = outcome_fisher(p, dp, divergent=bad)
    if bad:
        labels = [povm.labels[i] for i in bad]
        warnings.warn(f"Fisher information divergent on outcomes {labels}", DivergentFisherWarning,
                      stacklevel=2)
    if diagnostics is not None:
        diagnostics["divergent"] = [povm.labels[i] for i in bad]
        diagnostics["probabilities"] = p
    return f


@dataclass(frozen=True)
class QuadratureGrid:
    """Outcome-plane quadrature rule.

    ``polar``: Gauss-Legendre in r on [0, half_width] with ``nodes`` points,
    times the periodic trapezoid rule with ``angular`` points (shifted by half
    a step so symmetry lines of the density never sit on a node).
    ``cartesian``: tensorized Gauss-Legendre on [-half_width, half_width]^2.

    Polar is the default: (dp)^2/p is smooth in (r, angle) but only
    continuous in (x, p) at the origin, and its sharp features for nearly
    pure probes are purely angular.
    """

    half_width: float
    nodes: int = 48
    angular: int = 128
    kind: str = "polar"

    def __post_init__(self):
        if self.kind not in ("polar", "cartesian"):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")

    @classmethod
    def for_cutoff(cls, nmax: int, kind: str = "polar") -> QuadratureGrid:
        if kind == "polar":
            return cls(float(np.sqrt(2.0 * nmax) + 5.0), 48, 128, kind)
        return cls(float(np.sqrt(2.0 * nmax) + 4.0), 120, 0, kind)

    @property
    def size(self) -> int:
        return self.nodes * (self.angular if self.kind == "polar" else self.nodes)

    def points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (x, p, weight) triples."""
        if self.kind == "cartesian":
            x, w = _gauss_legendre(self.nodes, -self.half_width, self.half_width)
            xx, pp = np.meshgrid(x, x, indexing="ij")
            return xx.ravel(), pp.ravel(), np.outer(w, w).ravel()
        r, wr = _gauss_legendre(self.nodes, 0.0, self.half_width)
        ang = 2 * np.pi * (np.arange(self.angular) + 0.5) / self.angular
        rr, aa = np.meshgrid(r, ang, indexing="ij")
        w = np.outer(wr * r, np.full(self.angular, 2 * np.pi / self.angular))
        return (rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel(), w.ravel()

    def refined(self, axis: str = "all") -> QuadratureGrid:
        if self.kind == "cartesian":
            return replace(self, nodes=2 * self.nodes)
        if axis == "angular":
            return replace(self, angular=2 * self.angular)
        if axis == "radial":
            return replace(self, nodes=2 * self.nodes)
        return replace(self, nodes=2 * self.nodes, angular=2 * self.angular)


@lru_cache(maxsize=32)
def _gauss_legendre(n: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    x, w = lo + half * (x + 1.0), w * half
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _fi_on_grid(diff: DifferentiatedState, meas, grid: QuadratureGrid, divergent: list) -> np.ndarray:
    x, p_, w = grid.points()
    p, dp1, dp2 = meas.outcome_arrays(diff, x, p_)
    pmax = float(np.max(p)) if p.size else 0.0
    # densities are Hermite polynomials times Gaussians; values below a
    # relative floor are rounding noise around exact zeros
    p = np.where(p < P_FLOOR * max(pmax, 1.0), 0.0, p)
    return outcome_fisher(p, np.stack([dp1, dp2]), w, divergent)


def classical_fi_continuous(diff: DifferentiatedState, meas, grid: QuadratureGrid | None = None,
                            rtol: float = 1e-5, max_refinements: int = 6,
                            diagnostics: dict | None = None) -> np.ndarray:
    """Fisher information of a continuous-outcome measurement by 2-D quadrature.

    The rule is doubled (angular axis first for polar grids, then radial)
    until a doubling changes no entry by more than ``rtol`` relative to the
    largest entry; the finer estimate is returned. Otherwise
    :class:`QuadratureNotConverged` is raised carrying the last two
    estimates.
    """
    if grid is None:
        grid = QuadratureGrid.for_cutoff(meas.nmax_of(diff))
    div: list = []

    def close(a, b):
        err = float(np.max(np.abs(a - b)))
        return err <= rtol * max(float(np.max(np.abs(b))), 1e-300) or err < 1e-14, err

    current = _fi_on_grid(diff, meas, grid, div)
    converged, err = False, np.inf
    for _ in range(max_refinements):
        g2 = grid.refined("angular")
        f2 = _fi_on_grid(diff, meas, g2, div)
        ok, err = close(current, f2)
        if ok and grid.kind == "polar":
            g3 = g2.refined("radial")
            f3 = _fi_on_grid(diff, meas, g3, div)
            ok, err = close(f2, f3)
            g2, f2 = g3, f3
        previous, current, grid = current, f2, g2
        if ok:
            converged = True
            break
    if diagnostics is not None:
        diagnostics.update(converged=converged, abs_change=err, nodes=grid.nodes, angular=grid.angular,
                           kind=grid.kind, divergent_points=len(div))
    if not converged:
        raise QuadratureNotConverged(previous, current, grid.size)
    return current


# trade-off metrics

SEPARABLE_BOUND = 1.0


@dataclass
class TradeoffReport:
    ratio_phi: float
    ratio_delta: float
    sum: float
    var_phi_norm: float
    var_delta_norm: float
    offdiag: float
    singular: bool = False
    M: int = 1
    provenance: dict = field(default_factory=dict)

    @property
    def var_sum(self) -> float:
        return self.var_phi_norm + self.var_delta_norm

    @property
    def exceeds_separable_bound(self) -> bool:
        return self.sum > SEPARABLE_BOUND + 1e-9

    def to_dict(self) -> dict:
        d = asdict(self)
        d["var_sum"] = self.var_sum
        d["exceeds_separable_bound"] = self.exceeds_separable_bound
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def is_singular(F: np.ndarray, rtol: float = 1e-10) -> bool:
    f11, f22, f12 = F[0, 0], F[1, 1], F[0, 1]
    if f11 <= 0 or f22 <= 0:
        return True
    return f11 * f22 - f12 * f12 <= rtol * f11 * f22


def tradeoff_report(F, H, M: int = 1, **provenance) -> TradeoffReport:
    """Normalized precisions F_ii/H_ii and the variance proxies (F^-1)_ii^-1 / H_ii."""
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float)
    if H[0, 0] <= 0 or H[1, 1] <= 0:
        raise ValueError(f"QFI diagonal must be positive, got {np.diag(H)}")
    r1, r2 = F[0, 0] / H[0, 0], F[1, 1] / H[1, 1]
    singular = is_singular(F)
    if singular:
        v1 = v2 = 0.0
    else:
        det = F[0, 0] * F[1, 1] - F[0, 1] ** 2
        v1 = det / F[1, 1] / H[0, 0]
        v2 = det / F[0, 0] / H[1, 1]
    return TradeoffReport(float(r1), float(r2), float(r1 + r2), float(v1), float(v2), float(F[0, 1]),
                          singular, int(M), dict(provenance))


def fisher_matrices(diff: DifferentiatedState, povm=None, continuous=None, grid=None) -> FisherMatrices:
    H = qfi_matrix(diff)
    if povm is not None:
        F = classical_fi_discrete(diff, povm)
    elif continuous is not None:
        F = classical_fi_continuous(diff, continuous, grid)
    else:
        raise ValueError("need a POVM or a continuous measurement")
    return FisherMatrices(F, H)
