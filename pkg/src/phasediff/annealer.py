"""Simulated annealing over rank-1 projective measurements.

A measurement on a d-dimensional space is the set of projectors onto the
columns of a d x d unitary. Chains perform a random walk U -> U exp(i eps G)
with G drawn from the Gaussian unitary ensemble, and accept moves with a
Metropolis rule on a scalarized objective

    w * x + (1 - w) * y - entanglement_weight * (weighed entanglement)

where x, y are the normalized variance proxies (F^-1)_ii^-1 / H_ii.

All chains (weights x restarts) advance together as one batch; every chain
draws from its own seeded stream, so results do not depend on batching.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from phasediff.channels import DifferentiatedState
from phasediff.estimation import P_FLOOR

UNITARITY_TOL = 1e-10


@dataclass(frozen=True)
class ProjectiveMeasurement:
    unitary: np.ndarray
    bipartition: tuple[int, int] | None = None

    def __post_init__(self):
        u = np.array(self.unitary, dtype=complex)
        u.setflags(write=False)
        object.__setattr__(self, "unitary", u)
        dev = unitarity_defect(u)
        if dev > UNITARITY_TOL:
            raise ValueError(f"measurement basis not unitary (defect {dev:.3e})")
        if self.bipartition is not None and int(np.prod(self.bipartition)) != u.shape[0]:
            raise ValueError(f"bipartition {self.bipartition} does not match dimension {u.shape[0]}")

    @property
    def dimension(self) -> int:
        return self.unitary.shape[0]

    def projectors(self) -> np.ndarray:
        u = self.unitary
        return np.einsum("ik,jk->kij", u, u.conj())

    def povm(self, label: str = "projective"):
        from phasediff.measurements import Povm

        return Povm(self.projectors(), tuple(f"e{k}" for k in range(self.dimension)), label)


def unitarity_defect(u: np.ndarray) -> float:
    u = np.asarray(u)
    eye = np.eye(u.shape[-1])
    return float(np.max(np.abs(np.swapaxes(u.conj(), -1, -2) @ u - eye)))


def reorthonormalize(u: np.ndarray) -> np.ndarray:
    """Closest unitary (polar factor), batched over leading axes."""
    w, _, vh = np.linalg.svd(u)
    return w @ vh


def gue(rng: np.random.Generator, d: int, size: int | None = None) -> np.ndarray:
    shape = (d, d) if size is None else (size, d, d)
    a = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return 0.5 * (a + np.swapaxes(a.conj(), -1, -2))


def _unit_exp(g: np.ndarray, eps) -> np.ndarray:
    """exp(i eps G / rho(G)) for Hermitian G (batched); rho is the spectral radius."""
    lam, v = np.linalg.eigh(g)
    radius = np.max(np.abs(lam), axis=-1, keepdims=True)
    phase = np.exp(1j * np.asarray(eps)[..., None] * lam / radius)
    return (v * phase[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def random_unitary_step(u: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """u @ exp(i eps G), G from the GUE normalized to unit spectral radius."""
    if epsilon == 0:
        return np.array(u, copy=True)
    g = gue(rng, u.shape[0])
    return u @ _unit_exp(g, np.float64(epsilon))


def haar_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r)
    return q * (diag / np.abs(diag))[None, :]


# entanglement


def _binary_entropy_from_det(det: np.ndarray) -> np.ndarray:
    disc = np.sqrt(np.clip(1.0 - 4.0 * det, 0.0, 1.0))
    lam = np.stack([(1 + disc) / 2, (1 - disc) / 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 1e-300, -lam * np.log2(lam), 0.0)
    return terms.sum(axis=0)


def projector_entropies(unitary: np.ndarray, bipartition: tuple[int, int]) -> np.ndarray:
    """Entanglement entropy (bits) of each column of ``unitary`` (batched over leading axes)."""
    da, db = bipartition
    u = np.asarray(unitary)
    cols = np.swapaxes(u, -1, -2).reshape(u.shape[:-2] + (u.shape[-1], da, db))
    if (da, db) == (2, 2):
        det = np.abs(cols[..., 0, 0] * cols[..., 1, 1] - cols[..., 0, 1] * cols[..., 1, 0]) ** 2
        return _binary_entropy_from_det(det)
    sv = np.linalg.svd(cols, compute_uv=False) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(sv > 1e-300, -sv * np.log2(sv), 0.0).sum(axis=-1)


def entanglement_entropy_total(meas: ProjectiveMeasurement) -> tuple[float, float]:
    """Total entanglement (bits) of the projectors, raw and divided by the Bell-measurement value.

    The maximum is one ebit per projector for the 2x2 split (min(log2 da, log2 db) in general).
    """
    if meas.bipartition is None:
        raise ValueError("measurement has no declared bipartition")
    ent = projector_entropies(meas.unitary, meas.bipartition)
    total = float(ent.sum())
    e_max = meas.dimension * np.log2(min(meas.bipartition))
    return total, total / e_max


# objective


@dataclass(frozen=True)
class SearchProblem:
    """What the annealer evaluates: an encoded probe, its QFI normalization and resource count."""

    diff: DifferentiatedState
    h11: float
    h22: float
    probes: int = 1
    bipartition: tuple[int, int] | None = None
    label: str = ""

    @property
    def dimension(self) -> int:
        return self.diff.dim


def evaluate_batch(problem: SearchProblem, u: np.ndarray):
    """Variance proxies x, y and raw entanglement for a batch of unitaries (B, d, d)."""
    uc = u.conj()
    mats = (problem.diff.rho, problem.diff.d_phi, problem.diff.d_delta)
    vals = [np.real(np.einsum("bjk,jl,blk->bk", uc, m, u, optimize=True)) for m in mats]
    p, d1, d2 = vals
    keep = p >= P_FLOOR
    inv = np.where(keep, 1.0 / np.where(keep, p, 1.0), 0.0)
    f11 = np.sum(d1 * d1 * inv, axis=-1) / problem.probes
    f22 = np.sum(d2 * d2 * inv, axis=-1) / problem.probes
    f12 = np.sum(d1 * d2 * inv, axis=-1) / problem.probes
    det = f11 * f22 - f12 * f12
    ok = (f11 > 0) & (f22 > 0) & (det > 1e-10 * f11 * f22)
    x = np.where(ok, det / np.where(ok, f22, 1.0), 0.0) / problem.h11
    y = np.where(ok, det / np.where(ok, f11, 1.0), 0.0) / problem.h22
    if problem.bipartition is not None:
        ent = projector_entropies(u, problem.bipartition).sum(axis=-1)
    else:
        ent = np.zeros(len(u))
    return x, y, ent


def _entropy_scale(problem: SearchProblem) -> float:
    if problem.bipartition is None:
        return 1.0
    return problem.dimension * np.log2(min(problem.bipartition))


# configuration and results


@dataclass(frozen=True)
class AnnealConfig:
    steps: int = 20_000
    epsilon0: float = 0.5
    epsilon_min: float = 1e-3
    temperature0: float = 0.05
    cooling: float = 0.995
    weights: tuple[float, ...] = tuple(np.round(np.linspace(0.0, 1.0, 21), 10))
    restarts: int = 20
    entanglement_weight: float = 0.0
    seed: int = 0
    reorthonormalize_every: int = 100
    log_every: int = 500

    def __post_init__(self):
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("steps and restarts must be positive")
        if not 0 < self.cooling < 1:
            raise ValueError("cooling factor must lie in (0, 1)")
        if self.epsilon0 <= 0 or self.epsilon_min < 0 or self.temperature0 < 0:
            raise ValueError("step sizes must be positive and temperature non-negative")
        if self.entanglement_weight < 0:
            raise ValueError("entanglement weight must be >= 0")
        if any(not 0.0 <= w <= 1.0 for w in self.weights):
            raise ValueError("scalarization weights must lie in [0, 1]")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


@dataclass
class FrontierPoint:
    x: float
    y: float
    weight: float
    delta: float
    unitary: np.ndarray = field(repr=False)
    entanglement_raw: float = 0.0
    entanglement_weighed: float = 0.0
    seed: int = 0
    restart: int = 0
    pareto: bool = False

    @property
    def total(self) -> float:
        return self.x + self.y

    def measurement(self, bipartition=None) -> ProjectiveMeasurement:
        return ProjectiveMeasurement(self.unitary, bipartition)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unitary"] = [[[float(z.real), float(z.imag)] for z in row] for row in self.unitary]
        d["sum"] = self.total
        return d


@dataclass
class AnnealResult:
    points: list[FrontierPoint]
    chains: list[dict]
    config: AnnealConfig
    label: str = ""

    def best_total(self) -> FrontierPoint:
        return max(self.points, key=lambda p: p.total)

    def pareto_points(self) -> list[FrontierPoint]:
        return [p for p in self.points if p.pareto]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["w", "x", "y", "x+y", "entanglement_raw", "entanglement_weighed", "seed", "restart", "pareto"])
        for p in self.points:
            w.writerow([repr(p.weight), repr(p.x), repr(p.y), repr(p.total), repr(p.entanglement_raw),
                        repr(p.entanglement_weighed), p.seed, p.restart, int(p.pareto)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "label": self.label,
            "config": asdict(self.config),
            "points": [p.to_dict() for p in self.points],
            "chains": self.chains,
        })


def mark_pareto(points: list[FrontierPoint]) -> None:
    for p in points:
        p.pareto = not any(
            (q.x >= p.x and q.y >= p.y) and (q.x > p.x or q.y > p.y) for q in points if q is not p
        )


def chain_seed(seed: int, weight_index: int, restart: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, weight_index, restart])


def run_chains(problem: SearchProblem, config: AnnealConfig, chain_weights: np.ndarray,
               chain_seeds: list[np.random.SeedSequence], block: int = 250):
    """Advance a batch of annealing chains; returns best unitaries, their scores and per-chain logs."""
    n = len(chain_weights)
    d = problem.dimension
    rngs = [np.random.default_rng(s) for s in chain_seeds]
    u = np.array([haar_unitary(r, d) for r in rngs])
    lam_e = config.entanglement_weight
    e_scale = _entropy_scale(problem)
    wts = np.asarray(chain_weights, dtype=float)

    def score(batch):
        x, y, ent = evaluate_batch(problem, batch)
        return wts * x + (1 - wts) * y - lam_e * ent / e_scale, x, y, ent

    f, *_ = score(u)
    best_u, best_f = u.copy(), f.copy()
    accepted = np.zeros(n, dtype=int)
    history: list[list[float]] = [[] for _ in range(n)]
    t0, eps0 = config.temperature0, config.epsilon0
    for start in range(0, config.steps, block):
        m = min(block, config.steps - start)
        # per-chain draws keep every chain reproducible on its own
        g = np.stack([gue(r, d, m) for r in rngs], axis=1)
        uni = np.stack([r.random(m) for r in rngs], axis=1)
        for j in range(m):
            k = start + j
            temp = t0 * config.cooling**k
            eps = max(eps0 * np.sqrt(config.cooling**k), config.epsilon_min)
            cand = u @ _unit_exp(g[j], np.full(n, eps))
            fc, *_ = score(cand)
            gain = fc - f
            if temp > 1e-300:
                with np.errstate(over="ignore"):
                    acc = (gain >= 0) | (uni[j] < np.exp(np.minimum(gain, 0.0) / temp))
            else:
                acc = gain >= 0
            u = np.where(acc[:, None, None], cand, u)
            f = np.where(acc, fc, f)
            accepted += acc
            better = f > best_f
            if np.any(better):
                best_u[better] = u[better]
                best_f[better] = f[better]
            if (k + 1) % config.reorthonormalize_every == 0:
                u = reorthonormalize(u)
            if config.log_every and (k + 1) % config.log_every == 0:
                for i in range(n):
                    history[i].append(float(f[i]))
    best_u = reorthonormalize(best_u)
    fb, x, y, ent = score(best_u)
    logs = [{"weight": float(wts[i]), "accepted": int(accepted[i]), "objective_trace": history[i]}
            for i in range(n)]
    return best_u, fb, x, y, ent, logs


def anneal_frontier(problem: SearchProblem, config: AnnealConfig, delta: float = float("nan")) -> AnnealResult:
    """Best measurement per scalarization weight over ``config.restarts`` chains."""
    weights = np.array(config.weights)
    chain_w, seeds, tags = [], [], []
    for wi, w in enumerate(weights):
        for r in range(config.restarts):
            chain_w.append(w)
            seeds.append(chain_seed(config.seed, wi, r))
            tags.append((wi, r))
    best_u, fb, x, y, ent, logs = run_chains(problem, config, np.array(chain_w), seeds)
    e_scale = _entropy_scale(problem)
    points = []
    for wi, w in enumerate(weights):
        idx = [i for i, t in enumerate(tags) if t[0] == wi]
        # highest objective; ties broken by the lowest restart index
        i = max(idx, key=lambda j: (fb[j], -tags[j][1]))
        points.append(FrontierPoint(float(x[i]), float(y[i]), float(w), float(delta), best_u[i],
                                    float(ent[i]), float(ent[i] / e_scale) if problem.bipartition else 0.0,
                                    config.seed, tags[i][1]))
    mark_pareto(points)
    for log, (wi, r) in zip(logs, tags):
        log["restart"] = r
        log["best_x"] = float(x[wi * config.restarts + r])
        log["best_y"] = float(y[wi * config.restarts + r])
    return AnnealResult(points, logs, config, problem.label)


# search problems

# the delta-derivative of the encoded state vanishes at delta = 0, so an
# exactly dephasing-free probe carries no delta information; searches at
# delta = 0 run at this floor instead
DELTA_FLOOR = 1e-3


def _effective_delta(delta: float) -> float:
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    return max(delta, DELTA_FLOOR)


def pair_problem(delta: float, phi: float = np.pi / 4) -> SearchProblem:
    """Two equatorial qubit probes measured jointly; Fisher information counted per probe."""
    from phasediff.channels import qubit_with_derivatives
    from phasediff.estimation import qfi_closed_form_qubit

    d = _effective_delta(delta)
    q = qubit_with_derivatives(np.pi / 2, phi, d)
    h = qfi_closed_form_qubit(np.pi / 2, d)
    return SearchProblem(q.tensor(), h[0, 0], h[1, 1], probes=2, bipartition=(2, 2), label=f"pair(delta={d:g})")


def qubit_ancilla_problem(delta: float, phi: float = np.pi / 4, ancilla: int = 2) -> SearchProblem:
    """One equatorial qubit next to an ancilla in a fixed state; projective measurements on the
    joint space act as general POVMs on the qubit."""
    from phasediff.channels import qubit_with_derivatives
    from phasediff.estimation import qfi_closed_form_qubit

    d = _effective_delta(delta)
    q = qubit_with_derivatives(np.pi / 2, phi, d)
    anc = np.zeros((ancilla, ancilla))
    anc[0, 0] = 1.0
    diff = DifferentiatedState(np.kron(q.rho, anc), np.kron(q.d_phi, anc), np.kron(q.d_delta, anc), "qubit+ancilla")
    h = qfi_closed_form_qubit(np.pi / 2, d)
    return SearchProblem(diff, h[0, 0], h[1, 1], label=f"qubit+ancilla(delta={d:g})")


def fock_sector_problem(state, params) -> SearchProblem:
    """Projective measurements on the fixed-photon-number sectors that carry the encoded probe."""
    from dataclasses import replace

    from phasediff.channels import encode_with_derivatives
    from phasediff.estimation import qfi_matrix
    from phasediff.fockcore import photon_numbers

    p = replace(params, delta=_effective_delta(params.delta))
    full = encode_with_derivatives(state, p)
    na, nb = photon_numbers(state.cutoff.nmax)
    total = na + nb
    occupied = np.unique(total[np.real(np.diag(full.rho)) > 1e-14])
    idx = np.flatnonzero(np.isin(total, occupied))
    h = qfi_matrix(full)
    return SearchProblem(full.restrict(idx), h[0, 0], h[1, 1], label=f"{state.label}(delta={p.delta:g})")
