"""Synthetic detector tomography and estimator simulations for qubit-like probes.

The pipeline mirrors an intensity-based experiment: a quorum of known
input states is sent into an unknown measurement, detector intensities are
recorded with slow multiplicative drift, the POVM is reconstructed by a
Gaussian-likelihood fit, and Fisher-information coordinates get Monte-Carlo
error bars.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import sqrtm

from phasediff.channels import ChannelParams, DifferentiatedState, encode_with_derivatives, qubit_with_derivatives
from phasediff.estimation import (
    P_FLOOR,
    _gauss_legendre,
    classical_fi_discrete,
    outcome_fisher,
    qfi_closed_form_qubit,
    tradeoff_report,
)
from phasediff.fockcore import QubitProbe, TwoModeState
from phasediff.measurements import (
    KET_A, KET_D, KET_H, KET_L, KET_R, KET_V,
    ContinuousMeasurement,
    Povm,
    SagnacPovmSpec,
    sagnac_povm,
)


class TomographyError(RuntimeError):
    pass


# quorum and records


@dataclass(frozen=True)
class ProbeQuorum:
    states: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        s = np.array(self.states, dtype=complex)
        s.setflags(write=False)
        object.__setattr__(self, "states", s)
        if len(self.labels) != len(s):
            raise ValueError("one label per quorum state required")

    @classmethod
    def default(cls, rotation_error: float = 0.0) -> ProbeQuorum:
        """H, V, D, A, R, L; ``rotation_error`` tilts every state about the y axis (waveplate systematics)."""
        kets = [KET_H, KET_V, KET_D, KET_A, KET_R, KET_L]
        c, s = np.cos(rotation_error / 2), np.sin(rotation_error / 2)
        rot = np.array([[c, -s], [s, c]], dtype=complex)
        states = [np.outer(rot @ k, (rot @ k).conj()) for k in kets]
        return cls(np.array(states), ("H", "V", "D", "A", "R", "L"))

    def gram_rank(self) -> int:
        vecs = self.states.reshape(len(self.states), -1)
        return int(np.linalg.matrix_rank(vecs @ vecs.conj().T, tol=1e-10))

    def require_complete(self) -> None:
        d = self.states.shape[1]
        if self.gram_rank() < d * d:
            raise TomographyError(f"quorum is not informationally complete (Gram rank {self.gram_rank()} < {d * d})")


@dataclass(frozen=True)
class IntensityRecord:
    probe: str
    outcome: str
    mean: float
    trace: tuple[float, ...]

    def __post_init__(self):
        if not self.trace:
            raise ValueError("intensity trace must be non-empty")
        if self.mean < 0:
            raise ValueError("mean intensity must be >= 0")
        if abs(self.mean - float(np.mean(self.trace))) > 1e-12:
            raise ValueError("mean does not match the trace average")

    @classmethod
    def from_trace(cls, probe: str, outcome: str, trace) -> IntensityRecord:
        t = tuple(float(v) for v in trace)
        return cls(probe, outcome, float(np.mean(t)), t)

    @property
    def relative_sd(self) -> float:
        if len(self.trace) < 2 or self.mean == 0:
            return 0.0
        return float(np.std(self.trace, ddof=1) / self.mean)


def simulate_experiment(truth: Povm, quorum: ProbeQuorum, shots_per_setting: int,
                        fluctuation_sd: float, rng: np.random.Generator) -> list[IntensityRecord]:
    """Readings p * (1 + N(0, sd)) truncated at 0, ``shots_per_setting`` per (probe, outcome)."""
    if shots_per_setting < 1:
        raise ValueError("shots_per_setting must be positive")
    records = []
    for s_label, rho in zip(quorum.labels, quorum.states):
        probs = truth.probabilities(rho)
        for o_label, p in zip(truth.labels, probs):
            drift = rng.normal(0.0, fluctuation_sd, size=shots_per_setting) if fluctuation_sd > 0 else 0.0
            readings = np.maximum(max(p, 0.0) * (1.0 + drift), 0.0) * np.ones(shots_per_setting)
            records.append(IntensityRecord.from_trace(s_label, o_label, readings))
    return records


# reconstruction


@dataclass
class ReconstructionOptions:
    step_scale: float = 1.0
    max_iterations: int = 20_000
    tol: float = 1e-10
    window: int = 50
    # floor on the standard error of a record mean, relative to the largest mean;
    # keeps exactly-zero records from dominating the conditioning
    rel_error_floor: float = 1e-4


@dataclass
class TomographyResult:
    povm: Povm
    log_likelihood: float
    chi2_per_dof: float
    iterations: int
    fidelities: np.ndarray | None = None
    F: np.ndarray | None = None
    H: np.ndarray | None = None
    coordinates: np.ndarray | None = None
    errorbars: np.ndarray | None = None
    params: ChannelParams | None = None
    samples: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "povm": self.povm.to_dict(),
            "log_likelihood": self.log_likelihood,
            "chi2_per_dof": self.chi2_per_dof,
            "iterations": self.iterations,
            "fidelities": arr(self.fidelities),
            "F": arr(self.F),
            "H": arr(self.H),
            "coordinates": arr(self.coordinates),
            "errorbars_2sigma": arr(self.errorbars),
            "params": None if self.params is None else asdict(self.params),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _table(records, quorum: ProbeQuorum, opts: ReconstructionOptions):
    outcomes = list(dict.fromkeys(r.outcome for r in records))
    probes = list(quorum.labels)
    m = np.full((len(probes), len(outcomes)), np.nan)
    var = np.zeros_like(m)
    for r in records:
        i, j = probes.index(r.probe), outcomes.index(r.outcome)
        m[i, j] = r.mean
        n = len(r.trace)
        var[i, j] = np.var(r.trace, ddof=1) / n if n > 1 else 0.0
    if np.isnan(m).any():
        raise TomographyError("records do not cover every (probe, outcome) pair")
    floor = (opts.rel_error_floor * np.max(m)) ** 2
    return outcomes, m, np.maximum(var, floor)


def _clip_psd(els: np.ndarray) -> np.ndarray:
    if els.shape[1] == 2:
        return _clip_psd_2x2(els)
    lam, v = np.linalg.eigh(els)
    return (v * np.clip(lam, 0.0, None)[:, None, :]) @ np.swapaxes(v.conj(), 1, 2)


def _clip_psd_2x2(els: np.ndarray) -> np.ndarray:
    # closed form: if lam_min < 0 keep lam_max on its eigenprojector (E - lam_min I)/(lam_max - lam_min)
    a, dd = els[:, 0, 0].real, els[:, 1, 1].real
    half = 0.5 * (a + dd)
    rad = np.sqrt(0.25 * (a - dd) ** 2 + np.abs(els[:, 0, 1]) ** 2)
    lo, hi = half - rad, half + rad
    out = np.array(els)
    neg = lo < 0
    if np.any(neg):
        eye = np.eye(2)
        gap = np.where(rad > 0, 2 * rad, 1.0)
        proj = (els - lo[:, None, None] * eye) / gap[:, None, None]
        proj = np.where((rad > 0)[:, None, None], proj, 0.5 * eye)
        clipped = np.clip(hi, 0.0, None)[:, None, None] * proj
        out[neg] = clipped[neg]
    return out


def project_povm(els: np.ndarray, tol: float = 1e-13, max_iter: int = 10_000) -> np.ndarray:
    """Euclidean projection onto {E_k >= 0, sum_k E_k = I} by Dykstra's alternating scheme.

    Alternates eigenvalue clipping of every element with the completeness
    correction E_k -> E_k - (sum_j E_j - I)/n, carrying Dykstra's increment
    for the clipping step so the limit is the exact nearest POVM.
    """
    n, d = els.shape[0], els.shape[1]
    eye = np.eye(d)
    x = np.array(els, dtype=complex)
    inc = np.zeros_like(x)
    for _ in range(max_iter):
        y = x + inc
        c = _clip_psd(y)
        inc = y - c
        x_new = c - (c.sum(axis=0) - eye)[None] / n
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        x = x_new
    else:
        raise TomographyError("POVM projection did not converge")
    x = _clip_psd(x)
    # remove the last rounding-level completeness defect
    s = x.sum(axis=0)
    ls, vs = np.linalg.eigh(s)
    s_isqrt = (vs * ls**-0.5) @ vs.conj().T
    x = s_isqrt @ x @ s_isqrt
    return 0.5 * (x + np.swapaxes(x.conj(), 1, 2))


def _log_likelihood(els, rho, m, w):
    pred = np.real(np.einsum("sij,kji->sk", rho, els))
    r = m - pred
    return -0.5 * float(np.sum(w * r * r)), r


def element_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """(Tr sqrt(sqrt(A) B sqrt(A)))^2 / (Tr A Tr B) for positive operators."""
    sa = sqrtm(a)
    val = np.real(np.trace(sqrtm(sa @ b @ sa))) ** 2
    return float(min(val / (np.real(np.trace(a)) * np.real(np.trace(b))), 1.0))


def reconstruct_povm(records: list[IntensityRecord], quorum: ProbeQuorum,
                     opts: ReconstructionOptions | None = None, truth: Povm | None = None) -> TomographyResult:
    """Gaussian-likelihood POVM fit under positivity and completeness.

    Start from the weighted linear inversion, then run accelerated projected
    gradient ascent with the exact Euclidean projection onto the POVM set
    (see :func:`project_povm`). Converged when the
    log-likelihood moves by less than ``tol`` (relative) over ``window``
    iterations.
    """
    opts = opts or ReconstructionOptions()
    quorum.require_complete()
    outcomes, m, var = _table(records, quorum, opts)
    w = 1.0 / var
    rho = quorum.states
    d = rho.shape[1]
    a = rho.reshape(len(rho), -1).conj()  # Tr[rho E] = a @ vec(E)

    els = []
    lips = []
    for k in range(len(outcomes)):
        sw = np.sqrt(w[:, k])
        vec = np.linalg.lstsq(a * sw[:, None], m[:, k] * sw, rcond=None)[0]
        els.append(vec.reshape(d, d))
        lips.append(np.linalg.eigvalsh((a.conj().T * w[:, k]) @ a)[-1])
    els = project_povm(np.array(els))
    step = opts.step_scale / np.array(lips)

    ll, resid = _log_likelihood(els, rho, m, w)
    trail = [ll]
    ref, momentum = els, 1.0
    it = 0
    for it in range(1, opts.max_iterations + 1):
        _, r_ref = _log_likelihood(ref, rho, m, w)
        grad = np.einsum("sk,sij->kij", w * r_ref, rho)
        cand = project_povm(ref + step[:, None, None] * grad)
        ll_c, resid_c = _log_likelihood(cand, rho, m, w)
        if ll_c < ll:
            if momentum == 1.0:
                # a plain projected step no longer improves: stationary up to rounding
                break
            # restart the momentum when it overshoots
            ref, momentum = els, 1.0
            continue
        nxt = 0.5 * (1 + np.sqrt(1 + 4 * momentum**2))
        ref = cand + ((momentum - 1) / nxt) * (cand - els)
        momentum = nxt
        els, ll, resid = cand, ll_c, resid_c
        trail.append(ll)
        if len(trail) > opts.window and trail[-1] - trail[-1 - opts.window] <= opts.tol * max(1.0, abs(ll)):
            break
    else:
        raise TomographyError(
            f"reconstruction not converged after {opts.max_iterations} iterations; "
            f"log-likelihood change over last {opts.window}: {trail[-1] - trail[-1 - opts.window]:.3e}"
        )
    n_params = len(outcomes) * d * d - d * d
    dof = max(m.size - n_params, 1)
    chi2 = float(np.sum(w * resid**2)) / dof
    povm = Povm(els, tuple(outcomes), "reconstructed")
    fids = None
    if truth is not None:
        order = [truth.labels.index(o) for o in outcomes]
        fids = np.array([element_fidelity(truth.elements[j], e) for j, e in zip(order, els)])
    return TomographyResult(povm, ll, chi2, it, fids)


def fisher_coordinates(povm: Povm, params: ChannelParams):
    """F, H and the normalized variance coordinates (x, y) for the equatorial qubit probe."""
    diff = qubit_with_derivatives(np.pi / 2, params.phi, params.delta)
    F = classical_fi_discrete(diff, povm)
    H = qfi_closed_form_qubit(np.pi / 2, params.delta)
    rep = tradeoff_report(F, H)
    return F, H, np.array([rep.var_phi_norm, rep.var_delta_norm])


def monte_carlo_errorbars(records: list[IntensityRecord], quorum: ProbeQuorum, n_resamples: int,
                          params: ChannelParams, rng: np.random.Generator,
                          opts: ReconstructionOptions | None = None, truth: Povm | None = None) -> TomographyResult:
    """Reconstruct, then redraw every trace from its empirical drift model and refit ``n_resamples`` times.

    Error bars are twice the standard deviation of the resampled (x, y).
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    base = reconstruct_povm(records, quorum, opts, truth)
    base.F, base.H, base.coordinates = fisher_coordinates(base.povm, params)
    base.params = params
    samples = np.empty((n_resamples, 2))
    for i, child in enumerate(rng.spawn(n_resamples)):
        fresh = []
        for r in records:
            n = len(r.trace)
            sd = r.relative_sd
            drift = child.normal(0.0, sd, size=n) if sd > 0 else np.zeros(n)
            fresh.append(IntensityRecord.from_trace(r.probe, r.outcome, np.maximum(r.mean * (1 + drift), 0.0)))
        res = reconstruct_povm(fresh, quorum, opts)
        samples[i] = fisher_coordinates(res.povm, params)[2]
    base.samples = samples
    base.errorbars = 2.0 * np.std(samples, axis=0, ddof=1)
    return base


# Figure-3 style scan


@dataclass(frozen=True)
class ScanRow:
    k: float
    x: float
    y: float
    xerr: float
    yerr: float
    phase_offset_deg: float


def tomography_scan(ks, v1: float, v2: float, delta: float, phase_offset_deg: float, shots: int,
                    fluctuation_sd: float, n_resamples: int, rng: np.random.Generator,
                    quorum: ProbeQuorum | None = None) -> list[ScanRow]:
    """Reconstruct the tunable four-outcome POVM at each k and place it in the (x, y) plane."""
    quorum = quorum or ProbeQuorum.default()
    params = ChannelParams(np.pi / 2 + np.deg2rad(phase_offset_deg), delta)
    rows = []
    for k, child in zip(ks, rng.spawn(len(ks))):
        truth = sagnac_povm(SagnacPovmSpec(float(k), v1, v2))
        recs = simulate_experiment(truth, quorum, shots, fluctuation_sd, child)
        res = monte_carlo_errorbars(recs, quorum, n_resamples, params, child)
        rows.append(ScanRow(float(k), *map(float, res.coordinates), *map(float, res.errorbars),
                            float(phase_offset_deg)))
    return rows


def scan_csv(rows: list[ScanRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "x", "y", "xerr", "yerr", "phase_offset_deg"])
    for r in rows:
        w.writerow([repr(r.k), repr(r.x), repr(r.y), repr(r.xerr), repr(r.yerr), repr(r.phase_offset_deg)])
    return buf.getvalue()


# maximum-likelihood estimation of (phi, delta)


PHI_RANGE = (0.0, np.pi)
DELTA_RANGE = (0.0, 1.5)


class OutcomeModel:
    """Outcome probabilities and their (phi, delta) derivatives for a probe and a measurement."""

    def __init__(self, probe, meas, bins: int = 16, sub: int = 4):
        self.probe = probe
        self.meas = meas
        if isinstance(meas, ContinuousMeasurement):
            if not isinstance(probe, TwoModeState):
                raise TypeError("continuous measurements need a two-mode probe")
            nmax = probe.cutoff.nmax
            half = float(np.sqrt(2.0 * nmax) + 4.0)
            edges = np.linspace(-half, half, bins + 1)
            # sub-point Gauss rule inside every bin; mass outside the box is below 1e-7
            xs, ws = [], []
            for lo, hi in zip(edges[:-1], edges[1:]):
                x, w = _gauss_legendre(sub, float(lo), float(hi))
                xs.append(x)
                ws.append(w)
            xs, ws = np.array(xs), np.array(ws)
            xx = np.repeat(xs[:, None, :, None], bins, 1)
            pp = np.repeat(xs[None, :, None, :], bins, 0)
            xx, pp = np.broadcast_arrays(xx, pp)
            self._x, self._p = xx.ravel(), pp.ravel()
            self._w = (ws[:, None, :, None] * ws[None, :, None, :]).ravel()
            self._nbins = bins * bins
            self._sub = sub * sub

    def evaluate(self, phi: float, delta: float) -> tuple[np.ndarray, np.ndarray]:
        diff = self._diff(phi, delta)
        if isinstance(self.meas, ContinuousMeasurement):
            vals = self.meas.linear_response((diff.rho, diff.d_phi, diff.d_delta), self._x, self._p)
            binned = [np.sum((v * self._w).reshape(self._nbins, self._sub), axis=1) for v in vals]
            p, d1, d2 = binned
            total = p.sum()
            return p / total, np.stack([d1, d2]) / total
        els = self.meas.elements
        p = np.real(np.einsum("kij,ji->k", els, diff.rho))
        dp = np.stack([np.real(np.einsum("kij,ji->k", els, d)) for d in diff.derivatives])
        return p, dp

    def _diff(self, phi: float, delta: float) -> DifferentiatedState:
        if isinstance(self.probe, QubitProbe):
            return qubit_with_derivatives(self.probe.theta, phi, delta)
        return encode_with_derivatives(self.probe, ChannelParams(phi, delta))

    def fisher(self, phi: float, delta: float) -> np.ndarray:
        p, dp = self.evaluate(phi, delta)
        return outcome_fisher(p, dp)


@dataclass
class MleReport:
    truth: tuple[float, float]
    M: int
    estimates: np.ndarray = field(repr=False)
    covariance: np.ndarray
    fisher: np.ndarray
    cr_covariance: np.ndarray
    var_times_mf: np.ndarray
    ratio_to_cr: np.ndarray
    offdiag_z: float
    boundary_trials: list[int]

    @property
    def trials(self) -> int:
        return len(self.estimates)

    def to_dict(self) -> dict:
        d = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        d["boundary_count"] = len(self.boundary_trials)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _loglik_grad(model: OutcomeModel, counts, theta):
    p, dp = model.evaluate(*theta)
    p = np.maximum(p, P_FLOOR)
    return float(counts @ np.log(p)), dp @ (counts / p)


def _reflected_grad(model, counts, theta):
    # the likelihood depends on delta only through delta^2, so negative delta mirrors positive
    if theta[1] >= 0:
        return _loglik_grad(model, counts, theta)[1]
    g = _loglik_grad(model, counts, np.array([theta[0], -theta[1]]))[1]
    return g * np.array([1.0, -1.0])


def maximize_likelihood(model: OutcomeModel, counts: np.ndarray, start, h: float = 1e-5,
                        max_iter: int = 60) -> tuple[np.ndarray, bool]:
    """Newton ascent with a central-difference Hessian; returns the estimate and a Delta=0 boundary flag."""
    theta = np.array(start, dtype=float)
    ll, g = _loglik_grad(model, counts, theta)
    for _ in range(max_iter):
        hess = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            hess[:, j] = (_reflected_grad(model, counts, theta + e) - _reflected_grad(model, counts, theta - e)) / (2 * h)
        hess = 0.5 * (hess + hess.T)
        try:
            lam = np.linalg.eigvalsh(hess)
            direction = -np.linalg.solve(hess, g) if lam[-1] < 0 else g / max(np.abs(lam).max(), 1.0)
        except np.linalg.LinAlgError:
            direction = g / max(np.abs(g).max(), 1.0)
        t = 1.0
        while t > 1e-8:
            cand = theta + t * direction
            cand[1] = max(cand[1], 0.0)
            ll_c, g_c = _loglik_grad(model, counts, cand)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            break
        moved = np.max(np.abs(cand - theta))
        theta, ll, g = cand, ll_c, g_c
        if moved < 1e-10:
            break
    if 0.0 < theta[1] < 1e-4:
        # delta = 0 is always stationary (the likelihood is even in delta); take
        # it when it is at least as good as the nearby iterate
        edge = np.array([theta[0], 0.0])
        ll_e, g_e = _loglik_grad(model, counts, edge)
        if ll_e >= ll:
            theta, ll, g = edge, ll_e, g_e
    at_boundary = theta[1] <= 1e-8 and g[1] <= 1e-9 * max(1.0, abs(ll))
    return theta, bool(at_boundary)


def mle_parameter_simulation(probe, meas, M: int, trials: int, rng: np.random.Generator,
                             params: ChannelParams | None = None, grid: int = 60,
                             bins: int = 16) -> MleReport:
    """Monte-Carlo of the maximum-likelihood estimator of (phi, delta) from M outcomes per trial.

    Each trial draws multinomial counts, scans a ``grid`` x ``grid`` lattice
    over (0, pi) x [0, 1.5] and polishes the best node with Newton steps.
    Continuous measurements are binned on a ``bins`` x ``bins`` grid.
    """
    if isinstance(probe, QubitProbe):
        truth = (probe.phi, probe.delta)
    elif params is not None:
        truth = (params.phi, params.delta)
    else:
        raise ValueError("a two-mode probe needs the true ChannelParams")
    if M < 1 or trials < 2:
        raise ValueError("need M >= 1 and trials >= 2")
    model = OutcomeModel(probe, meas, bins=bins)
    p_true, _ = model.evaluate(*truth)
    p_true = np.clip(p_true, 0.0, None)
    p_true = p_true / p_true.sum()
    F = model.fisher(*truth)

    phis = PHI_RANGE[0] + (np.arange(grid) + 0.5) * (PHI_RANGE[1] - PHI_RANGE[0]) / grid
    deltas = np.linspace(*DELTA_RANGE, grid)
    nodes = np.array([(a, b) for a in phis for b in deltas])
    logp = np.log(np.maximum(np.array([model.evaluate(a, b)[0] for a, b in nodes]), P_FLOOR))

    estimates = np.empty((trials, 2))
    boundary = []
    for t, child in enumerate(rng.spawn(trials)):
        counts = child.multinomial(M, p_true).astype(float)
        start = nodes[int(np.argmax(logp @ counts))]
        est, flag = maximize_likelihood(model, counts, start)
        estimates[t] = est
        if flag:
            boundary.append(t)
    cov = np.cov(estimates.T)
    cr = np.linalg.inv(M * F)
    n = trials
    se12 = np.sqrt((cov[0, 0] * cov[1, 1] + cov[0, 1] ** 2) / (n - 1))
    return MleReport(truth, M, estimates, cov, F, cr, np.diag(cov) * M * np.diag(F),
                     np.diag(cov) / np.diag(cr), float(cov[0, 1] / se12), boundary)
