"""Measurement models: discrete POVMs and the double-homodyne continuous measurement."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from phasediff.channels import DifferentiatedState
from phasediff.fockcore import FockCutoff, TwoModeState, beam_splitter_unitary

PSD_TOL = -1e-10
COMPLETENESS_TOL = 1e-10


class InvalidPovmError(ValueError):
    pass


@dataclass(frozen=True)
class Povm:
    elements: np.ndarray
    labels: tuple[str, ...] = ()
    label: str = ""
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        els = np.array(self.elements, dtype=complex)
        if els.ndim != 3 or els.shape[1] != els.shape[2]:
            raise InvalidPovmError(f"POVM elements must be square matrices, got shape {els.shape}")
        els.setflags(write=False)
        object.__setattr__(self, "elements", els)
        labels = tuple(self.labels) or tuple(str(i) for i in range(len(els)))
        if len(labels) != len(els):
            raise InvalidPovmError("one label per element required")
        object.__setattr__(self, "labels", labels)
        self.validate()

    def validate(self) -> None:
        els = self.elements
        herm = np.max(np.abs(els - np.conj(np.swapaxes(els, 1, 2))))
        if herm > 1e-10:
            raise InvalidPovmError(f"POVM element not Hermitian (deviation {herm:.3e})")
        lam_min = float(np.min(np.linalg.eigvalsh(els)))
        if lam_min < PSD_TOL:
            raise InvalidPovmError(f"POVM element not positive (eigenvalue {lam_min:.3e})")
        defect = np.sum(els, axis=0) - np.eye(self.dim)
        err = float(np.max(np.abs(defect)))
        if err > COMPLETENESS_TOL:
            raise InvalidPovmError(f"POVM incomplete: identity defect {err:.3e}\n{np.round(defect, 12)}")

    @property
    def dim(self) -> int:
        return self.elements.shape[1]

    def __len__(self) -> int:
        return len(self.elements)

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("kij,ji->k", self.elements, rho))

    def compress(self, indices) -> Povm:
        """Restrict to a subspace (P Pi P); valid for states supported inside it."""
        idx = np.asarray(indices)
        els = self.elements[:, idx][:, :, idx]
        keep = np.max(np.abs(els), axis=(1, 2)) > 1e-15
        return Povm(els[keep], tuple(l for l, k in zip(self.labels, keep) if k), self.label,
                    self.provenance)

    def bloch_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit Bloch directions and trace weights (trace / total trace) of a qubit POVM."""
        if self.dim != 2:
            raise ValueError("Bloch representation needs a 2-D POVM")
        paulis = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]])
        tr = np.real(np.einsum("kii->k", self.elements))
        vec = np.real(np.einsum("kij,pji->kp", self.elements, paulis))
        norms = np.linalg.norm(vec, axis=1)
        unit = np.divide(vec, norms[:, None], out=np.zeros_like(vec), where=norms[:, None] > 0)
        return unit, tr / tr.sum()

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "labels": list(self.labels),
            "dim": self.dim,
            "elements": [[[[float(z.real), float(z.imag)] for z in row] for row in e] for e in self.elements],
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> Povm:
        els = np.array([[[complex(re, im) for re, im in row] for row in e] for e in doc["elements"]])
        return cls(els, tuple(doc["labels"]), doc.get("label", ""), doc.get("provenance", {}))


def projective(vectors: np.ndarray, labels=(), label: str = "") -> Povm:
    """Rank-1 projectors onto the columns of ``vectors``."""
    v = np.asarray(vectors, dtype=complex)
    return Povm(np.einsum("ik,jk->kij", v, v.conj()), labels, label)


# single-probe qubit measurements

KET_H = np.array([1, 0], dtype=complex)
KET_V = np.array([0, 1], dtype=complex)
KET_D = np.array([1, 1], dtype=complex) / np.sqrt(2)
KET_A = np.array([1, -1], dtype=complex) / np.sqrt(2)
KET_R = np.array([1, 1j], dtype=complex) / np.sqrt(2)
KET_L = np.array([1, -1j], dtype=complex) / np.sqrt(2)


def _proj(ket: np.ndarray) -> np.ndarray:
    return np.outer(ket, ket.conj())


@dataclass(frozen=True)
class EquatorialElementSpec:
    weight: float
    angle: float

    def __post_init__(self):
        # weights above 2 would make the element exceed the identity
        if not 0.0 < self.weight <= 2.0:
            raise ValueError(f"weight must lie in (0, 2], got {self.weight}")

    def element(self) -> np.ndarray:
        e = np.exp(1j * self.angle)
        return (self.weight / 2.0) * np.array([[0.5, 0.5 / e], [0.5 * e, 0.5]], dtype=complex)


def equatorial_povm(specs) -> Povm:
    specs = list(specs)
    n = np.array([s.weight for s in specs])
    chi = np.array([s.angle for s in specs])
    weight_defect = abs(n.sum() - 4.0)
    phase_defect = abs(np.sum(n * np.exp(1j * chi)))
    if weight_defect > COMPLETENESS_TOL or phase_defect > COMPLETENESS_TOL:
        els = np.array([s.element() for s in specs])
        defect = els.sum(axis=0) - np.eye(2)
        raise InvalidPovmError(
            f"equatorial elements do not sum to identity (sum n_j - 4 = {n.sum() - 4.0:.3e}, "
            f"|sum n_j e^(i chi_j)| = {phase_defect:.3e}); residual\n{np.round(defect, 12)}"
        )
    return Povm(np.array([s.element() for s in specs]), tuple(f"chi={s.angle:.6g}" for s in specs),
                "equatorial", {"weights": n.tolist(), "angles": chi.tolist()})


def symmetric_equatorial_povm(phi: float) -> Povm:
    """Four equal-weight equatorial elements at phi + pi/4, 3pi/4, 5pi/4, 7pi/4."""
    return equatorial_povm(EquatorialElementSpec(1.0, phi + q * np.pi / 4) for q in (1, 3, 5, 7))


@dataclass(frozen=True)
class SagnacPovmSpec:
    k: float
    v1: float = 1.0
    v2: float = 1.0

    def __post_init__(self):
        for name in ("k", "v1", "v2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def sagnac_povm(spec: SagnacPovmSpec) -> Povm:
    """Tunable four-outcome measurement: weight k on {D, A}, 1-k on {R, L}.

    Finite visibility v mixes each projector with its orthogonal partner
    with weights (1 + v)/2 and (1 - v)/2.
    """
    k, v1, v2 = spec.k, spec.v1, spec.v2
    d, a, r, l = _proj(KET_D), _proj(KET_A), _proj(KET_R), _proj(KET_L)
    els = [
        k * ((1 + v1) / 2 * d + (1 - v1) / 2 * a),
        k * ((1 + v1) / 2 * a + (1 - v1) / 2 * d),
        (1 - k) * ((1 + v2) / 2 * r + (1 - v2) / 2 * l),
        (1 - k) * ((1 + v2) / 2 * l + (1 - v2) / 2 * r),
    ]
    return Povm(np.array(els), ("1a", "1b", "2a", "2b"), f"sagnac(k={k:.6g})",
                {"k": k, "v1": v1, "v2": v2})


def sigma_x_povm() -> Povm:
    return projective(np.column_stack([KET_D, KET_A]), ("D", "A"), "sigma_x")


def sigma_y_povm() -> Povm:
    return projective(np.column_stack([KET_R, KET_L]), ("R", "L"), "sigma_y")


def random_qubit_povm(rng: np.random.Generator, n_outcomes: int | None = None) -> Povm:
    """Random qubit POVM from positive operators renormalized by S^{-1/2} . S^{-1/2}."""
    n = int(rng.integers(2, 7)) if n_outcomes is None else n_outcomes
    ranks = rng.integers(1, 3, size=n)
    raw = []
    for r in ranks:
        g = rng.normal(size=(2, r)) + 1j * rng.normal(size=(2, r))
        raw.append(g @ g.conj().T)
    raw = np.array(raw)
    s = raw.sum(axis=0)
    lam, v = np.linalg.eigh(s)
    s_isqrt = v @ np.diag(lam**-0.5) @ v.conj().T
    els = np.einsum("ij,kjl,lm->kim", s_isqrt, raw, s_isqrt)
    els = 0.5 * (els + np.conj(np.swapaxes(els, 1, 2)))
    return Povm(els, label="random")


def random_equatorial_povm(rng: np.random.Generator, n_outcomes: int | None = None) -> Povm:
    """Random equatorial POVM: random angles, weights adjusted to close sum n_j e^{i chi_j} = 0."""
    n = int(rng.integers(3, 7)) if n_outcomes is None else n_outcomes
    while True:
        chi = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        w = rng.uniform(0.2, 1.0, size=n)
        # project the weights onto {sum w e^{i chi} = 0} in the least-norm sense
        a = np.vstack([np.cos(chi), np.sin(chi)])
        w = w - a.T @ np.linalg.lstsq(a @ a.T, a @ w, rcond=None)[0]
        if np.all(w > 1e-3):
            w = 4.0 * w / w.sum()
            if np.all(w <= 2.0):
                return equatorial_povm(EquatorialElementSpec(float(x), float(c)) for x, c in zip(w, chi))


# collective two-probe measurement


def bell_measurement() -> Povm:
    """Bell basis {Phi+, Phi-, Psi+, Psi-} on probe1 (x) probe2, each probe in {|N,0>, |0,N>}."""
    s = 1 / np.sqrt(2)
    vecs = np.array([
        [s, 0, 0, s],
        [s, 0, 0, -s],
        [0, s, s, 0],
        [0, s, -s, 0],
    ], dtype=complex).T
    return projective(vecs, ("Phi+", "Phi-", "Psi+", "Psi-"), "bell")


# photon counting


def photon_counting_povm(cutoff: FockCutoff, recombine: bool = False) -> Povm:
    """Projectors on |n_a, n_b>, optionally after a balanced recombination beam splitter."""
    d = cutoff.dim
    labels = tuple(f"{na},{nb}" for na in range(cutoff.nmax + 1) for nb in range(cutoff.nmax + 1))
    els = np.zeros((d, d, d), dtype=complex)
    els[np.arange(d), np.arange(d), np.arange(d)] = 1.0
    if recombine:
        u = beam_splitter_unitary(cutoff)
        els = np.einsum("ji,kjl,lm->kim", u.conj(), els, u)
    return Povm(els, labels, "photon_counting" + ("_recombined" if recombine else ""))


# double homodyne


def hermite_functions(nmax: int, x: np.ndarray) -> np.ndarray:
    """psi_n(x) = pi^{-1/4} (2^n n!)^{-1/2} H_n(x) e^{-x^2/2}, shape (len(x), nmax + 1)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((x.size, nmax + 1))
    out[:, 0] = np.pi**-0.25 * np.exp(-0.5 * x**2)
    if nmax >= 1:
        out[:, 1] = np.sqrt(2.0) * x * out[:, 0]
    for n in range(1, nmax):
        out[:, n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[:, n] - np.sqrt(n / (n + 1)) * out[:, n - 1]
    return out


def quadrature_amplitudes(nmax: int, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Rows <x_k, p_k | n_a, n_b> for outcome points (x_k, p_k), with <p|n> = (-i)^n psi_n(p)."""
    ax = hermite_functions(nmax, x)
    bp = hermite_functions(nmax, p) * ((-1j) ** np.arange(nmax + 1))[None, :]
    n = nmax + 1
    return (ax[:, :, None] * bp[:, None, :]).reshape(len(ax), n * n)


# X on output a and P on output b only form a joint (commuting) readout of
# both input modes when the recombiner is the real balanced splitter
RECOMBINER_PHASE = np.pi / 2


@dataclass(frozen=True)
class ContinuousMeasurement:
    """Balanced recombination, then X quadrature on output a and P quadrature on output b."""

    kind: str = "double_homodyne"

    def __post_init__(self):
        if self.kind != "double_homodyne":
            raise ValueError(f"unsupported continuous measurement {self.kind!r}")

    @staticmethod
    def nmax_of(diff) -> int:
        dim = diff.dim if hasattr(diff, "dim") else diff.shape[0]
        n = int(round(np.sqrt(dim)))
        if n * n != dim:
            raise ValueError(f"dimension {dim} is not a two-mode Fock grid")
        return n - 1

    @staticmethod
    def recombiner(nmax: int) -> np.ndarray:
        return beam_splitter_unitary(FockCutoff(nmax), 0.5, RECOMBINER_PHASE)

    def linear_response(self, matrices, x: np.ndarray, p: np.ndarray) -> list[np.ndarray]:
        """Tr[M |x,p><x,p|] after recombination, for each operator M, at points (x_k, p_k)."""
        matrices = list(matrices)
        nmax = self.nmax_of(matrices[0])
        u = self.recombiner(nmax)
        c = quadrature_amplitudes(nmax, np.ravel(x), np.ravel(p))
        # fold the recombiner into the amplitudes: <x,p| U
        cu = c @ u
        out = []
        for m in matrices:
            out.append(np.real(np.einsum("ki,ki->k", cu @ m, cu.conj())))
        return out

    def outcome_arrays(self, diff: DifferentiatedState, x: np.ndarray, p: np.ndarray):
        return tuple(self.linear_response((diff.rho, diff.d_phi, diff.d_delta), x, p))

    def density(self, matrix: np.ndarray, x, p) -> np.ndarray:
        return self.linear_response([matrix], x, p)[0]


DOUBLE_HOMODYNE = ContinuousMeasurement()


def double_homodyne_density(state: TwoModeState, x, p):
    """p(x, p) of the double-homodyne outcome; x and p broadcast against each other."""
    xb, pb = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(p, dtype=float))
    out = DOUBLE_HOMODYNE.density(state.matrix, xb, pb).reshape(xb.shape)
    return float(out) if out.ndim == 0 else out


# operating points

# at phi = pi/4 the pair probabilities depend on both parameters with
# non-degenerate Fisher information; see bell_tradeoff
BELL_PHASE = np.pi / 4


def pair_probe(phi: float, delta: float) -> DifferentiatedState:
    from phasediff.channels import qubit_with_derivatives

    return qubit_with_derivatives(np.pi / 2, phi, delta).tensor()


def bell_tradeoff(delta: float, phi: float = BELL_PHASE):
    """Per-probe trade-off report of the Bell measurement on two equatorial qubit probes.

    Pair Fisher information is halved before comparing with the single-probe
    QFI. At delta = 0 both matrices are continued to their delta -> 0 limit
    (the delta derivative of the state vanishes exactly there).
    """
    from phasediff.estimation import classical_fi_discrete, delta_zero_limit, qfi_closed_form_qubit, tradeoff_report

    bell = bell_measurement()

    def matrices(d):
        F = classical_fi_discrete(pair_probe(phi, d), bell) / 2.0
        return np.stack([F, qfi_closed_form_qubit(np.pi / 2, d)])

    F, H = delta_zero_limit(matrices) if delta == 0 else matrices(delta)
    return tradeoff_report(F, H, measurement="bell", phi=phi, delta=delta)


def photon_counting_tradeoff(state: TwoModeState, delta: float, eta: float = 1.0, phi: float | None = None,
                             grid: int = 181):
    """Recombined photon counting; with ``phi=None`` the operating phase maximizing x + y is used."""
    import warnings

    from scipy.optimize import minimize_scalar

    from phasediff.channels import ChannelParams, encode_with_derivatives
    from phasediff.estimation import DivergentFisherWarning, classical_fi_discrete, qfi_matrix, tradeoff_report

    povm = photon_counting_povm(state.cutoff, recombine=True)

    def report(ph):
        diff = encode_with_derivatives(state, ChannelParams.symmetric(ph, delta, eta))
        with warnings.catch_warnings():
            # outcomes that vanish at isolated phases are excluded by the phase search
            warnings.simplefilter("ignore", DivergentFisherWarning)
            F = classical_fi_discrete(diff, povm)
        return tradeoff_report(F, qfi_matrix(diff), measurement="photon_counting", phi=ph, delta=delta, eta=eta)

    if phi is not None:
        return report(phi)
    phis = np.linspace(0.0, np.pi, grid)
    vals = [report(p).var_sum for p in phis]
    i = int(np.argmax(vals))
    step = phis[1] - phis[0]
    res = minimize_scalar(lambda p: -report(p).var_sum, bounds=(phis[i] - step, phis[i] + step),
                          method="bounded", options={"xatol": 1e-8})
    best = float(res.x) if -res.fun >= vals[i] else float(phis[i])
    return report(best)
