"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict with the measured numbers;
the verdicts are printed together at the end of the session (see conftest).
"""

import warnings

import numpy as np
import pytest

from phasediff.annealer import AnnealConfig, anneal_frontier, fock_sector_problem, pair_problem
from phasediff.channels import ChannelParams, encode_with_derivatives, qubit_with_derivatives
from phasediff.cli import homodyne_rows
from phasediff.estimation import (
    classical_fi_continuous,
    classical_fi_discrete,
    qfi_closed_form_qubit,
    qfi_coherent,
    qfi_matrix,
    qfi_noon,
    tradeoff_report,
)
from phasediff.fockcore import FockCutoff, make_holland_burnett, make_noon, make_split_photon
from phasediff.measurements import (
    DOUBLE_HOMODYNE,
    SagnacPovmSpec,
    bell_tradeoff,
    photon_counting_tradeoff,
    random_equatorial_povm,
    random_qubit_povm,
    sagnac_povm,
    symmetric_equatorial_povm,
)
from phasediff.fockcore import QubitProbe
from phasediff.tomolab import (
    ProbeQuorum,
    fisher_coordinates,
    mle_parameter_simulation,
    monte_carlo_errorbars,
    reconstruct_povm,
    simulate_experiment,
)

VERDICTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[n] = line
    print(line)
    assert ok, line


def test_criterion_01_closed_form_qfi():
    deltas = (0.01, 0.05, 0.1, 0.25, 0.5, 1.0)
    err = max(np.max(np.abs(qfi_matrix(qubit_with_derivatives(np.pi / 2, 0.4, d))
                            - qfi_closed_form_qubit(np.pi / 2, d))) for d in deltas)
    h22_small = qfi_matrix(qubit_with_derivatives(np.pi / 2, 0.4, 1e-4))[1, 1]
    ok = err <= 1e-9 and abs(h22_small - 2.0) < 1e-6
    verdict(1, ok, f"max |H - closed form| = {err:.2e}; H22(1e-4) = {h22_small:.9f}")


def test_criterion_02_scaling_laws():
    err = 0.0
    for n in (1, 2, 3):
        state = make_noon(n, FockCutoff(n))
        for d in (0.01, 0.1, 0.25, 0.5):
            H = qfi_matrix(encode_with_derivatives(state, ChannelParams(0.3, d)))
            err = max(err, float(np.max(np.abs(H - qfi_noon(n, d)))))
    coh = np.array_equal(qfi_coherent(2.5, np.pi / 2, 0.3), 2.5 * qfi_closed_form_qubit(np.pi / 2, 0.3))
    verdict(2, err <= 1e-9 and coh, f"max |H_N00N - N^2 H(N delta)| = {err:.2e}; coherent helper exact: {coh}")


def test_criterion_03_tradeoff_bound():
    rng = np.random.default_rng(3)
    worst, evaluations = 0.0, 0
    povms = [random_equatorial_povm(rng) if i % 2 else random_qubit_povm(rng) for i in range(240)]
    for d in (0.1, 0.25, 0.5):
        for i, povm in enumerate(povms):
            diff = qubit_with_derivatives(np.pi / 2, rng.uniform(0, 2 * np.pi), d)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                F = classical_fi_discrete(diff, povm)
            worst = max(worst, tradeoff_report(F, qfi_closed_form_qubit(np.pi / 2, d)).sum)
            evaluations += 1
    sym = max(abs(tradeoff_report(classical_fi_discrete(qubit_with_derivatives(np.pi / 2, 0.7, d),
                                                        symmetric_equatorial_povm(0.7)),
                                  qfi_closed_form_qubit(np.pi / 2, d)).sum - 1.0) for d in (0.1, 0.25, 0.5))
    single = make_split_photon(FockCutoff(1))
    hom = 0.0
    for d in (0.1, 0.25, 0.5):
        diff = encode_with_derivatives(single, ChannelParams(0.7, d))
        F = classical_fi_continuous(diff, DOUBLE_HOMODYNE)
        hom = max(hom, abs(tradeoff_report(F, qfi_matrix(diff)).sum - 1.0))
    ok = worst <= 1 + 1e-9 and sym <= 1e-10 and hom <= 2e-4
    verdict(3, ok, f"{evaluations} evaluations, max sum {worst:.12f}; symmetric equatorial |sum-1| = {sym:.1e}; "
                   f"double homodyne |sum-1| = {hom:.1e}")


def test_criterion_04_tunable_povm():
    ks = np.round(np.arange(1, 10) * 0.1, 10)
    err, inside = 0.0, True
    for d in (0.1, 0.25, 0.5):
        diff = qubit_with_derivatives(np.pi / 2, np.pi / 2, d)
        H = qfi_closed_form_qubit(np.pi / 2, d)
        for k in ks:
            F = classical_fi_discrete(diff, sagnac_povm(SagnacPovmSpec(k)))
            rep = tradeoff_report(F, H)
            err = max(err, abs(rep.ratio_phi - k), abs(rep.ratio_delta - (1 - k)), abs(F[0, 1]))
            lossy = tradeoff_report(classical_fi_discrete(diff, sagnac_povm(SagnacPovmSpec(k, 0.965, 0.994))), H)
            inside &= lossy.sum < 1 - 1e-6
    diff = qubit_with_derivatives(np.pi / 2, np.pi / 2, 0.25)
    singular = all(tradeoff_report(classical_fi_discrete(diff, sagnac_povm(SagnacPovmSpec(k))),
                                   qfi_closed_form_qubit(np.pi / 2, 0.25)).singular for k in (0.0, 1.0))
    verdict(4, err < 1e-10 and inside and singular,
            f"max deviation from (k, 1-k, F12=0) = {err:.1e}; finite visibility inside: {inside}; "
            f"singular at k=0,1: {singular}")


def test_criterion_05_bell_measurement():
    from scipy.optimize import brentq

    s0 = bell_tradeoff(0.0).sum
    d0 = brentq(lambda d: bell_tradeoff(d).sum - 1.0, 0.3, 0.7, xtol=1e-12)
    ok = abs(s0 - 1.5) <= 1e-9 and abs(d0 - 0.490524) <= 2e-3
    verdict(5, ok, f"sum at delta=0: {s0:.12f}; crossing at delta = {d0:.7f}")


@pytest.mark.slow
def test_criterion_06_collective_annealing():
    res = anneal_frontier(pair_problem(0.25), AnnealConfig(restarts=20, seed=0), 0.25)
    best = res.best_total()
    ok = best.total >= 1.45 and 0.35 <= best.entanglement_weighed <= 0.55
    verdict(6, ok, f"best pair sum {best.total:.4f} (weight {best.weight:g}); "
                   f"weighed entanglement {best.entanglement_weighed:.3f}")


@pytest.mark.slow
def test_criterion_07_holland_burnett_frontier():
    state = make_holland_burnett(3, FockCutoff(6))
    cfg = AnnealConfig(restarts=20, seed=0)
    best = {}
    for d in (0.0, 0.1, 0.25):
        res = anneal_frontier(fock_sector_problem(state, ChannelParams(0.3, d)), cfg, d)
        best[d] = res.best_total().total
    counting = photon_counting_tradeoff(state, 0.25).var_sum
    ok = best[0.0] <= 1 + 2e-3 and best[0.1] > 1.02 and 1 < counting < best[0.25]
    verdict(7, ok, f"annealed max sum: delta=0 {best[0.0]:.5f}, delta=0.1 {best[0.1]:.4f}, "
                   f"delta=0.25 {best[0.25]:.4f}; photon counting at delta=0.25 {counting:.4f}")


@pytest.mark.slow
def test_criterion_08_loss_study():
    c = FockCutoff(6)
    deltas = [0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5]
    etas = [1.0, 0.95, 0.5]
    hb = homodyne_rows(make_holland_burnett(3, c), np.pi / 2, deltas, etas)
    noon = homodyne_rows(make_noon(6, c), np.pi / 2, deltas, etas)
    lossy = [(a, b) for a, b in zip(hb, noon) if a["eta"] < 1]
    margin = min(a["sum"] - b["sum"] for a, b in lossy)
    split = homodyne_rows(make_split_photon(FockCutoff(1)), np.pi / 2, deltas, [1.0])
    split_err = max(abs(r["sum"] - 1.0) for r in split)
    ok = margin >= 0 and split_err <= 2e-4
    verdict(8, ok, f"min (HB(3) - N00N(6)) sum over {len(lossy)} lossy points = {margin:.4f}; "
                   f"split photon |sum-1| = {split_err:.1e}")


def test_criterion_09_phase_optimality():
    worst = 0.0
    for n in (1, 2, 3):
        for state in (make_holland_burnett(n, FockCutoff(2 * n)), make_noon(n, FockCutoff(n))):
            row = homodyne_rows(state, np.pi / 2, [0.0], [1.0])[0]
            worst = max(worst, abs(row["F11"] - row["H11"]))
    verdict(9, worst <= 2e-4, f"max |F11 - H11| at delta=0 = {worst:.1e}")


@pytest.mark.slow
def test_criterion_10_cramer_rao_saturation():
    probe = QubitProbe(np.pi / 2, np.pi / 2, 0.25)
    rep = mle_parameter_simulation(probe, sagnac_povm(SagnacPovmSpec(0.5)), 10_000, 500, np.random.default_rng(0))
    v = rep.var_times_mf
    ok = bool(np.all((0.9 <= v) & (v <= 1.15))) and abs(rep.offdiag_z) <= 3
    verdict(10, ok, f"Var*M*F = [{v[0]:.3f}, {v[1]:.3f}]; off-diagonal z = {rep.offdiag_z:.2f}; "
                    f"boundary hits {len(rep.boundary_trials)}")


@pytest.mark.slow
def test_criterion_11_tomography_pipeline():
    q = ProbeQuorum.default()
    params = ChannelParams(np.pi / 2, 0.25)
    truth = sagnac_povm(SagnacPovmSpec(0.5, 0.965, 0.994))
    clean = reconstruct_povm(simulate_experiment(truth, q, 10, 0.0, np.random.default_rng(1)), q, truth=truth)
    target = fisher_coordinates(truth, params)[2]
    hits = []
    for child in np.random.default_rng(11).spawn(50):
        recs = simulate_experiment(truth, q, 100, 0.02, child)
        res = monte_carlo_errorbars(recs, q, 100, params, child)
        hits.append(bool(np.all(np.abs(res.coordinates - target) <= res.errorbars)))
    coverage = float(np.mean(hits))
    fid = float(np.min(clean.fidelities))
    verdict(11, fid > 0.999 and coverage >= 0.9,
            f"noiseless min element fidelity {fid:.6f}; joint 2-sigma coverage {coverage:.2f} over 50 pipelines")
