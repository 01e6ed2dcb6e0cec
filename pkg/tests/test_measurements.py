import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasediff.channels import ChannelParams, encode, qubit_with_derivatives
from phasediff.estimation import bell_crossover_delta, classical_fi_discrete, fisher_matrices, qfi_closed_form_qubit
from phasediff.fockcore import FockCutoff, make_holland_burnett, make_noon
from phasediff.measurements import (
    EquatorialElementSpec,
    InvalidPovmError,
    Povm,
    SagnacPovmSpec,
    bell_measurement,
    bell_tradeoff,
    double_homodyne_density,
    equatorial_povm,
    hermite_functions,
    pair_probe,
    photon_counting_povm,
    photon_counting_tradeoff,
    random_equatorial_povm,
    random_qubit_povm,
    sagnac_povm,
    sigma_x_povm,
    sigma_y_povm,
    symmetric_equatorial_povm,
)


def test_povm_validation():
    with pytest.raises(InvalidPovmError):
        Povm(np.array([np.eye(2)]) * 0.9)
    with pytest.raises(InvalidPovmError):
        Povm(np.array([np.diag([1.2, 0.5]), np.diag([-0.2, 0.5])]))
    with pytest.raises(InvalidPovmError):
        Povm(np.array([[[0.5, 0.3], [0.1, 0.5]], [[0.5, -0.3], [-0.1, 0.5]]]))
    with pytest.raises(InvalidPovmError):
        Povm(np.eye(2))
    with pytest.raises(InvalidPovmError):
        Povm(np.array([np.eye(2)]), ("a", "b"))


def test_povm_elements_are_read_only():
    p = sigma_x_povm()
    with pytest.raises(ValueError):
        p.elements[0, 0, 0] = 1.0


def test_serialization_roundtrip(rng):
    p = random_qubit_povm(rng, 4)
    q = Povm.from_dict(json.loads(p.to_json()))
    assert np.max(np.abs(p.elements - q.elements)) == 0.0
    assert q.labels == p.labels


def test_equatorial_weights():
    with pytest.raises(ValueError):
        EquatorialElementSpec(0.0, 0.0)
    with pytest.raises(ValueError):
        EquatorialElementSpec(2.5, 0.0)
    EquatorialElementSpec(2.0, 0.0)
    with pytest.raises(InvalidPovmError, match="sum n_j"):
        equatorial_povm([EquatorialElementSpec(1.0, 0.0), EquatorialElementSpec(1.0, 1.0)])
    two = equatorial_povm([EquatorialElementSpec(2.0, 0.3), EquatorialElementSpec(2.0, 0.3 + np.pi)])
    assert len(two) == 2


def test_equatorial_bloch_vectors():
    p = symmetric_equatorial_povm(0.2)
    unit, w = p.bloch_vectors()
    assert np.allclose(w, 0.25)
    assert np.allclose(unit[:, 2], 0.0, atol=1e-15)
    angles = np.mod(np.arctan2(unit[:, 1], unit[:, 0]) - 0.2, 2 * np.pi)
    assert np.allclose(np.sort(angles), np.pi / 4 * np.array([1, 3, 5, 7]))
    with pytest.raises(ValueError):
        photon_counting_povm(FockCutoff(1)).bloch_vectors()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_povms_are_valid(seed):
    rng = np.random.default_rng(seed)
    for p in (random_qubit_povm(rng), random_equatorial_povm(rng)):
        assert np.max(np.abs(p.elements.sum(axis=0) - np.eye(2))) < 1e-10
        assert np.min(np.linalg.eigvalsh(p.elements)) > -1e-10


@pytest.mark.parametrize("k", [0.1, 0.3, 0.5, 0.7, 0.9])
@pytest.mark.parametrize("delta", [0.1, 0.25, 0.6])
def test_sagnac_analytic_ratios(k, delta):
    diff = qubit_with_derivatives(np.pi / 2, np.pi / 2, delta)
    rep = fisher_matrices(diff, povm=sagnac_povm(SagnacPovmSpec(k))).report()
    assert rep.ratio_phi == pytest.approx(k, abs=1e-10)
    assert rep.ratio_delta == pytest.approx(1 - k, abs=1e-10)
    assert abs(rep.offdiag) < 1e-12


def test_sagnac_visibility_moves_inside():
    diff = qubit_with_derivatives(np.pi / 2, np.pi / 2, 0.25)
    for k in (0.2, 0.5, 0.8):
        rep = fisher_matrices(diff, povm=sagnac_povm(SagnacPovmSpec(k, 0.965, 0.994))).report()
        assert rep.ratio_phi < k and rep.ratio_delta < 1 - k


def test_sagnac_endpoints_singular():
    diff = qubit_with_derivatives(np.pi / 2, np.pi / 2, 0.25)
    for k in (0.0, 1.0):
        assert fisher_matrices(diff, povm=sagnac_povm(SagnacPovmSpec(k))).report().singular
    with pytest.raises(ValueError):
        SagnacPovmSpec(1.2)


def test_sigma_measurements_are_extremes():
    diff = qubit_with_derivatives(np.pi / 2, np.pi / 2, 0.3)
    rx = fisher_matrices(diff, povm=sigma_x_povm()).report()
    ry = fisher_matrices(diff, povm=sigma_y_povm()).report()
    assert rx.ratio_phi == pytest.approx(1.0) and rx.ratio_delta == pytest.approx(0.0, abs=1e-12)
    assert ry.ratio_phi == pytest.approx(0.0, abs=1e-12) and ry.ratio_delta == pytest.approx(1.0)


def test_bell_basis_orthonormal():
    b = bell_measurement()
    assert np.allclose(b.elements.sum(axis=0), np.eye(4))
    for e in b.elements:
        assert np.allclose(e @ e, e)


def test_bell_pair_probe_is_product():
    d = pair_probe(0.3, 0.2)
    q = qubit_with_derivatives(np.pi / 2, 0.3, 0.2)
    assert np.allclose(d.rho, np.kron(q.rho, q.rho))
    assert np.allclose(d.d_phi, np.kron(q.d_phi, q.rho) + np.kron(q.rho, q.d_phi))


def test_bell_sum_at_zero_diffusion():
    rep = bell_tradeoff(0.0)
    assert rep.sum == pytest.approx(1.5, abs=1e-9)


def test_bell_crossing():
    from scipy.optimize import brentq

    d0 = brentq(lambda d: bell_tradeoff(d).sum - 1.0, 0.3, 0.7, xtol=1e-12)
    assert d0 == pytest.approx(bell_crossover_delta(), abs=1e-8)
    assert bell_tradeoff(0.3).sum > 1 > bell_tradeoff(0.7).sum


def test_bell_pair_fi_below_two_probe_qfi():
    for delta in (0.1, 0.4, 0.8):
        F = classical_fi_discrete(pair_probe(np.pi / 4, delta), bell_measurement())
        H = 2 * qfi_closed_form_qubit(np.pi / 2, delta)
        assert np.linalg.eigvalsh(H - F)[0] > -1e-10


def test_photon_counting_povm():
    c = FockCutoff(2)
    for rec in (False, True):
        p = photon_counting_povm(c, rec)
        assert len(p) == c.dim
        assert np.allclose(p.elements.sum(axis=0), np.eye(c.dim))


def test_photon_counting_on_noon_one():
    rep = photon_counting_tradeoff(make_noon(1, FockCutoff(1)), 0.25)
    assert rep.sum <= 1 + 1e-9
    assert 0 < rep.provenance["phi"] < np.pi


def test_hermite_functions_orthonormal():
    x, w = np.polynomial.hermite.hermgauss(40)
    psi = hermite_functions(6, x) * np.exp(0.5 * x**2)[:, None]
    gram = (psi * w[:, None]).T @ psi
    assert np.allclose(gram, np.eye(7), atol=1e-12)


def test_double_homodyne_density_normalized():
    c = FockCutoff(3)
    for s in (make_noon(3, c), make_holland_burnett(1, c)):
        rho = encode(s, ChannelParams(0.4, 0.2))
        x, w = np.polynomial.legendre.leggauss(120)
        x, w = 9 * x, 9 * w
        dens = double_homodyne_density(rho, x[:, None], x[None, :])
        assert np.min(dens) > -1e-14
        assert np.sum(w[:, None] * w[None, :] * dens) == pytest.approx(1.0, abs=1e-9)
    assert isinstance(double_homodyne_density(make_noon(1, FockCutoff(1)), 0.1, 0.2), float)
