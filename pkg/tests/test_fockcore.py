import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasediff.fockcore import (
    CutoffError,
    FockCutoff,
    InvalidStateError,
    QubitProbe,
    TwoModeState,
    annihilation,
    beam_splitter,
    embed_qubit,
    holland_burnett_amplitudes,
    is_path_symmetric,
    make_holland_burnett,
    make_noon,
    make_split_photon,
    qubit_block_indices,
    two_mode_operators,
)

angles = st.floats(0.0, 2 * np.pi, allow_nan=False)
deltas = st.floats(0.0, 2.0, allow_nan=False)


def eq5(theta, phi, delta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    off = c * s * np.exp(-1j * phi - delta**2)
    return np.array([[c**2, off], [np.conj(off), s**2]])


def test_index_is_row_major():
    c = FockCutoff(3)
    assert c.dim == 16
    assert c.index(0, 0) == 0
    assert c.index(0, 3) == 3
    assert c.index(1, 0) == 4
    assert c.index(3, 3) == 15


def test_cutoff_rejects_nonpositive():
    with pytest.raises(ValueError):
        FockCutoff(0)


def test_annihilation_exact():
    a = annihilation(FockCutoff(5)).matrix
    for n in range(1, 6):
        ket = np.zeros(6)
        ket[n] = 1
        out = a @ ket
        expected = np.zeros(6)
        expected[n - 1] = np.sqrt(n)
        assert np.array_equal(out, expected)


def test_noon_small():
    rho = make_noon(1, FockCutoff(1))
    c = rho.cutoff
    ket = np.zeros(4)
    ket[[c.index(1, 0), c.index(0, 1)]] = 1 / np.sqrt(2)
    assert np.allclose(rho.matrix, np.outer(ket, ket), atol=1e-15)
    block = rho.block(qubit_block_indices(1, c))
    assert np.allclose(block, QubitProbe(np.pi / 2).matrix(), atol=1e-15)


def test_noon3_coherence():
    c = FockCutoff(3)
    rho = make_noon(3, c)
    assert rho.matrix[c.index(3, 0), c.index(0, 3)] == pytest.approx(0.5, abs=1e-15)
    assert rho.purity() == pytest.approx(1.0, abs=1e-12)


def test_cutoff_too_small_names_requirement():
    with pytest.raises(CutoffError, match="nmax >= 3"):
        make_noon(3, FockCutoff(2))
    with pytest.raises(CutoffError, match="nmax >= 6"):
        make_holland_burnett(3, FockCutoff(5))


def test_hom_dip():
    c = FockCutoff(2)
    hb1 = make_holland_burnett(1, c)
    p = hb1.probabilities()
    assert p[1, 1] == pytest.approx(0.0, abs=1e-14)
    assert p[2, 0] == pytest.approx(0.5, abs=1e-12)
    assert p[0, 2] == pytest.approx(0.5, abs=1e-12)


def test_hb3_support_and_binomial_oracle():
    c = FockCutoff(6)
    hb = make_holland_burnett(3, c)
    support = {(int(i) // 7, int(i) % 7) for i in hb.support()}
    assert support == {(6, 0), (4, 2), (2, 4), (0, 6)}
    p = hb.probabilities()
    for (ka, kb), pop in holland_burnett_amplitudes(3).items():
        assert p[ka, kb] == pytest.approx(pop, abs=1e-12)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_hb_odd_leak(n):
    hb = make_holland_burnett(n, FockCutoff(2 * n))
    p = hb.probabilities()
    ka = np.arange(2 * n + 1)
    odd = p[ka[ka % 2 == 1], 2 * n - ka[ka % 2 == 1]]
    assert np.max(odd, initial=0.0) < 1e-12


def test_split_photon_is_noon1():
    c = FockCutoff(2)
    sp = make_split_photon(c)
    assert np.array_equal(sp.matrix, make_noon(1, c).matrix)
    assert sp.purity() == pytest.approx(1.0, abs=1e-12)
    assert np.trace(sp.matrix).real == pytest.approx(1.0, abs=1e-12)


def test_beam_splitter_identity_and_inverse():
    c = FockCutoff(4)
    rho = make_holland_burnett(2, c)
    assert np.allclose(beam_splitter(rho, 1.0).matrix, rho.matrix, atol=1e-14)
    there = beam_splitter(rho, 0.5, 0.3)
    back = beam_splitter(there, 0.5, 0.3 + np.pi)
    assert np.max(np.abs(back.matrix - rho.matrix)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0.0, 1.0), phase=angles)
def test_beam_splitter_conserves_spectrum_and_number(t, phase):
    c = FockCutoff(3)
    rho = TwoModeState.fock(c, 2, 1)
    out = beam_splitter(rho, t, phase)
    assert np.trace(out.matrix).real == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(np.linalg.eigvalsh(out.matrix), np.linalg.eigvalsh(rho.matrix), atol=1e-10)
    assert out.mean_photons() == pytest.approx(3.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(theta=st.floats(0.0, np.pi), phi=angles, delta=deltas, n=st.integers(1, 3))
def test_embed_qubit_recovers_probe(theta, phi, delta, n):
    c = FockCutoff(3)
    probe = QubitProbe(theta, phi, delta)
    state = embed_qubit(probe, n, c)
    idx = qubit_block_indices(n, c)
    assert np.max(np.abs(state.block(idx) - eq5(theta, phi, delta))) <= 1e-14
    rest = state.matrix.copy()
    rest[np.ix_(idx, idx)] = 0
    assert not rest.any()


def test_embed_qubit_examples():
    c = FockCutoff(1)
    assert np.allclose(embed_qubit(QubitProbe(np.pi / 2), 1, c).matrix, make_noon(1, c).matrix, atol=1e-15)
    s = embed_qubit(QubitProbe(np.pi / 2, 0.7, 0.4), 1, c)
    assert abs(s.matrix[c.index(1, 0), c.index(0, 1)]) == pytest.approx(np.exp(-0.16) / 2, abs=1e-15)
    pole = embed_qubit(QubitProbe(0.0, 1.3, 0.5), 1, c)
    expected = np.zeros((4, 4))
    expected[c.index(1, 0), c.index(1, 0)] = 1
    assert np.allclose(pole.matrix, expected, atol=1e-15)


def test_qubit_probe_rejects_negative_delta():
    with pytest.raises(ValueError):
        QubitProbe(1.0, 0.0, -0.1)


def test_path_symmetry():
    assert is_path_symmetric(make_holland_burnett(3, FockCutoff(6)))
    assert is_path_symmetric(make_noon(2, FockCutoff(2)))
    assert not is_path_symmetric(TwoModeState.fock(FockCutoff(1), 1, 0))


def test_state_validation():
    c = FockCutoff(1)
    with pytest.raises(InvalidStateError):
        TwoModeState(c, np.eye(4))
    bad = np.diag([1.5, -0.5, 0, 0]).astype(complex)
    with pytest.raises(InvalidStateError, match="positive"):
        TwoModeState(c, bad)
    with pytest.raises(InvalidStateError):
        TwoModeState(c, np.eye(3) / 3)


def test_state_is_immutable():
    rho = make_noon(1, FockCutoff(1))
    with pytest.raises(ValueError):
        rho.matrix[0, 0] = 1


def test_json_round_trip_exact():
    rho = beam_splitter(make_holland_burnett(2, FockCutoff(4)), 0.3, 0.2)
    again = TwoModeState.from_json(rho.to_json())
    assert np.array_equal(again.matrix, rho.matrix)
    assert again.label == rho.label
    assert rho.to_dict()["basis"] == "fock-pair-row-major"


def test_two_mode_operators_commute():
    a, b = two_mode_operators(FockCutoff(3))
    assert np.allclose(a @ b, b @ a)
