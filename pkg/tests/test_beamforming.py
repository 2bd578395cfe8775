import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enhsep.audio_io import Waveform
from enhsep.beamforming import (
    BeamformerWeights,
    BeamformingError,
    SpatialCovariance,
    apply_beamformer,
    diagonal_loading,
    estimate_scm,
    hermitian_solve,
    mpdr,
    mvdr_souden,
    principal_eigenvectors,
    select_reference_channel,
    stack_taps,
    steering_vector,
    wpd,
    wpd_weights,
)
from enhsep.masks import TimeFreqMask
from enhsep.metrics import si_snr
from enhsep.simulate import RirSpec, convolve, generate_rir, synth_speech
from enhsep.stft import ComplexSpectrogram, StftConfig, analyze, synthesize

CFG = StftConfig(16, 4)
D = np.array([1, 1]) / np.sqrt(2)


def _scm(mats):
    mats = np.asarray(mats, dtype=complex)
    if mats.ndim == 2:
        mats = mats[None]
    return SpatialCovariance(mats, np.ones(mats.shape[0]))


def _random_spec(rng, T=40, C=3):
    Y = rng.standard_normal((T, CFG.n_bins, C)) + 1j * rng.standard_normal((T, CFG.n_bins, C))
    return ComplexSpectrogram(Y, CFG, 16000, 100)


def _random_psd(rng, C, F=1):
    A = rng.standard_normal((F, C, C)) + 1j * rng.standard_normal((F, C, C))
    return A @ np.conj(np.swapaxes(A, -1, -2))


def test_scm_outer_product():
    Y = np.zeros((1, CFG.n_bins, 2), complex)
    Y[0, 0] = [1, 1j]
    phi = estimate_scm(ComplexSpectrogram(Y, CFG, 16000, 16), TimeFreqMask(np.ones((1, CFG.n_bins))))
    np.testing.assert_allclose(phi.matrices[0], [[1, -1j], [1j, 1]], atol=1e-7)


def test_scm_zero_mask(rng):
    spec = _random_spec(rng)
    phi = estimate_scm(spec, TimeFreqMask(np.zeros((40, CFG.n_bins))))
    assert not np.any(phi.matrices) and not np.any(phi.mask_mass)


def test_scm_matches_brute_force(rng):
    spec = _random_spec(rng, C=2)
    phi = estimate_scm(spec, TimeFreqMask(np.ones((40, CFG.n_bins))))
    for f in range(CFG.n_bins):
        brute = sum(np.outer(y, y.conj()) for y in spec.values[:, f]) / (40 + 1e-8)
        np.testing.assert_allclose(phi.matrices[f], brute, atol=1e-10)


def test_scm_shape_mismatch(rng):
    with pytest.raises(BeamformingError):
        estimate_scm(_random_spec(rng), TimeFreqMask(np.ones((3, 3))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_scm_hermitian_psd(seed, C):
    r = np.random.default_rng(seed)
    spec = _random_spec(r, T=8, C=C)
    phi = estimate_scm(spec, TimeFreqMask(r.uniform(0, 1, (8, CFG.n_bins)))).matrices
    assert np.max(np.abs(phi - np.conj(np.swapaxes(phi, -1, -2)))) < 1e-10
    loaded = phi + diagonal_loading(phi)[:, None, None] * np.eye(C)
    trace = np.real(np.trace(phi, axis1=1, axis2=2))
    assert np.all(np.linalg.eigvalsh(loaded).min(axis=1) >= -1e-8 * trace)
    assert np.all(np.real(np.einsum("fcc->fc", phi)) >= 0)


def test_steering_rank_one():
    np.testing.assert_allclose(steering_vector(_scm(np.outer(D, D)), 0), [0.70710678, 0.70710678], atol=1e-6)


def test_steering_diagonal():
    np.testing.assert_allclose(steering_vector(_scm(np.diag([2.0, 1.0])), 0), [1, 0], atol=1e-8)


def test_steering_zero_matrix():
    with pytest.raises(BeamformingError):
        steering_vector(_scm(np.zeros((2, 2))), 0)
    np.testing.assert_array_equal(principal_eigenvectors(np.zeros((1, 3, 3), complex), fallback=1)[0], [0, 1, 0])


def test_steering_against_eigh(rng):
    mats = _random_psd(rng, 4, F=50)
    v = principal_eigenvectors(mats)
    lam_max = np.linalg.eigvalsh(mats)[:, -1]
    rayleigh = np.real(np.einsum("fc,fcd,fd->f", v.conj(), mats, v))
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1, atol=1e-12)
    assert np.all(rayleigh >= 0.999999 * lam_max)
    first = v[:, 0]
    assert np.all(np.abs(first.imag) < 1e-12) and np.all(first.real > 0)


def test_mvdr_hand_example():
    w = mvdr_souden(_scm(np.outer(D, D)), _scm(np.eye(2)), 0)
    np.testing.assert_allclose(w.weights[0], [0.5, 0.5], atol=1e-6)
    s = 0.37 - 1.2j
    assert np.conj(w.weights[0]) @ (D * s) == pytest.approx(D[0] * s, abs=1e-6)


def test_mvdr_scale_invariance(rng):
    phi_s, phi_n = _scm(_random_psd(rng, 3, 4)), _scm(_random_psd(rng, 3, 4))
    base = mvdr_souden(phi_s, phi_n, 1).weights
    np.testing.assert_allclose(mvdr_souden(phi_s.scaled(7.5), phi_n, 1).weights, base, atol=1e-8)
    np.testing.assert_allclose(mvdr_souden(phi_s.scaled(0.2), phi_n.scaled(0.2), 1).weights, base, atol=1e-8)


def test_mpdr_identity():
    w = mpdr(_scm(np.eye(2)), np.array([1.0, 0.0]), 0)
    np.testing.assert_allclose(w.weights[0], [1, 0], atol=1e-7)


def test_mpdr_dense_solve():
    phi = np.diag([1.0, 4.0])
    w = mpdr(_scm(phi), D, 0).weights[0]
    loaded = phi + diagonal_loading(phi[None])[0] * np.eye(2)
    x = np.linalg.solve(loaded, D)
    expected = x / (D @ x) * D[0]
    np.testing.assert_allclose(w, expected, atol=1e-12)
    assert w[1] / w[0] == pytest.approx(0.25, rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.data())
def test_mpdr_distortionless(seed, C, data):
    r = np.random.default_rng(seed)
    ref = data.draw(st.integers(0, C - 1))
    phi = _scm(_random_psd(r, C, 6))
    d = r.standard_normal((6, C)) + 1j * r.standard_normal((6, C))
    w = mpdr(phi, d, ref).weights
    response = np.einsum("fc,fc->f", d.conj(), w)  # d^H w
    assert np.max(np.abs(response - np.conj(d[:, ref]))) < 1e-8
    if ref == 0:
        d0 = d * np.conj(d[:, :1]) / np.abs(d[:, :1])  # phase convention: d_0 real positive
        w0 = mpdr(phi, d0, 0).weights
        assert np.max(np.abs(np.einsum("fc,fc->f", w0.conj(), d0) - np.conj(d0[:, 0]))) < 1e-8


def test_wpd_without_taps_is_weighted_mpdr(rng):
    spec = _random_spec(rng, T=60, C=3)
    mask = TimeFreqMask(rng.uniform(0.1, 1, (60, CFG.n_bins)))
    weights, d_stacked = wpd_weights(spec, mask, delay=2, taps=0, ref_channel=1)
    lam = np.maximum(np.mean(mask.values[:, :, None] * np.abs(spec.values) ** 2, axis=-1), 1e-10)
    R = np.einsum("tfa,tfb->fab", spec.values / lam[:, :, None], spec.values.conj())
    d = principal_eigenvectors(estimate_scm(spec, mask).matrices)
    ref = mpdr(_scm(R), d, 1).weights
    np.testing.assert_allclose(weights.weights, ref, atol=1e-8)
    np.testing.assert_allclose(d_stacked, d, atol=1e-12)


def test_wpd_equal_power_dense_oracle(rng):
    spec = _random_spec(rng, T=50, C=2)
    mask = TimeFreqMask(np.ones((50, CFG.n_bins)))
    weights, d = wpd_weights(spec, mask, delay=2, taps=3, power=np.ones((50, CFG.n_bins)))
    stacked = stack_taps(spec.values, 2, 3, include_current=True)
    for f in range(CFG.n_bins):
        Yf = stacked[:, f]
        R = Yf.T @ Yf.conj()
        R = R + (1e-6 * np.real(np.trace(R)) / R.shape[0] + 1e-8) * np.eye(R.shape[0])
        x = np.linalg.lstsq(R, d[f], rcond=None)[0]
        expected = x / np.real(d[f].conj() @ x) * np.conj(d[f, 0])
        np.testing.assert_allclose(weights.weights[f], expected, atol=1e-8)


def test_wpd_distortionless(rng):
    spec = _random_spec(rng, T=50, C=3)
    mask = TimeFreqMask(rng.uniform(0, 1, (50, CFG.n_bins)))
    w, d = wpd_weights(spec, mask, delay=3, taps=4)
    assert np.max(np.abs(np.einsum("fc,fc->f", w.weights.conj(), d) - np.conj(d[:, 0]))) < 1e-8


def test_wpd_anechoic_single_source():
    fs, n = 16000, 24000
    x = synth_speech(n, fs, seed=11)
    rirs = generate_rir(RirSpec((5, 4, 3), (2.0, 3.0, 1.5), [(3.0, 2.0, 1.2), (3.1, 2.0, 1.2)], t60=0.0))
    mix = np.concatenate([convolve(Waveform(x, fs), h).data for h in rirs])
    cfg = StftConfig()
    spec = analyze(Waveform(mix, fs), cfg)
    out = synthesize(wpd(spec, TimeFreqMask(np.ones(spec.shape[:2])), 3, 5, 0)).data[0]
    assert si_snr(out, mix[0]) > 30


def test_wpd_too_short(rng):
    spec = _random_spec(rng, T=5, C=2)
    with pytest.raises(BeamformingError):
        wpd_weights(spec, TimeFreqMask(np.ones((5, CFG.n_bins))), delay=3, taps=2)


def test_apply_beamformer_examples(rng):
    spec = _random_spec(rng, C=3)
    sel = np.zeros((CFG.n_bins, 3), complex)
    sel[:, 0] = 1
    np.testing.assert_array_equal(apply_beamformer(BeamformerWeights(sel), spec).values[:, :, 0], spec.values[:, :, 0])
    assert not np.any(apply_beamformer(BeamformerWeights(np.zeros_like(sel)), spec).values)
    w = rng.standard_normal((CFG.n_bins, 3)) + 1j * rng.standard_normal((CFG.n_bins, 3))
    out = apply_beamformer(BeamformerWeights(w), spec).values[:, :, 0]
    for t in range(0, 40, 7):
        for f in range(CFG.n_bins):
            assert abs(out[t, f] - np.vdot(w[f], spec.values[t, f])) < 1e-12
    with pytest.raises(BeamformingError):
        apply_beamformer(BeamformerWeights(w[:, :2]), spec)


def test_hermitian_solve_matrix_rhs(rng):
    A = _random_psd(rng, 3, 2)
    B = rng.standard_normal((2, 3, 4)) + 0j
    X = hermitian_solve(A, B)
    loaded = A + diagonal_loading(A)[:, None, None] * np.eye(3)
    np.testing.assert_allclose(loaded @ X, B, atol=1e-9)


def test_select_reference_channel():
    phi_s = _scm(np.diag([1.0, 5.0, 2.0]))
    phi_n = _scm(np.eye(3))
    assert select_reference_channel(phi_s, phi_n) == 1


def test_stack_taps_layout(rng):
    Y = rng.standard_normal((6, 2, 2))
    out = stack_taps(Y, delay=2, taps=2)
    assert out.shape == (6, 2, 4)
    np.testing.assert_array_equal(out[3, :, :2], Y[1])
    np.testing.assert_array_equal(out[3, :, 2:], Y[0])
    assert not np.any(out[:2])
