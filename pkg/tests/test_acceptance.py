"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import itertools
import json

import numpy as np

from enhsep.audio_io import Waveform
from enhsep.beamforming import estimate_scm, mpdr, principal_eigenvectors, wpd_weights
from enhsep.cli import main
from enhsep.config import load_config
from enhsep.corpus import simulate_utterance
from enhsep.dereverb import WpeConfig, WpeTrace, apply_prediction_filter, wpe
from enhsep.masks import TimeFreqMask, apply_mask, compute_oracle_masks
from enhsep.metrics import bss_eval, perm_wer, si_snr
from enhsep.objectives import mixit_loss, pit_resolve
from enhsep.pipeline import enhance_signals
from enhsep.simulate import RirSpec, generate_rir, schroeder_decay_time, speed_perturb, synth_speech
from enhsep.stft import StftConfig, analyze, synthesize
from enhsep.stoi import stoi
from oracles import brute_wer, dense_bss_eval

FS = 16000


def test_1_stft_perfect_reconstruction(accept):
    configs = [StftConfig(512, 128, "hann"), StftConfig(256, 64, "hann"),
               StftConfig(512, 256, "sqrt_hann"), StftConfig(1024, 256, "sqrt_hann")]
    r = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        x = r.standard_normal(int(r.integers(2000, 20000))) * r.uniform(0.01, 10)
        for cfg in configs:
            back = synthesize(analyze(Waveform(x, FS), cfg)).data[0]
            worst = max(worst, np.max(np.abs(back - x)) / np.max(np.abs(x)))
    ok = accept(1, worst < 1e-6, f"STFT roundtrip worst relative error {worst:.2e} (< 1e-6) over 100 x 4 configs")
    assert ok


def test_2_oracle_mask_sdr(accept):
    n = 4 * FS
    cfg = StftConfig()
    sdr = {"IRM": [], "IBM": []}
    for u in range(20):
        s1 = synth_speech(n, FS, 2 * u + 1)
        s2 = synth_speech(n, FS, 2 * u + 2)
        s2 *= np.sqrt(np.mean(s1**2) / np.mean(s2**2))  # 0 dB
        Y = analyze(Waveform(s1 + s2, FS), cfg)
        S = [analyze(Waveform(s, FS), cfg) for s in (s1, s2)]
        for kind in sdr:
            ests = [synthesize(apply_mask(Y, m)).data[0] for m in compute_oracle_masks(S, Y, kind)]
            sdr[kind].append(np.mean(bss_eval(ests, [s1, s2], 512).sdr))
    irm, ibm = np.mean(sdr["IRM"]), np.mean(sdr["IBM"])
    ok = accept(2, irm >= 10 and ibm >= 10, f"oracle mask SDR IRM {irm:.2f} dB, IBM {ibm:.2f} dB (>= 10) on 20 mixtures")
    assert ok


def test_3_mvdr_improvement_and_distortionless(accept):
    sim = dict(load_config()["simulate"], num_speakers=1, noise="point", snr=0.0, t60=0.15,
               room=[6.0, 5.0, 3.0], num_mics=2, mic_spacing=0.1, source_distance=[1.0, 1.8], duration=4.0)
    stft = StftConfig(1024, 256)
    gains, worst = [], 0.0
    for i in range(20):
        u = simulate_utterance(i, 0, sim)
        ref = u.sources[0].data[0]
        out = enhance_signals(u.mixture, u.sources, u.noise, ["mask:IRM", "mvdr"], stft)[0].data[0]
        gains.append(si_snr(out, ref) - si_snr(u.mixture.data[0], ref))

        spec = analyze(u.mixture, stft)
        S = [analyze(u.sources[0], stft), analyze(u.noise, stft)]
        m = TimeFreqMask(np.clip(compute_oracle_masks(S, spec.channel(0), "IRM")[0].values, 0, 1))
        d = principal_eigenvectors(estimate_scm(spec, m).matrices, fallback=0)
        w = mpdr(estimate_scm(spec, TimeFreqMask(np.ones(m.shape))), d, 0).weights
        worst = max(worst, np.max(np.abs(np.einsum("fc,fc->f", w.conj(), d) - np.conj(d[:, 0]))))
        ww, dd = wpd_weights(spec, m, 3, 5, 0)
        worst = max(worst, np.max(np.abs(np.einsum("fc,fc->f", ww.weights.conj(), dd) - np.conj(dd[:, 0]))))
    mean_gain = float(np.mean(gains))
    ok = accept(3, mean_gain >= 8 and worst < 1e-8,
                f"MVDR SI-SNR gain {mean_gain:.2f} dB (>= 8, min {min(gains):.2f}); "
                f"max |w^H d - conj(d_ref)| {worst:.1e} (< 1e-8)")
    assert ok


def _dlr(h, onset):
    cut = onset + int(0.05 * FS)
    return 10 * np.log10(np.sum(h[:cut] ** 2) / np.sum(h[cut:] ** 2))


def test_4_wpe_dereverberation(accept):
    sim = dict(load_config()["simulate"], num_speakers=1, noise="none", t60=0.5, room=[9.0, 8.0, 8.0],
               num_mics=2, mic_spacing=0.1, source_distance=[1.0, 2.0], duration=4.0)
    cfg, stft = WpeConfig(taps=10, delay=3, iterations=3), StftConfig()
    improvements, monotone = [], True
    for i in range(10):
        u = simulate_utterance(i, 0, sim)
        trace = WpeTrace()
        wpe(analyze(u.mixture, stft), cfg, trace)
        monotone &= all(np.all(a <= b * (1 + 1e-9) + 1e-12) for a, b in zip(trace.after, trace.before))
        # effective impulse response: the estimated filter applied to the true RIRs
        r = u.meta["rirs"][0]
        spec = RirSpec(tuple(r["room"]), tuple(r["source"]), [tuple(m) for m in r["mics"]], r["t60"], r["max_order"], FS)
        h = np.pad(np.stack([w.data[0] for w in generate_rir(spec)]), ((0, 0), (0, 2000)))
        eff = synthesize(apply_prediction_filter(analyze(Waveform(h, FS), stft), trace.filter, cfg)).data[0]
        onset = int(np.argmax(np.abs(h[0])))
        improvements.append(_dlr(eff, onset) - _dlr(h[0], onset))
    ok = accept(4, min(improvements) > 0 and monotone,
                f"WPE direct-to-late gain min {min(improvements):.2f} dB / mean {np.mean(improvements):.2f} dB "
                f"(> 0 on 10 utterances); objective non-increasing on every bin: {monotone}")
    assert ok


def test_5_speed_perturbation(accept):
    N = 32000
    x = np.sin(2 * np.pi * 1000 * np.arange(N) / FS)
    worst_len, worst_freq = 0, 0.0
    for factor in (0.9, 1.0, 1.1):
        y = speed_perturb(Waveform(x, FS), factor).data[0]
        worst_len = max(worst_len, abs(len(y) - round(N / factor)))
        spec = np.abs(np.fft.rfft(y * np.hanning(len(y))))
        peak = np.argmax(spec) * FS / len(y)
        worst_freq = max(worst_freq, abs(peak / (1000 * factor) - 1))
    ok = accept(5, worst_len <= 2 and worst_freq < 0.01,
                f"speed perturbation length error {worst_len} samples (<= 2), frequency error {worst_freq:.2%} (< 1%)")
    assert ok


def test_6_oracle_equivalence(accept):
    r = np.random.default_rng(6)
    pit_ok = True
    for _ in range(1000):
        S = int(r.integers(1, 6))
        L = r.standard_normal((S, S))
        best = min(sum(L[i, p[i]] for i in range(S)) for p in itertools.permutations(range(S)))
        pit_ok &= abs(pit_resolve(L).value - best / S) < 1e-12

    mixit_ok = True
    for _ in range(100):
        M = int(r.integers(2, 5))
        ests = r.standard_normal((M, 128))
        mixes = r.standard_normal((2, 128))
        brute = min(
            0.5 * sum(-si_snr(ests[np.array(a) == j].sum(axis=0), mixes[j]) for j in (0, 1))
            for a in itertools.product((0, 1), repeat=M)
        )
        mixit_ok &= abs(mixit_loss(list(ests), list(mixes)).value - brute) < 1e-9

    wer_ok = True
    vocab = list("abcde")
    for _ in range(200):
        S = int(r.integers(1, 5))
        gen = lambda: " ".join(r.choice(vocab, int(r.integers(0, 6))))  # noqa: E731
        hyps, refs = [gen() for _ in range(S)], [gen() for _ in range(S)]
        errors, perm = brute_wer(hyps, refs)
        res = perm_wer(hyps, refs)
        wer_ok &= res.errors == errors and res.permutation == perm

    bss_err = 0.0
    for _ in range(30):
        S, L, N = int(r.integers(1, 4)), int(r.integers(1, 9)), int(r.integers(64, 513))
        refs = r.standard_normal((S, N))
        ests = r.standard_normal((S, S)) @ refs + 0.3 * r.standard_normal((S, N))
        res = bss_eval(list(ests), list(refs), L)
        table, _ = dense_bss_eval(list(ests), refs, L)
        ours = np.stack([res.sdr, res.sir, res.sar], axis=1)
        finite = table < 100
        bss_err = max(bss_err, float(np.max(np.abs(ours[finite] - table[finite]), initial=0.0)))
    ok = accept(6, pit_ok and mixit_ok and wer_ok and bss_err < 1e-6,
                f"PIT {pit_ok}, MixIT {mixit_ok}, perm-WER {wer_ok}, BSS-eval max deviation {bss_err:.1e} dB (< 1e-6)")
    assert ok


def test_7_metric_identities(accept):
    r = np.random.default_rng(7)
    scale_err = sdr_err = 0.0
    for _ in range(50):
        ref = r.standard_normal(1000)
        ref -= ref.mean()
        est = r.uniform(0.1, 2) * ref + r.standard_normal(1000)
        est -= est.mean()
        base = si_snr(est, ref)
        scale_err = max(scale_err, abs(si_snr(r.uniform(1e-3, 1e3) * est, ref) - base))
        sdr_err = max(sdr_err, abs(bss_eval([est], [ref], 1).sdr[0] - base))
    x = synth_speech(3 * FS, FS, 1)
    self_score = stoi(x, x, FS)
    scores = []
    noise = r.standard_normal(len(x))
    noise *= np.sqrt(np.mean(x**2) / np.mean(noise**2))
    for snr in (20, 0, -10):
        scores.append(stoi(x + noise * 10 ** (-snr / 20), x, FS))
    decreasing = scores[0] > scores[1] > scores[2]
    ok = accept(7, scale_err < 1e-9 and sdr_err < 1e-6 and self_score >= 0.999 and decreasing,
                f"SI-SNR scale error {scale_err:.1e}, SDR(L=1) vs SI-SNR {sdr_err:.1e}, STOI(x,x) {self_score:.4f}, "
                f"STOI at +20/0/-10 dB {scores[0]:.3f}/{scores[1]:.3f}/{scores[2]:.3f}")
    assert ok


def test_8_pipeline_determinism(accept, tmp_path):
    args = ["run", "--simulate.num_utts=6", "--simulate.duration=1.5", "--simulate.t60=0.2",
            "--simulate.noise=white", "--enhance.chain=[mask:IRM, mvdr]", "--score.filter_len=128", "--seed=3"]
    codes = [main(args + [f"--io.output_dir={tmp_path / d}", f"--jobs={j}"]) for d, j in (("a", 1), ("b", 1), ("c", 8))]
    reports = [(tmp_path / d / "score" / "report.json").read_bytes() for d in "abc"]
    csvs = [(tmp_path / d / "score" / "report.csv").read_bytes() for d in "abc"]
    same = reports[0] == reports[1] == reports[2] and csvs[0] == csvs[1] == csvs[2]
    n = len(json.loads(reports[0])["per_utt"])
    ok = accept(8, codes == [0, 0, 0] and same and n == 6,
                f"reports byte-identical across two runs and --jobs 1 vs 8: {same} ({n} utterances)")
    assert ok


def test_9_rir_geometry(accept):
    r = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        room = r.uniform(3, 10, 3)
        src = tuple(r.uniform(0.1, 0.9, 3) * room)
        mics = [tuple(r.uniform(0.1, 0.9, 3) * room) for _ in range(int(r.integers(1, 5)))]
        for m, h in zip(mics, generate_rir(RirSpec(tuple(room), src, mics, t60=0.0))):
            expected = np.linalg.norm(np.subtract(m, src)) / 343.0 * FS
            worst = max(worst, abs(np.argmax(np.abs(h.data[0])) - expected))
    ratios = {}
    for t60, room in ((0.2, (5.0, 4.0, 3.0)), (0.5, (9.0, 8.0, 8.0))):
        h = generate_rir(RirSpec(room, (1.5, 1.2, 1.4), [(3.4, 2.7, 1.1)], t60=t60))[0].data[0]
        ratios[t60] = schroeder_decay_time(h, FS) / t60
    ok = accept(9, worst <= 1 and all(abs(v - 1) < 0.2 for v in ratios.values()),
                f"direct-path delay error {worst:.2f} samples (<= 1) on 50 rooms; "
                f"Schroeder T60 ratio {ratios[0.2]:.2f} @0.2 s, {ratios[0.5]:.2f} @0.5 s (within 20%)")
    assert ok
