"""Acceptance suite: one test per criterion, each printing a single
``CRITERION n ... PASS|FAIL`` line with the measured numbers."""
import time

import numpy as np
import pytest
from scipy.signal import lfilter

from bilateral_enhance.audio_io import AudioBuffer, frame_stream, hann, overlap_add, synth_hrir
from bilateral_enhance.environment import (feature_matrix, gmm_score, gmm_train, majority_vote,
                                           vote_stream)
from bilateral_enhance.environment.vad import Vad, raw_decision
from bilateral_enhance.eval import (distortion_metric, expected_quality,
                                    segmental_snr_improvement, suppression_advantage)
from bilateral_enhance.gain import GainTable, HrtfGain, gain_log_mmse, storage_bits
from bilateral_enhance.pipeline import PipelineConfig, bench_modes, process_file
from bilateral_enhance.snr import Activity, SnrAxes
from bilateral_enhance.spectral import Spectrum, analyze, bark_bands, compute_ipd, synthesize
from bilateral_enhance.synth import modulated_noise, speech_like, white_noise
from bilateral_enhance.tdoa import DelayTracker, gcc_delay, update_tracker
from bilateral_enhance.training import (OptimizerConfig, TrainAccumulator, TrainConfig,
                                        accumulate, accumulate_pair, grad_le, grad_wc, grad_we,
                                        optimize, simulate_pair, solve_we_quasistatic,
                                        total_distortion)

FS = 22050
N = 256


def report(n, ok, detail):
    print(f"\nCRITERION {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# ------------------------------------------------------------------- 1

def test_criterion_01_storage():
    t0 = time.perf_counter()
    got = (storage_bits("double", 60, 70, W=16), storage_bits("per_direction", 60, 70, 13, 16),
           storage_bits("proposed", 60, 70, 13, 16))
    elapsed = time.perf_counter() - t0
    kb = [round(b / 8 / 1024, 4) for b in got]
    ok = got == (134400, 873600, 67408) and elapsed < 1e-3
    report(1, ok, f"bits={got} kB={kb} time={elapsed * 1e6:.1f}us")


# ------------------------------------------------------------------- 2

def _random_acc(rng, model):
    if model == "tdoa":
        acc = TrainAccumulator(SnrAxes(I=4, J=4), "tdoa", 1.0, L=3)
        n = 600
        i, j = rng.integers(0, 4, n), rng.integers(0, 4, n)
        i[:16], j[:16] = np.repeat(np.arange(4), 4), np.tile(np.arange(4), 4)
        d = rng.integers(0, 3, n)
        d[:3] = np.arange(3)
    else:
        acc = TrainAccumulator(SnrAxes(I=3, J=3), "ipd", 1.0, Q=2, band_edges=(0, 1, 2))
        n = 400
        i, j = rng.integers(0, 3, n), rng.integers(0, 3, n)
        i[:9], j[:9] = np.repeat(np.arange(3), 3), np.tile(np.arange(3), 3)
        d = (rng.integers(0, 2, n), rng.integers(0, 2, n))
    accumulate(acc, rng.uniform(0.2, 2, n), rng.uniform(0.2, 2, n), rng.uniform(0.2, 2, n),
               i, j, d)
    G = rng.uniform(0.3, 1.5, acc.ref.shape)
    H = rng.uniform(0.5, 1.5, acc.direction_shape)
    return acc, G, H


def _fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_criterion_02_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    grads = {"WE": grad_we, "LE": grad_le, "WC": grad_wc}
    worst = 0.0
    count = 0
    for model in ("tdoa", "ipd"):
        for crit, fn in grads.items():
            for _ in range(20):
                acc, G, H = _random_acc(rng, model)
                dG, dH = fn(acc, G, H, 0.8)
                fG = _fd(lambda g: total_distortion(acc, g, H, crit, 0.8), G)
                fH = _fd(lambda h: total_distortion(acc, G, h, crit, 0.8), H)
                for a, b in ((dG, fG), (dH, fH)):
                    worst = max(worst, np.max(np.abs(a - b)) / np.max(np.abs(b)))
                count += 1
    elapsed = time.perf_counter() - t0
    report(2, worst < 1e-5 and elapsed < 10,
           f"instances={count} worst_rel_err={worst:.2e} time={elapsed:.2f}s")


# ------------------------------------------------------------------- 3

def _grid_optimum(acc):
    """Exhaustive search over H at 1e-3 with G minimized exactly per H."""
    r, s = acc.ref, acc.nonref

    def profile(h1, h2):
        Hs = np.stack([h1, h2], axis=-1)[..., None, None, :]
        G = (r.s1 + (Hs * s.s1).sum(-1)) / (r.s2 + (Hs * Hs * s.s2).sum(-1))
        Ge = G[..., None]
        return ((r.s0 - 2 * G * r.s1 + G * G * r.s2).sum(axis=(-1, -2))
                + (s.s0 - 2 * Ge * Hs * s.s1 + (Ge * Hs) ** 2 * s.s2).sum(axis=(-1, -2, -3)))

    coarse = np.arange(0.0, 6.0, 1e-2)
    d = profile(*np.meshgrid(coarse, coarse, indexing="ij"))
    a, b = np.unravel_index(np.argmin(d), d.shape)
    f1 = np.arange(coarse[a] - 0.02, coarse[a] + 0.02, 1e-3)
    f2 = np.arange(coarse[b] - 0.02, coarse[b] + 0.02, 1e-3)
    return min(d.min(), profile(*np.meshgrid(f1, f2, indexing="ij")).min())


def test_criterion_03_quasistatic():
    rng = np.random.default_rng(3)
    gaps, monotone, exact = [], True, True
    for _ in range(12):
        acc = TrainAccumulator(SnrAxes(I=2, J=2), "tdoa", 0.0, L=2)
        for i in range(2):
            for j in range(2):
                for l in range(2):
                    k = rng.integers(1, 6)
                    accumulate(acc, rng.uniform(0.2, 1.5, k), rng.uniform(0.5, 1.5, k),
                               rng.uniform(0.2, 1.5, k), i, j, l)
        t, h, trace = solve_we_quasistatic(acc, beta=1.0, iterations=1000)
        found = total_distortion(acc, t.values, h.values, "WE", normalized=False)
        gaps.append(found - _grid_optimum(acc))
        monotone &= bool(np.all(np.diff(trace) <= 0))
        t0, _, _ = solve_we_quasistatic(acc, beta=0.0)
        exact &= bool(np.array_equal(t0.values, acc.ref.s1 / acc.ref.s2))
    ok = max(gaps) <= 1e-3 and monotone and exact
    report(3, ok, f"instances=12 max_gap_to_grid={max(gaps):.2e} non_increasing={monotone} "
                  f"beta0_exact={exact}")


# ---------------------------------------------------------------- 4, 5

AZIMUTHS = (-60.0, -30.0, 0.0, 30.0, 60.0)


def _stft_amps(x):
    lead = np.zeros(N // 2)
    frames = frame_stream(np.concatenate([lead, x, lead]), N, N // 2)
    return np.abs(np.fft.rfft(frames * hann(N), axis=1))


@pytest.fixture(scope="module")
def corpus_results():
    t0 = time.perf_counter()
    clean = [speech_like(2.0, FS, seed=k) for k in range(10)]
    n = clean[0].size
    noises = {"white": white_noise(n, 501, 0.1), "modulated": modulated_noise(n, FS, 502, rms=0.1)}
    hrirs = [synth_hrir(a, FS) for a in AZIMUTHS]

    def train(bootstrap=None):
        cfg = TrainConfig(bootstrap=bootstrap)
        acc = cfg.new_accumulator()
        for x in clean[:7]:
            for h in hrirs:
                for nz in noises.values():
                    c, y = simulate_pair(x, nz, h, 5.0)
                    accumulate_pair(acc, c, y, cfg)
        return acc

    def evaluate(table, hrtf):
        seg, we_enh, we_noisy = [], [], []
        for x in clean[7:]:
            for h in hrirs:
                for nz in noises.values():
                    c, y = simulate_pair(x, nz, h, 5.0)
                    out, _ = process_file(PipelineConfig((table, hrtf)), y)
                    for ch in (0, 1):
                        seg.append(segmental_snr_improvement(c.channel(ch), y.channel(ch),
                                                             out.channel(ch)))
                        a = _stft_amps(c.channel(ch))
                        we_enh.append(distortion_metric(a, _stft_amps(out.channel(ch)), "WE"))
                        we_noisy.append(distortion_metric(a, _stft_amps(y.channel(ch)), "WE"))
        return float(np.mean(seg)), float(np.mean(we_enh)), float(np.mean(we_noisy))

    # first pass labels cells with log-MMSE estimates, the second with the WE table
    first, _, _ = solve_we_quasistatic(train())
    acc = train(first)
    we_table, we_hrtf, _ = solve_we_quasistatic(acc)
    we = evaluate(we_table, we_hrtf)
    we_time = time.perf_counter() - t0
    t1 = time.perf_counter()
    wc_table, wc_hrtf, wc_trace = optimize(acc, OptimizerConfig("WC"))
    wc = evaluate(wc_table, wc_hrtf)
    wc_time = time.perf_counter() - t1
    return {"we": we, "wc": wc, "we_time": we_time, "wc_time": wc_time, "wc_trace": wc_trace}


@pytest.mark.slow
def test_criterion_04_end_to_end(corpus_results):
    seg, we_enh, we_noisy = corpus_results["we"]
    elapsed = corpus_results["we_time"]
    ok = seg >= 0.5 and we_enh < we_noisy and elapsed < 300
    report(4, ok, f"segSNR+={seg:.3f}dB WE_dist enhanced={we_enh:.4e} noisy={we_noisy:.4e} "
                  f"time={elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_05_criterion_ordering(corpus_results):
    we_seg = corpus_results["we"][0]
    wc_seg = corpus_results["wc"][0]
    trace = corpus_results["wc_trace"]
    ok = wc_seg >= we_seg - 0.2
    report(5, ok, f"WC segSNR+={wc_seg:.3f}dB WE segSNR+={we_seg:.3f}dB "
                  f"WC loss {trace[0]:.4f}->{trace[-1]:.4f} time={corpus_results['wc_time']:.0f}s")


# ------------------------------------------------------------------- 6

def test_criterion_06_ipd():
    bands = bark_bands(FS, N)
    owner = bands.band_of_bin()
    errs = []
    # single bin
    left = np.zeros(N // 2 + 1, complex)
    right = np.zeros(N // 2 + 1, complex)
    left[40], right[40] = 2.0 * np.exp(1j * 1.1), 0.5 * np.exp(1j * (1.1 - 0.7))
    ipd = compute_ipd(Spectrum(left, N), Spectrum(right, N), bands)
    errs.append(abs(ipd[owner[40]] - 0.7))
    errs.append(np.max(np.abs(np.delete(ipd, owner[40]))))
    # every band: bins share one phase offset, so the band value is that offset
    rng = np.random.default_rng(6)
    offsets = rng.uniform(-3.0, 3.0, bands.n_bands)
    mags_l, mags_r = rng.uniform(0.1, 2, N // 2 + 1), rng.uniform(0.1, 2, N // 2 + 1)
    base = rng.uniform(-np.pi, np.pi, N // 2 + 1)
    left = mags_l * np.exp(1j * base)
    right = mags_r * np.exp(1j * (base - offsets[owner]))
    ipd = compute_ipd(Spectrum(left, N), Spectrum(right, N), bands)
    errs.append(np.max(np.abs(ipd - offsets)))
    # two bins in one band with different offsets: angle of the weighted phasor sum
    b = owner[60]
    k = np.flatnonzero(owner == b)[:2]
    left = np.zeros(N // 2 + 1, complex)
    right = np.zeros(N // 2 + 1, complex)
    left[k] = [1.0, 2.0]
    right[k] = [np.exp(-0.4j), 0.5 * np.exp(-1.2j)]
    expected = np.arctan2(np.sin(0.4) + np.sin(1.2), np.cos(0.4) + np.cos(1.2))
    ipd = compute_ipd(Spectrum(left, N), Spectrum(right, N), bands)
    errs.append(abs(ipd[b] - expected))
    # antisymmetry on random spectra, away from the +-pi wrap
    anti = 0.0
    for _ in range(50):
        sl = Spectrum(rng.standard_normal(129) + 1j * rng.standard_normal(129), N)
        sr = Spectrum(rng.standard_normal(129) + 1j * rng.standard_normal(129), N)
        a, bb = compute_ipd(sl, sr, bands), compute_ipd(sr, sl, bands)
        keep = np.abs(a) < np.pi - 1e-6
        anti = max(anti, np.max(np.abs(a[keep] + bb[keep])))
    worst = max(errs)
    report(6, worst < 1e-9 and anti < 1e-9, f"max_abs_err={worst:.1e} antisym_err={anti:.1e}")


# ------------------------------------------------------------------- 7

def test_criterion_07_tdoa():
    rng = np.random.default_rng(7)

    def pair(shift, n, snr_db=None):
        x = rng.standard_normal(n + 64)
        left, right = x[32:32 + n], x[32 - shift:32 - shift + n]
        if snr_db is not None:
            s = 10 ** (-snr_db / 20)
            left = left + s * rng.standard_normal(n)
            right = right + s * rng.standard_normal(n)
        return left, right

    exact = all(gcc_delay(*pair(s, N)).tau == s for s in range(-24, 25))
    hits = 0
    for _ in range(200):
        s = int(rng.integers(-24, 25))
        hits += abs(gcc_delay(*pair(s, N, 10.0)).tau - s) <= 1
    rejected = True
    for pos in range(20):
        for outlier in (-24, 24, 100):
            t = DelayTracker(20)
            for k in range(20):
                out = update_tracker(t, outlier if k == pos else 5)
            rejected &= out == 5
    ok = exact and hits >= 190 and rejected
    report(7, ok, f"noiseless_exact={exact} within1@10dB={hits}/200 outlier_rejected={rejected}")


# ------------------------------------------------------------------- 8

def _vad_stream(reps=3, seed=8):
    rng = np.random.default_rng(seed)
    parts, quiet = [], []
    t = np.arange(2 * FS) / FS
    gate = np.floor(t / 0.1) % 2 == 0
    for _ in range(reps):
        parts.append(1e-4 * rng.standard_normal(FS))
        quiet.append(np.ones(FS))
        parts.append(0.05 * rng.standard_normal(2 * FS))
        quiet.append(np.zeros(2 * FS))
        parts.append(0.2 * np.sin(2 * np.pi * 1000 * t) * gate + 1e-4 * rng.standard_normal(2 * FS))
        quiet.append(np.zeros(2 * FS))
    return np.concatenate(parts), np.concatenate(quiet)


def _run_vad(x, k_q):
    vad = Vad(k_q)
    out, raw = [], []
    for f in frame_stream(x, N, N // 2):
        out.append(vad(f))
        # Tv has been updated for this frame before the decision
        raw.append(raw_decision(vad.last_dc, vad.state.tv, k_q)
                   if vad.state.frames > vad.state.buffer_size else None)
    return out, raw


def test_criterion_08_vad_quiet():
    x, quiet = _vad_stream()
    # a frame is truly quiet when its centre sample lies in a quiet segment
    truth = frame_stream(quiet, N, N // 2)[:, N // 2].astype(int)
    out, raw = _run_vad(x, 0.01)
    est = np.array([int(a is Activity.QUIET) for a in out])
    p_q = 1.0 - np.mean(np.abs(truth - est))
    specificity = bool(np.all(est[truth == 0] == 0))
    hangover = all(all(r is Activity.QUIET for r in raw[k - 9:k + 1])
                   for k in np.flatnonzero(est) if k >= 9)
    hangover &= not any(est[:9])
    zero, _ = _run_vad(x, 0.0)
    n_quiet0 = sum(a is Activity.QUIET for a in zero)
    ok = p_q >= 0.9 and n_quiet0 == 0 and hangover and specificity
    report(8, ok, f"P_Q={p_q:.4f} quiet_at_kq0={n_quiet0} hangover_ok={hangover} "
                  f"specificity_100={specificity}")


# ------------------------------------------------------------------- 9

def _class_signal(c, n, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n)
    if c == 0:
        return 0.05 * w
    if c == 1:
        return 0.01 * lfilter([1.0], [1.0, -0.95], w)
    if c == 2:
        return 0.05 * lfilter([1.0, -1.0], [1.0], w)
    t = np.arange(n) / FS
    return 0.025 * sum(np.sin(2 * np.pi * k * 120 * t + k) for k in range(1, 8)) + 0.002 * w


def _music(n, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / FS
    x = np.zeros(n)
    for k in range(0, n, FS // 4):
        f0 = rng.choice([220.0, 262.0, 330.0, 392.0, 440.0])
        s = slice(k, k + FS // 4)
        x[s] = sum(np.sin(2 * np.pi * f0 * h * t[s]) / h for h in range(1, 6))
    return 0.05 * x + 1e-4 * rng.standard_normal(n)


def _noise(n, seed):
    return (modulated_noise(n, FS, seed, rms=0.05) if seed % 2 else white_noise(n, seed, 0.05))


def _predict(models, F):
    return np.stack([gmm_score(m, F) for m in models], axis=1).argmax(axis=1)


def test_criterion_09_classification():
    models = [gmm_train(feature_matrix(_class_signal(c, 2 * FS, c)), K=2, seed=0)
              for c in range(4)]
    hits = total = 0
    for c in range(4):
        p = _predict(models, feature_matrix(_class_signal(c, 2 * FS, 100 + c)))
        hits += np.sum(p == c)
        total += p.size
    frame_acc = hits / total

    # piecewise-stationary streams: segment accuracy = majority decision per segment
    seg_len = 172
    voting_ok = True
    for seed in range(5):
        labs = np.random.default_rng(seed).integers(0, 4, 10)
        x = np.concatenate([_class_signal(c, 128 * seg_len, 300 + 10 * seed + k)
                            for k, c in enumerate(labs)])
        p = _predict(models, feature_matrix(x))[:labs.size * seg_len]
        v = np.array(vote_stream(list(p), 20))
        single = np.mean([majority_vote(list(p[k * seg_len:(k + 1) * seg_len])) == c
                          for k, c in enumerate(labs)])
        voted = np.mean([majority_vote(list(v[k * seg_len:(k + 1) * seg_len])) == c
                         for k, c in enumerate(labs)])
        voting_ok &= voted >= single

    # correlated two-channel features: shared source term plus independent sensor terms
    rng = np.random.default_rng(9)
    mu = 0.6 * rng.standard_normal((4, 26))

    def draw(c, n):
        s = 0.7 * rng.standard_normal((n, 26))
        return mu[c] + s + rng.standard_normal((n, 26)), mu[c] + s + rng.standard_normal((n, 26))

    train = [draw(c, 2000) for c in range(4)]
    test = [draw(c, 2000) for c in range(4)]
    single_m = [gmm_train(l, K=2, seed=0) for l, _ in train]
    fused_m = [gmm_train(np.hstack([l, r]), K=2, seed=0) for l, r in train]
    single_acc = np.mean([np.mean(_predict(single_m, l) == c) for c, (l, _) in enumerate(test)])
    fused_acc = np.mean([np.mean(_predict(fused_m, np.hstack([l, r])) == c)
                         for c, (l, r) in enumerate(test)])

    mm = [gmm_train(feature_matrix(_music(3 * FS, 1)), seed=0),
          gmm_train(np.vstack([feature_matrix(_noise(3 * FS, 2)),
                               feature_matrix(_noise(3 * FS, 3))]), seed=0)]
    mn_voted = []
    for seed in range(6):
        for c, gen in ((0, _music), (1, _noise)):
            p = _predict(mm, feature_matrix(gen(2 * FS, 100 + seed)))
            mn_voted.append(np.mean(np.array(vote_stream(list(p), 20)) == c))
    mn = min(mn_voted)
    ok = frame_acc >= 0.99 and voting_ok and fused_acc >= single_acc and mn == 1.0
    report(9, ok, f"4class_frame_acc={frame_acc:.4f} voting_never_worse={voting_ok} "
                  f"fused={fused_acc:.4f} single={single_acc:.4f} music_noise_voted={mn:.4f}")


# ------------------------------------------------------------------ 10

@pytest.mark.slow
def test_criterion_10_timing():
    t0 = time.perf_counter()
    x = speech_like(5.0, FS, seed=10)
    x = x + 0.03 * white_noise(x.size, seed=10)
    from bilateral_enhance.audio_io import convolve_hrir
    stereo = convolve_hrir(AudioBuffer(x, FS), synth_hrir(30.0, FS))
    cfg = PipelineConfig((GainTable.from_model(gain_log_mmse), HrtfGain.ones_tdoa()))
    rep = bench_modes(cfg, stereo, repetitions=11)
    modes = rep["modes"]
    ratio = modes["proposed"]["total_s"] / modes["sequential"]["total_s"]
    outs = rep["reference_output"]
    same = len({o.tobytes() for o in outs.values()}) == 1
    elapsed = time.perf_counter() - t0
    ok = ratio <= 0.8 and same and elapsed < 60
    report(10, ok, f"proposed={modes['proposed']['total_s']:.3f}s "
                   f"sequential={modes['sequential']['total_s']:.3f}s ratio={ratio:.3f} "
                   f"identical_reference_bytes={same} time={elapsed:.0f}s")


# ------------------------------------------------------------------ 11

def test_criterion_11_eval_math():
    per, q = expected_quality(np.eye(2), [[3.0, 1.0], [1.0, 2.0]])
    sa = suppression_advantage(2.5, 2.0)
    rng = np.random.default_rng(11)
    col = rng.standard_normal(4)
    Q = np.tile(col, (4, 1))
    independent = True
    for _ in range(50):
        P = rng.uniform(0, 1, (4, 4))
        P /= P.sum(axis=0)
        independent &= np.allclose(expected_quality(P, Q)[0], col, rtol=0, atol=1e-12)
    ok = q == 2.5 and sa == 0.5 and independent and list(per) == [3.0, 2.0]
    report(11, ok, f"Qbar={q} SA={sa} fixed_suppression_independent_of_P={independent}")


# ------------------------------------------------------------------ 12

def _err_db(ref, test):
    return 10 * np.log10(np.sum((ref - test) ** 2) / np.sum(ref ** 2))


def test_criterion_12_reconstruction():
    rng = np.random.default_rng(12)
    x = rng.standard_normal(FS)
    lead = np.zeros(N // 2)
    w = hann(N)
    frames = frame_stream(np.concatenate([lead, x, lead]), N, N // 2)
    out = np.array([synthesize(analyze(f, w)) for f in frames])
    y = overlap_add(out, N // 2, w).samples[N // 2:N // 2 + x.size]
    ola = _err_db(x, y)
    # identity gains (G = 1, H = 1) on a frontal source with diotic noise
    s = speech_like(2.0, FS, seed=12)
    s = s + 0.02 * white_noise(s.size, seed=12)
    from bilateral_enhance.audio_io import convolve_hrir
    stereo = convolve_hrir(AudioBuffer(s, FS), synth_hrir(0.0, FS))
    cfg = PipelineConfig((GainTable.constant(1.0), HrtfGain.ones_tdoa()))
    enh, _ = process_file(cfg, stereo)
    pipe = _err_db(stereo.samples, enh.samples)
    report(12, ola <= -60 and pipe <= -60, f"ola_err={ola:.1f}dB identity_pipeline_err={pipe:.1f}dB")
