import csv

import numpy as np
import pytest

from bilateral_enhance.audio_io import AudioBuffer, convolve_hrir, load_hrir_pair, read_wav, \
    synth_hrir, write_wav
from bilateral_enhance.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run
from bilateral_enhance.gain import load_model
from bilateral_enhance.synth import make_corpus, speech_like, white_noise


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    clean, noise = make_corpus(root / "corpus", n_clean=2, duration_s=1.0)
    x = speech_like(1.5, seed=5)
    n = 0.02 * white_noise(x.size, seed=5)
    h = synth_hrir(30.0, 22050)
    write_wav(root / "clean.wav", convolve_hrir(AudioBuffer(x, 22050), h))
    write_wav(root / "noisy.wav", convolve_hrir(AudioBuffer(x + n, 22050), h))
    model = root / "m.gt"
    code = run(["train", "--clean-dir", str(clean), "--noise-dir", str(noise),
                "--azimuths=30", "--passes", "1", "--out", str(model),
                "--trace", str(root / "trace.csv")])
    assert code == EXIT_OK
    return root, clean, noise, model


def test_train_outputs(work):
    root, _, _, model = work
    table, hrtf = load_model(model)
    assert table.values.shape == (60, 70) and hrtf.model == "tdoa"
    rows = list(csv.reader(open(root / "trace.csv")))
    assert rows[0] == ["iteration", "distortion"] and len(rows) > 1


def test_enhance_and_idempotent(work):
    root, _, _, model = work
    outs = []
    for k in range(2):
        out = root / f"enh{k}.wav"
        assert run(["enhance", "--model", str(model), "--input", str(root / "noisy.wav"),
                    "--output", str(out), "--log", str(root / f"log{k}.csv")]) == EXIT_OK
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert (root / "log0.csv").read_bytes() == (root / "log1.csv").read_bytes()
    assert len(read_wav(root / "enh0.wav")) == len(read_wav(root / "noisy.wav"))


def test_train_idempotent(work, tmp_path):
    _, clean, noise, model = work
    out = tmp_path / "again.gt"
    run(["train", "--clean-dir", str(clean), "--noise-dir", str(noise), "--azimuths=30",
         "--passes", "1", "--out", str(out)])
    assert out.read_bytes() == model.read_bytes()


def test_eval_rows(work):
    root, _, _, _ = work
    res = root / "res.csv"
    assert run(["eval", "--clean", str(root / "clean.wav"), "--noisy", str(root / "noisy.wav"),
                "--enhanced", str(root / "enh0.wav"), "--out", str(res),
                "--noise-class", "white", "--azimuth", "30"]) == EXIT_OK
    rows = list(csv.DictReader(open(res)))
    metrics = {r["metric"] for r in rows}
    assert {"segsnr_improvement", "we_noisy", "we_enhanced", "wc_enhanced"} <= metrics
    assert all(r["noise_class"] == "white" for r in rows)
    assert all(np.isfinite(float(r["value"])) for r in rows)


def test_vad_and_gen_hrir(work, tmp_path):
    root, _, _, _ = work
    assert run(["vad", "--input", str(root / "noisy.wav"), "--out", str(tmp_path / "v.csv")]) == 0
    rows = list(csv.reader(open(tmp_path / "v.csv")))
    assert rows[0] == ["frame", "left", "right", "vad"]
    assert {r[3] for r in rows[1:]} <= {"voice", "noise", "quiet"}
    assert run(["gen-hrir", "--azimuth", "45", "--out-left", str(tmp_path / "l.txt"),
                "--out-right", str(tmp_path / "r.txt")]) == 0
    pair = load_hrir_pair(tmp_path / "l.txt", tmp_path / "r.txt")
    assert pair.azimuth_deg == 45.0 and pair.left.size > 0


def test_gmm_and_classify(work, tmp_path):
    root, clean, noise, _ = work
    bundle = tmp_path / "bundle"
    assert run(["train-gmm", "--class", f"speech={clean}", "--class", f"noise={noise}",
                "--out", str(bundle)]) == 0
    out = tmp_path / "labels.csv"
    assert run(["classify", "--gmm-bundle", str(bundle), "--input", str(root / "noisy.wav"),
                "--out", str(out), "--vote", "5"]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["frame", "label", "voted"]
    assert {r[1] for r in rows[1:]} <= {"speech", "noise"}


def test_bench(work, tmp_path):
    root, _, _, model = work
    out = tmp_path / "t.csv"
    assert run(["bench", "--model", str(model), "--input", str(root / "noisy.wav"),
                "--reps", "1", "--out", str(out)]) == 0
    assert [r[0] for r in csv.reader(open(out))][1:] == ["proposed", "sequential", "independent"]


def test_usage_errors(work, capsys):
    root, _, _, model = work
    assert run(["enhance", "--model", str(model)]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err.lower()
    assert run([]) == EXIT_USAGE
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run(["train", "--clean-dir", ".", "--noise-dir", ".", "--out", "x.gt",
                "--criterion", "wc", "--method", "quasistatic"]) == EXIT_USAGE


def test_data_errors(work, tmp_path):
    root, clean, _, model = work
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(["train", "--clean-dir", str(empty), "--noise-dir", str(empty),
                "--out", str(tmp_path / "m.gt")]) == EXIT_DATA
    assert run(["enhance", "--model", str(tmp_path / "missing.gt"), "--input",
                str(root / "noisy.wav"), "--output", str(tmp_path / "o.wav")]) == EXIT_DATA
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wave file")
    assert run(["enhance", "--model", str(model), "--input", str(bad),
                "--output", str(tmp_path / "o.wav")]) == EXIT_DATA
    assert not (tmp_path / "o.wav").exists()


def test_divergence_exit(work, tmp_path):
    _, clean, noise, _ = work
    code = run(["train", "--clean-dir", str(clean), "--noise-dir", str(noise),
                "--azimuths=30", "--passes", "1", "--method", "gradient", "--criterion", "wc",
                "--lr", "10", "--iters", "50", "--out", str(tmp_path / "m.gt")])
    assert code == EXIT_NUMERIC
    assert not (tmp_path / "m.gt").exists()


def test_config_file_and_override(work, tmp_path):
    root, _, _, model = work
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"# enhance settings\nmodel = {model}\ninput={root / 'noisy.wav'}\n"
                   f"output = {tmp_path / 'from_cfg.wav'}\nverbose = true\n")
    assert run(["enhance", "--config", str(cfg)]) == 0
    assert (tmp_path / "from_cfg.wav").exists()
    assert run(["enhance", "--config", str(cfg), "--output", str(tmp_path / "flag.wav")]) == 0
    assert (tmp_path / "flag.wav").read_bytes() == (tmp_path / "from_cfg.wav").read_bytes()
    cfg.write_text("not a pair\n")
    assert run(["enhance", "--config", str(cfg)]) == EXIT_USAGE
