"""``bilateral-enhance`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Diagnostics go to stderr; results are written to files only, atomically.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, AudioFormatError, hann, frame_stream, read_wav, synth_hrir, \
    write_hrir, write_wav
from .environment import (ClassifierBundle, Vad, classify, combine_vad, feature_matrix,
                          fuse_features, gmm_train, load_bundle, save_bundle, vote_stream)
from .environment.decision import MUSIC_LABEL
from .eval import distortion_metric, segmental_snr, segmental_snr_improvement, write_results
from .gain import ModelFormatError, save_model
from .pipeline import PipelineConfig, _atomic_csv, bench_modes, load_models, process_file, \
    write_decision_log, write_timing_report
from .training import (DivergenceError, OptimizerConfig, TrainConfig, build_training_set,
                       optimize, solve_we_quasistatic, write_loss_trace)
from .training.corpus import DEFAULT_AZIMUTHS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("train", "enhance", "classify", "vad", "eval", "bench", "gen-hrir", "train-gmm")

log = logging.getLogger("bilateral_enhance")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers

def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _existing_file(text: str) -> Path:
    p = Path(text)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _existing_dir(text: str) -> Path:
    p = Path(text)
    if not p.is_dir():
        raise FileNotFoundError(f"no such directory: {p}")
    return p


def _out_path(text: str) -> Path:
    p = Path(text)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")
    return p


def _read_config(path) -> list[str]:
    """``key=value`` lines as flags; ``#`` starts a comment."""
    args = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "yes", "on"):
                args.append(flag)
            elif value.lower() not in ("false", "no", "off"):
                args += [flag, value]
    return args


def _expand_config(argv: list[str]) -> list[str]:
    """Splice config-file flags in front of the command-line flags so the
    latter win."""
    argv = list(argv)
    if "--config" not in argv:
        return argv
    k = argv.index("--config")
    if k + 1 >= len(argv):
        raise UsageError("--config needs a file argument")
    path = argv[k + 1]
    del argv[k:k + 2]
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such config file: {path}")
    extra = _read_config(path)
    at = next((i + 1 for i, tok in enumerate(argv) if tok in COMMANDS), len(argv))
    return argv[:at] + extra + argv[at:]


# ---------------------------------------------------------------- commands

def cmd_train(a) -> int:
    clean_dir, noise_dir = _existing_dir(a.clean_dir), _existing_dir(a.noise_dir)
    out = _out_path(a.out)
    trace_path = _out_path(a.trace) if a.trace else None
    hrir = a.hrir if a.hrir == "synth" else _existing_dir(a.hrir)
    crit = a.criterion.upper()
    if a.method == "quasistatic" and crit != "WE":
        raise UsageError("--method quasistatic is only defined for --criterion we")
    if a.passes < 1:
        raise UsageError("--passes must be >= 1")
    cfg = TrainConfig(snr_db=a.snr_db, azimuths=a.azimuths, model=a.hrtf, p=a.p, k_q=a.kq)
    table = None
    for k in range(a.passes):
        cfg.bootstrap = table
        log.info("pass %d/%d: accumulating training statistics", k + 1, a.passes)
        acc = build_training_set(clean_dir, noise_dir, hrir, cfg)
        if k + 1 < a.passes:
            table, _, _ = solve_we_quasistatic(acc, a.beta, a.iters)
    if a.method == "quasistatic":
        table, hrtf, trace = solve_we_quasistatic(acc, a.beta, a.iters)
    else:
        oc = OptimizerConfig(criterion=crit, learning_rate=a.lr, iterations=a.iters,
                             beta=a.beta, p=a.p)
        table, hrtf, trace = optimize(acc, oc)
    log.info("distortion %.6g -> %.6g over %d iterations", trace[0], trace[-1], len(trace) - 1)
    save_model(out, table, hrtf)
    if trace_path:
        write_loss_trace(trace_path, trace)
    return EXIT_OK


def _read_stereo(path) -> AudioBuffer:
    buf = read_wav(_existing_file(path))
    if buf.channels != 2:
        raise AudioFormatError(f"{path}: expected a stereo file")
    return buf


def cmd_enhance(a) -> int:
    models = load_models(a.model)
    bundle = load_bundle(_existing_dir(a.gmm_bundle)) if a.gmm_bundle else None
    stereo = _read_stereo(a.input)
    out = _out_path(a.output)
    log_path = _out_path(a.log) if a.log else None
    cfg = PipelineConfig(models, bundle, sample_rate=stereo.sample_rate, k_q=a.kq, vote=a.vote)
    enhanced, rows = process_file(cfg, stereo)
    write_wav(out, enhanced)
    if log_path:
        write_decision_log(log_path, rows)
    return EXIT_OK


def _features(buf: AudioBuffer, dim: int) -> np.ndarray:
    if dim == 52:
        if buf.channels != 2:
            raise AudioFormatError("fused models need a stereo input")
        fl = feature_matrix(buf.channel(0), buf.sample_rate)
        fr = feature_matrix(buf.channel(1), buf.sample_rate)
        return fuse_features(fl, fr)
    return feature_matrix(buf.channel(0), buf.sample_rate)


def cmd_classify(a) -> int:
    bundle = load_bundle(_existing_dir(a.gmm_bundle))
    buf = read_wav(_existing_file(a.input))
    out = _out_path(a.out)
    if a.vote < 1:
        raise UsageError("--vote must be >= 1")
    x = _features(buf, bundle.dim)
    labels = [bundle.labels[i] for i in classify(bundle.classes, x)]
    if bundle.music is not None:
        music = classify([bundle.music, bundle.noise], x) == 0
        labels = [MUSIC_LABEL if m else lab for m, lab in zip(music, labels)]
    voted = vote_stream(labels, a.vote)
    _atomic_csv(out, ("frame", "label", "voted"),
                ((k, lab, v) for k, (lab, v) in enumerate(zip(labels, voted))))
    return EXIT_OK


def cmd_vad(a) -> int:
    buf = read_wav(_existing_file(a.input))
    out = _out_path(a.out)
    if buf.channels > 2:
        raise AudioFormatError("vad expects mono or stereo input")
    frames = [frame_stream(buf.channel(c), 256, 128) for c in range(buf.channels)]
    vads = [Vad(a.kq) for _ in frames]
    rows = []
    for k in range(frames[0].shape[0]):
        per = [v(f[k]) for v, f in zip(vads, frames)]
        combined = per[0] if len(per) == 1 else combine_vad(per[0], per[1])
        rows.append([k] + [p.value for p in per] + [combined.value])
    header = ("frame", "vad") if buf.channels == 1 else ("frame", "left", "right", "vad")
    if buf.channels == 1:
        rows = [r[:2] for r in rows]
    _atomic_csv(out, header, rows)
    return EXIT_OK


METRICS = ("segsnr", "we", "le", "wc")


def _amplitudes(x, frame_len=256, hop=128) -> np.ndarray:
    return np.abs(np.fft.rfft(frame_stream(x, frame_len, hop) * hann(frame_len), axis=1))


def cmd_eval(a) -> int:
    metrics = [m.strip().lower() for m in a.metrics.split(",") if m.strip()]
    bad = [m for m in metrics if m not in METRICS]
    if bad or not metrics:
        raise UsageError(f"unknown metrics {bad}; choose from {','.join(METRICS)}")
    clean, noisy, enh = (read_wav(_existing_file(p)) for p in (a.clean, a.noisy, a.enhanced))
    out = _out_path(a.out)
    if not (clean.channels == noisy.channels == enh.channels):
        raise AudioFormatError("clean, noisy and enhanced files differ in channel count")
    if not (len(clean) == len(noisy) == len(enh)):
        raise AudioFormatError("clean, noisy and enhanced files differ in length")
    names = ("left", "right") if clean.channels == 2 else ("mono",)
    rows = []
    for c, ch in enumerate(names):
        s, y, e = clean.channel(c), noisy.channel(c), enh.channel(c)
        for m in metrics:
            if m == "segsnr":
                rows.append(("segsnr_noisy", ch, a.noise_class, a.azimuth, repr(segmental_snr(s, y))))
                rows.append(("segsnr_enhanced", ch, a.noise_class, a.azimuth,
                             repr(segmental_snr(s, e))))
                rows.append(("segsnr_improvement", ch, a.noise_class, a.azimuth,
                             repr(segmental_snr_improvement(s, y, e))))
            else:
                A = _amplitudes(s)
                for tag, sig in (("noisy", y), ("enhanced", e)):
                    d = distortion_metric(A, _amplitudes(sig), m.upper(), a.p)
                    rows.append((f"{m}_{tag}", ch, a.noise_class, a.azimuth, repr(d)))
    write_results(out, rows)
    return EXIT_OK


def cmd_bench(a) -> int:
    models = load_models(a.model)
    stereo = _read_stereo(a.input)
    out = _out_path(a.out)
    if a.reps < 1:
        raise UsageError("--reps must be >= 1")
    report = bench_modes(PipelineConfig(models, sample_rate=stereo.sample_rate), stereo, a.reps)
    modes = report["modes"]
    log.info("proposed/sequential time ratio %.3f",
             modes["proposed"]["total_s"] / modes["sequential"]["total_s"])
    write_timing_report(out, report)
    return EXIT_OK


def cmd_gen_hrir(a) -> int:
    left, right = _out_path(a.out_left), _out_path(a.out_right)
    pair = synth_hrir(a.azimuth, a.rate)
    write_hrir(left, pair.left, a.rate, a.azimuth)
    write_hrir(right, pair.right, a.rate, a.azimuth)
    return EXIT_OK


def _label_dir(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected LABEL=DIR, got {text!r}")
    label, directory = text.split("=", 1)
    return label, directory


def _dir_features(directory, fused: bool) -> np.ndarray:
    files = sorted(_existing_dir(directory).glob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no .wav files in {directory}")
    return np.vstack([_features(read_wav(f), 52 if fused else 26) for f in files])


def cmd_train_gmm(a) -> int:
    if not a.cls:
        raise UsageError("give at least one --class LABEL=DIR")
    if (a.music_dir is None) != (a.nonmusic_dir is None):
        raise UsageError("--music-dir and --nonmusic-dir go together")
    out = Path(a.out)
    classes = [gmm_train(_dir_features(d, a.fused), a.K, a.seed, label)
               for label, d in a.cls]
    music = noise = None
    if a.music_dir:
        music = gmm_train(_dir_features(a.music_dir, a.fused), a.K, a.seed, "music")
        noise = gmm_train(_dir_features(a.nonmusic_dir, a.fused), a.K, a.seed, "nonmusic")
    save_bundle(out, ClassifierBundle(classes, music, noise))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bilateral-enhance", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    common.add_argument("--config", help="key=value file; command-line flags override it")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)
    sub.add_parser = add_parser

    t = sub.add_parser("train", help="train a gain table and HRTF gains")
    t.add_argument("--clean-dir", required=True)
    t.add_argument("--noise-dir", required=True)
    t.add_argument("--criterion", choices=("we", "le", "wc"), default="we", type=str.lower)
    t.add_argument("--method", choices=("quasistatic", "gradient"), default="quasistatic")
    t.add_argument("--hrtf", choices=("tdoa", "ipd"), default="tdoa")
    t.add_argument("--beta", type=float, default=1.0)
    t.add_argument("--p", type=float, default=0.0)
    t.add_argument("--snr-db", type=float, default=5.0)
    t.add_argument("--iters", type=int, default=200)
    t.add_argument("--azimuths", type=_float_list, default=DEFAULT_AZIMUTHS)
    t.add_argument("--hrir", default="synth", help="'synth' or a directory of HRIR pairs")
    t.add_argument("--lr", type=float, default=None, help="gradient step size")
    t.add_argument("--passes", type=int, default=2,
                   help="front-end passes; later passes track with the previous table")
    t.add_argument("--kq", type=float, default=0.01)
    t.add_argument("--out", required=True)
    t.add_argument("--trace")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enhance", help="enhance a stereo file")
    e.add_argument("--model", required=True, help=".gt file or directory of <class>.gt")
    e.add_argument("--gmm-bundle")
    e.add_argument("--input", required=True)
    e.add_argument("--output", required=True)
    e.add_argument("--log")
    e.add_argument("--kq", type=float, default=0.01)
    e.add_argument("--vote", type=int, default=20)
    e.set_defaults(func=cmd_enhance)

    c = sub.add_parser("classify", help="frame-wise background labels")
    c.add_argument("--gmm-bundle", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--vote", type=int, default=20)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_classify)

    v = sub.add_parser("vad", help="frame-wise voice/noise/quiet labels")
    v.add_argument("--input", required=True)
    v.add_argument("--kq", type=float, default=0.01)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_vad)

    ev = sub.add_parser("eval", help="objective quality measures")
    ev.add_argument("--clean", required=True)
    ev.add_argument("--noisy", required=True)
    ev.add_argument("--enhanced", required=True)
    ev.add_argument("--metrics", default="segsnr,we,le,wc")
    ev.add_argument("--p", type=float, default=0.0)
    ev.add_argument("--noise-class", default="")
    ev.add_argument("--azimuth", default="")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time proposed vs two-processor suppression")
    b.add_argument("--model", required=True)
    b.add_argument("--input", required=True)
    b.add_argument("--reps", type=int, default=7)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen-hrir", help="write a synthetic HRIR pair")
    g.add_argument("--azimuth", type=float, required=True)
    g.add_argument("--rate", type=int, default=22050)
    g.add_argument("--out-left", required=True)
    g.add_argument("--out-right", required=True)
    g.set_defaults(func=cmd_gen_hrir)

    m = sub.add_parser("train-gmm", help="train a classifier bundle from labelled wav dirs")
    m.add_argument("--class", dest="cls", action="append", type=_label_dir, default=[],
                   metavar="LABEL=DIR")
    m.add_argument("--music-dir")
    m.add_argument("--nonmusic-dir")
    m.add_argument("--fused", action="store_true", help="52-dim two-channel features")
    m.add_argument("--K", type=int, default=2)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_train_gmm)
    return p


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_expand_config(argv))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, AudioFormatError, ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
