"""Diagonal-covariance Gaussian mixtures: k-means + EM training, scoring,
classification and JSON model files."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

VAR_FLOOR = 1e-6
MODEL_VERSION = 1
MANIFEST = "manifest.json"


@dataclass
class GmmModel:
    weights: np.ndarray     # (K,)
    means: np.ndarray       # (K, dim)
    variances: np.ndarray   # (K, dim)
    label: str = ""
    loglik_trace: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.variances.shape != (k, d):
            raise ValueError("inconsistent GMM parameter shapes")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(self.variances < VAR_FLOOR) or not np.all(np.isfinite(self.means)):
            raise ValueError("variances must be >= floor and means finite")

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _component_loglik(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """(n, K) log of weight * N(x; mean, diag var)."""
    diff = x[:, None, :] - model.means[None, :, :]
    quad = np.sum(diff * diff / model.variances[None], axis=2)
    logdet = np.sum(np.log(2 * np.pi * model.variances), axis=1)
    return np.log(model.weights)[None, :] - 0.5 * (quad + logdet[None, :])


def _as_samples(x, dim: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != dim:
        raise ValueError(f"feature dimension {x.shape[1]} != model dimension {dim}")
    return x


def gmm_score(model: GmmModel, x) -> np.ndarray | float:
    """Per-sample log-likelihood (scalar for a single vector)."""
    single = np.ndim(x) == 1
    ll = logsumexp(_component_loglik(model, _as_samples(x, model.dim)), axis=1)
    return float(ll[0]) if single else ll


def responsibilities(model: GmmModel, x) -> np.ndarray:
    lc = _component_loglik(model, _as_samples(x, model.dim))
    return np.exp(lc - logsumexp(lc, axis=1, keepdims=True))


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, iterations: int = 50):
    distinct = np.unique(x, axis=0)
    centers = distinct[rng.choice(len(distinct), size=k, replace=False)]
    labels = np.zeros(len(x), dtype=int)
    for it in range(iterations):
        d2 = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        if it and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = x[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return centers, labels


def gmm_train(samples, K: int = 2, seed: int = 0, label: str = "",
              max_iter: int = 200, tol: float = 1e-6) -> GmmModel:
    """k-means initialisation followed by EM until the mean log-likelihood
    gain drops below ``tol``. Identical data collapse to one component."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n, dim = x.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < K * dim:
        raise ValueError(f"need at least K*dim = {K * dim} samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    n_distinct = len(np.unique(x, axis=0))
    K = min(K, n_distinct)
    rng = np.random.default_rng(seed)
    if K == 1:
        var = np.maximum(x.var(axis=0), VAR_FLOOR)
        model = GmmModel(np.ones(1), x.mean(axis=0, keepdims=True), var[None], label)
        model.loglik_trace = [float(np.mean(gmm_score(model, x)))]
        return model
    centers, labels = _kmeans(x, K, rng)
    weights = np.array([max(np.mean(labels == c), 1.0 / n) for c in range(K)])
    variances = np.array([x[labels == c].var(axis=0) if np.sum(labels == c) > 1 else x.var(axis=0)
                          for c in range(K)])
    model = GmmModel(weights / weights.sum(), centers, np.maximum(variances, VAR_FLOOR), label)
    trace = []
    for _ in range(max_iter):
        lc = _component_loglik(model, x)
        ll = logsumexp(lc, axis=1)
        trace.append(float(ll.mean()))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        resp = np.exp(lc - ll[:, None])
        nk = np.maximum(resp.sum(axis=0), 1e-12)
        means = resp.T @ x / nk[:, None]
        var = resp.T @ (x * x) / nk[:, None] - means ** 2
        model = GmmModel(nk / nk.sum(), means, np.maximum(var, VAR_FLOOR), label)
    model.loglik_trace = trace
    return model


def classify(models, x):
    """Index of the best-scoring model (first on ties) per sample."""
    models = list(models)
    if not models:
        raise ValueError("no models given")
    single = np.ndim(x) == 1
    scores = np.stack([np.atleast_1d(gmm_score(m, x)) for m in models], axis=1)
    idx = np.argmax(scores, axis=1)
    return int(idx[0]) if single else idx


# ------------------------------------------------------------------- files

def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def model_to_dict(model: GmmModel) -> dict:
    return {
        "version": MODEL_VERSION,
        "label": model.label,
        "dim": model.dim,
        "components": [
            {"weight": float(w), "mean": m.tolist(), "var": v.tolist()}
            for w, m, v in zip(model.weights, model.means, model.variances)
        ],
    }


def model_from_dict(d: dict) -> GmmModel:
    if d.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported GMM version {d.get('version')!r}")
    comps = d["components"]
    model = GmmModel([c["weight"] for c in comps], [c["mean"] for c in comps],
                     [c["var"] for c in comps], d.get("label", ""))
    if model.dim != d["dim"]:
        raise ValueError("declared dimension does not match the components")
    return model


def save_gmm(path, model: GmmModel) -> None:
    _atomic_write_text(path, json.dumps(model_to_dict(model), indent=1))


def load_gmm(path) -> GmmModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


@dataclass
class ClassifierBundle:
    """N noise-class models plus an optional music/noise pair."""

    classes: list
    music: GmmModel | None = None
    noise: GmmModel | None = None

    def __post_init__(self):
        if not self.classes:
            raise ValueError("bundle needs at least one noise class")
        dims = {m.dim for m in self.classes}
        if (self.music is None) != (self.noise is None):
            raise ValueError("music and noise models come as a pair")
        if self.music is not None:
            dims |= {self.music.dim, self.noise.dim}
        if len(dims) != 1:
            raise ValueError("all models in a bundle must share one dimension")

    @property
    def dim(self) -> int:
        return self.classes[0].dim

    @property
    def labels(self) -> list[str]:
        return [m.label for m in self.classes]


def save_bundle(directory, bundle: ClassifierBundle) -> None:
    """Per-model JSON files plus a manifest listing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"version": MODEL_VERSION, "dim": bundle.dim, "classes": []}
    for k, m in enumerate(bundle.classes):
        name = f"class_{k:02d}.json"
        save_gmm(directory / name, m)
        manifest["classes"].append(name)
    if bundle.music is not None:
        save_gmm(directory / "music.json", bundle.music)
        save_gmm(directory / "nonmusic.json", bundle.noise)
        manifest["music_noise"] = ["music.json", "nonmusic.json"]
    _atomic_write_text(directory / MANIFEST, json.dumps(manifest, indent=1))


def load_bundle(directory) -> ClassifierBundle:
    directory = Path(directory)
    try:
        with open(directory / MANIFEST) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"no {MANIFEST} in {directory}") from None
    if manifest.get("version") != MODEL_VERSION:
        raise ValueError("unsupported bundle version")
    classes = [load_gmm(directory / name) for name in manifest["classes"]]
    music = noise = None
    if "music_noise" in manifest:
        music, noise = (load_gmm(directory / name) for name in manifest["music_noise"])
    bundle = ClassifierBundle(classes, music, noise)
    if bundle.dim != manifest["dim"]:
        raise ValueError("manifest dimension does not match the models")
    return bundle
