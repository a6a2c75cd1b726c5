"""Majority voting and the hierarchical background decision."""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..snr import Activity
from .gmm import ClassifierBundle, classify

MUSIC_LABEL = "music"
NOISE_LABEL = "noise"


class Background(str, Enum):
    VOICE = "voice"
    QUIET = "quiet"
    MUSIC = "music"
    NOISE = "noise"


@dataclass(frozen=True)
class BackgroundDecision:
    kind: Background
    label: str | None = None

    def __post_init__(self):
        if self.kind is Background.NOISE and not self.label:
            raise ValueError("a noise decision needs a class label")

    @property
    def bypass(self) -> bool:
        return self.kind in (Background.QUIET, Background.MUSIC)


def majority_vote(history, previous=None):
    """Most frequent label; ties keep ``previous`` when it is among the
    leaders, otherwise the most recent leader wins."""
    history = list(history)
    if not history:
        raise ValueError("empty voting history")
    counts = Counter(history)
    top = max(counts.values())
    leaders = {lab for lab, c in counts.items() if c == top}
    if len(leaders) == 1:
        return next(iter(leaders))
    if previous in leaders:
        return previous
    for lab in reversed(history):
        if lab in leaders:
            return lab


class Voter:
    """Sliding-window majority vote with memory of the last output."""

    def __init__(self, size: int = 20):
        if size < 1:
            raise ValueError("voting window must be >= 1")
        self.history = deque(maxlen=size)
        self.output = None

    def __call__(self, label):
        self.history.append(label)
        self.output = majority_vote(self.history, self.output)
        return self.output


def vote_stream(labels, size: int = 20) -> list:
    v = Voter(size)
    return [v(lab) for lab in labels]


class BackgroundClassifier:
    """Stateful gate: activity first, then music/noise, then noise class."""

    def __init__(self, bundle: ClassifierBundle, vote: int = 20):
        self.bundle = bundle
        self.music_voter = Voter(vote)
        self.class_voter = Voter(vote)
        self.current_class = bundle.labels[0]

    def decide(self, vad: Activity, features) -> BackgroundDecision:
        return decide_background(vad, features, self)


def decide_background(vad: Activity, features, clf: BackgroundClassifier | None) -> BackgroundDecision:
    vad = Activity(vad)
    if vad is Activity.QUIET:
        return BackgroundDecision(Background.QUIET)
    if clf is None:
        raise ValueError("classifier models are required for non-quiet frames")
    if vad is Activity.VOICE:
        return BackgroundDecision(Background.VOICE, clf.current_class)
    x = np.asarray(features, dtype=float)
    b = clf.bundle
    if b.music is not None:
        is_music = classify([b.music, b.noise], x) == 0
        if clf.music_voter(MUSIC_LABEL if is_music else NOISE_LABEL) == MUSIC_LABEL:
            return BackgroundDecision(Background.MUSIC)
    idx = classify(b.classes, x)
    clf.current_class = clf.class_voter(b.labels[idx])
    return BackgroundDecision(Background.NOISE, clf.current_class)
