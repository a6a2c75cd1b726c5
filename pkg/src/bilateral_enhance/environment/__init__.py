"""Detection path: activity detection, features, mixtures and decisions."""
from .decision import (Background, BackgroundClassifier, BackgroundDecision, Voter,
                       decide_background, majority_vote, vote_stream)
from .features import (FeatureTracker, delta_mfcc, feature_matrix, fuse_features,
                       mel_filterbank, mfcc)
from .gmm import (ClassifierBundle, GmmModel, classify, gmm_score, gmm_train,
                  load_bundle, load_gmm, save_bundle, save_gmm)
from .vad import (Vad, VadState, combine_vad, run_vad, spd, update_threshold,
                  vad_decide, weight_compress)

__all__ = [
    "Background", "BackgroundClassifier", "BackgroundDecision", "ClassifierBundle",
    "FeatureTracker", "GmmModel", "Vad", "VadState", "Voter", "classify", "combine_vad",
    "decide_background", "delta_mfcc", "feature_matrix", "fuse_features", "gmm_score",
    "gmm_train", "load_bundle", "load_gmm", "majority_vote", "mel_filterbank", "mfcc",
    "run_vad", "save_bundle", "save_gmm", "spd", "update_threshold", "vad_decide",
    "vote_stream", "weight_compress",
]
