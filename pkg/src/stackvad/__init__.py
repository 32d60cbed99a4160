"""Voice activity detection with a stacked ensemble of RBF SVMs.

Frames are described by 13 MFCCs; silent frames are removed by a
log-mel-energy gate, and the rest are classified by partition-trained SVM
members whose speech probabilities feed an output-layer SVM.
"""

from .audio_io import AudioClip, Frame, FrameSpec, frame_clip, load_wav
from .ensemble import EnsembleConfig, EnsembleModel, partition, train_ensemble
from .features import GateConfig, LabeledDataset, MfccConfig, extract_dataset, is_silent, mfcc
from .metrics import EvalReport, accuracy, evaluate, operating_point, roc_auc
from .nn import MlpConfig, MlpModel, train_mlp
from .svm import GridSpec, SvmHyperparams, SvmModel, fit_platt, grid_search, train_svm

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "Frame", "FrameSpec", "frame_clip", "load_wav",
    "EnsembleConfig", "EnsembleModel", "partition", "train_ensemble",
    "GateConfig", "LabeledDataset", "MfccConfig", "extract_dataset", "is_silent", "mfcc",
    "EvalReport", "accuracy", "evaluate", "operating_point", "roc_auc",
    "MlpConfig", "MlpModel", "train_mlp",
    "GridSpec", "SvmHyperparams", "SvmModel", "fit_platt", "grid_search", "train_svm",
]
