"""Timbral feature extraction and boosted-tree instrument classification."""

from .audio_io import AudioClip, FrameSequence, load_wav, split_frames, hamming_window
from .spectral import Spectrogram, MelFilterbank, stft, hz_to_mel, mel_to_hz, build_mel_filterbank
from .features import FeatureConfig, FusedFeatureVector, extract_clip_features
from .gbt import TrainConfig, TreeEnsemble, train, predict
from .dataset import CLASS_NAMES, DatasetManifest, MinMaxScaler, load_manifest, split_train_test

__version__ = "0.1.0"
