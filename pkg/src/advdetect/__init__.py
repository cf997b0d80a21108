"""Adversarial speech detection with filter-bank cepstral features.

The pipeline: read 16 kHz PCM audio, chop into 512 ms blocks, extract
31x20 cepstral matrices under one of five filter banks (linear, Mel,
inverse Mel, gammatone, inverse gammatone), train a small CNN to flag
adversarially perturbed blocks, and evaluate detection ROCAUC across
clean, noisy, speech-only and non-speech-only conditions.
"""

from .audio_io import (
    AudioSignal,
    BLOCK_SAMPLES,
    Block,
    Condition,
    SAMPLE_RATE,
    chop_blocks,
    read_wav,
    rms,
    write_wav,
)
from .dataset import (
    ConditionFilter,
    DatasetPartition,
    LabeledFeatureSet,
    assemble_condition,
    hash_split,
    read_cache,
    split_of,
    truncate_balance,
    write_cache,
)
from .dsp import dct2, frame_block, frame_signal, power_spectra, power_spectrum
from .evaluate import (
    EvalReport,
    ExperimentCell,
    ExperimentDescriptor,
    aggregate_seeds,
    rocauc,
    run_experiment,
)
from .filterbanks import (
    FEATURE_NAMES,
    FeatureMatrix,
    FilterBankMatrix,
    FilterBankSpec,
    cepstra,
    extract_features,
    get_filterbank,
    invert_filterbank,
    make_filterbank,
    supervector,
)
from .model import CnnDetector, TrainConfig, bce_loss, predict_scores, train
from .noise import (
    NoiseSource,
    SNR_LEVELS_DB,
    compute_alpha,
    mix_at_snr,
    sample_noise_segment,
    split_noise,
)
from .vad import SpeechMask, detect_speech, load_external_mask, split_speech_nonspeech

__version__ = "0.1.0"
