"""Joint CTC-attention sequence transcription in plain numpy."""

from .attention import AttentionDecoder, AttnConfig, attention_loss
from .beam import BeamConfig, Hypothesis, beam_decode, edit_distance, greedy_decode
from .ctc import ImpossibleAlignment, ctc_brute_force, ctc_forward_backward, ctc_loss, greedy_collapse_decode
from .data import SynthConfig, Utterance, Vocab, load_features, read_manifest, save_features, synth_task
from .encoder import Encoder, EncoderConfig, EncoderOutput
from .model import JointModel, load_params, save_params
from .numgrad import Param, Tape, Tensor, check_gradients, no_grad
from .train import MtlConfig, TrainLog, monotonicity_score, mtl_loss, teacher_forced_accuracy, train

__version__ = "0.1.0"

__all__ = [
    "AttentionDecoder", "AttnConfig", "attention_loss",
    "BeamConfig", "Hypothesis", "beam_decode", "edit_distance", "greedy_decode",
    "ImpossibleAlignment", "ctc_brute_force", "ctc_forward_backward", "ctc_loss", "greedy_collapse_decode",
    "SynthConfig", "Utterance", "Vocab", "load_features", "read_manifest", "save_features", "synth_task",
    "Encoder", "EncoderConfig", "EncoderOutput",
    "JointModel", "load_params", "save_params",
    "Param", "Tape", "Tensor", "check_gradients", "no_grad",
    "MtlConfig", "TrainLog", "monotonicity_score", "mtl_loss", "teacher_forced_accuracy", "train",
]
