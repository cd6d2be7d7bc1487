"""Query-based parallel anticipation of future action segments, on a numpy autodiff core."""

from .data import (ActivityGrammar, ParseError, SegmentSequence, SplitError, VideoSample, generate_corpus,
                   load_corpus, make_observation, save_corpus, segments_to_frames, frames_to_segments)
from .evaluation import EvalReport, benchmark_decoding, evaluate, moc_accuracy
from .model import ConfigError, ForwardOutput, ModelConfig, ModelParams, forward, init_params
from .objectives import LossBreakdown, LossConfig, compute_losses, hungarian_match, linear_sum_assignment
from .tensor import MaskError, NumericError, ShapeError, Tensor, grad_check, no_grad
from .training import (Checkpoint, CheckpointError, ScheduleConfig, TrainConfig, TrainingDiverged,
                       load_checkpoint, lr_at, save_checkpoint, train)

__version__ = "0.1.0"
