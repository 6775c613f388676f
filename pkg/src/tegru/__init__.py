"""T-E-GRU: a transformer encoder feeding a GRU, with recurrent baselines, for binary sentiment."""

from .model import Model, ModelConfig, ModelKind, build, load, save
from .tensor import Rng, Tape, Tensor, rng_seeded
from .textpipe import EmbeddingTable, EncodedBatch, FilterRules, Vocabulary
from .train import EvalReport, TrainConfig, evaluate, fit

__version__ = "0.1.0"
