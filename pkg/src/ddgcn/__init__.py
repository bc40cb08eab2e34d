"""Dynamic deep graph convolution over unordered post sets."""

from . import autodiff, corpus, dgcn, harness, l2c, model
from .autodiff import Tensor, backward, check_gradients, stop_gradient
from .corpus import UserSample, Vocabulary, encode_bag, load_jsonl, load_precomputed, synth_generate
from .model import ForwardTrace, ModelConfig, forward, init_params, loss, predict

__version__ = "0.1.0"
