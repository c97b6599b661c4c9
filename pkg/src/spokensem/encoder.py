"""Utterance encoder: strided conv -> GRU stack -> attention pooling -> L2 norm."""
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import LengthError
from .frontend import NUM_FEATURES


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = NUM_FEATURES
    conv_size: int = 6
    conv_channels: int = 64
    conv_stride: int = 3
    gru_layers: int = 5
    gru_hidden: int = 512
    attention_hidden: int = 512

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.conv_stride > self.conv_size:
            raise ValueError("conv_stride must not exceed conv_size")

    @property
    def output_dim(self):
        return self.gru_hidden


def init_encoder(config, rng, dtype=np.float32, prefix="enc"):
    params = {}
    params.update(nn.init_conv1d(rng, f"{prefix}.conv", config.conv_size, config.input_dim,
                                 config.conv_channels, dtype))
    params.update(nn.init_gru_stack(rng, f"{prefix}.gru", config.conv_channels, config.gru_hidden,
                                    config.gru_layers, dtype))
    params.update(nn.init_attention(rng, f"{prefix}.attn", config.gru_hidden,
                                    config.attention_hidden, dtype))
    return params


def pad_batch(xs, dtype):
    lengths = np.array([len(x) for x in xs])
    out = np.zeros((len(xs), lengths.max(), xs[0].shape[1]), dtype=dtype)
    for i, x in enumerate(xs):
        out[i, : len(x)] = x
    return out, lengths


def encoder_forward(params, config, xs, prefix="enc"):
    """Encode a list of ``T_i x input_dim`` matrices into unit vectors ``(B, H)``."""
    for i, x in enumerate(xs):
        if len(x) < config.conv_size:
            raise LengthError(
                f"utterance {i}: {len(x)} frames, encoder needs at least {config.conv_size}"
            )
    dtype = params[f"{prefix}.conv.kernel"].dtype
    padded, lengths = pad_batch(xs, dtype)
    conv_out, c_conv = nn.conv1d_forward(
        padded, params[f"{prefix}.conv.kernel"], params[f"{prefix}.conv.bias"], config.conv_stride
    )
    steps = nn.conv_output_length(lengths, config.conv_size, config.conv_stride)
    mask = nn.lengths_to_mask(steps, conv_out.shape[1], dtype)
    states, c_gru = nn.gru_stack_forward(conv_out, nn.sub(params, f"{prefix}.gru"),
                                         config.gru_layers, mask)
    pooled, c_attn = nn.attention_forward(states, params[f"{prefix}.attn.W"],
                                          params[f"{prefix}.attn.U"], mask)
    emb, c_norm = nn.l2_normalize_forward(pooled)
    cache = {"conv": c_conv, "gru": c_gru, "attn": c_attn, "norm": c_norm,
             "steps": steps, "prefix": prefix}
    return emb, cache


def encoder_backward(demb, cache):
    prefix = cache["prefix"]
    grads = {}
    d = nn.l2_normalize_backward(demb, cache["norm"])
    d, g = nn.attention_backward(d, cache["attn"])
    grads.update(nn.prefixed(g, f"{prefix}.attn"))
    d, g = nn.gru_stack_backward(d, cache["gru"])
    grads.update(nn.prefixed(g, f"{prefix}.gru"))
    _, g = nn.conv1d_backward(d, cache["conv"])
    grads.update(nn.prefixed(g, f"{prefix}.conv"))
    return grads


def attention_weights(cache):
    """Per-utterance attention weights over the valid conv steps."""
    alpha = cache["attn"]["alpha"]
    return [alpha[i, :n] for i, n in enumerate(cache["steps"])]


class Encoder:
    """Inference wrapper around an encoder parameter set."""

    def __init__(self, params, config, prefix="enc"):
        self.params = params
        self.config = config
        self.prefix = prefix

    def encode(self, x):
        return self.encode_batch([x])[0]

    def encode_batch(self, xs, batch_size=64):
        dtype = self.params[f"{self.prefix}.conv.kernel"].dtype
        xs = [np.asarray(x, dtype=dtype) for x in xs]
        for i, x in enumerate(xs):
            if len(x) < self.config.conv_size:
                raise LengthError(
                    f"utterance {i}: {len(x)} frames, encoder needs at least {self.config.conv_size}"
                )
        out = np.empty((len(xs), self.config.output_dim), dtype=dtype)
        for start in range(0, len(xs), batch_size):
            chunk = xs[start : start + batch_size]
            emb, _ = encoder_forward(self.params, self.config, chunk, self.prefix)
            out[start : start + len(chunk)] = emb
        return out

    def attention(self, x):
        dtype = self.params[f"{self.prefix}.conv.kernel"].dtype
        _, cache = encoder_forward(self.params, self.config, [np.asarray(x, dtype=dtype)], self.prefix)
        return attention_weights(cache)[0]
