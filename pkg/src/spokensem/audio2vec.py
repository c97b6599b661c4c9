"""Audio2vec: encode the middle third of an utterance, decode the outer thirds.

Two decoder variants:

* ``C`` (conditioned): the decoder state starts at the context embedding and
  each step is fed the previous true frame (teacher forcing; the first step
  sees a zero frame).
* ``U`` (unconditioned): the decoder state starts at a learned vector and
  each step is fed the context embedding.

The first and third chunks have separate, unshared decoders. Training
minimizes mean squared error over both chunks.
"""
import numpy as np

from . import nn
from .encoder import EncoderConfig, encoder_backward, encoder_forward, init_encoder, Encoder
from .errors import ConfigError, LengthError
from .frontend import NUM_FEATURES

VARIANTS = ("C", "U")
TARGETS = ("first", "third")


def split_thirds(x, min_chunk=6):
    """Split into ``(floor(T/3), floor(T/3), T - 2 floor(T/3))`` frames."""
    n = len(x)
    if n < 3 * min_chunk:
        raise LengthError(f"{n} frames; need at least {3 * min_chunk} to split into thirds")
    third = n // 3
    return x[:third], x[third : 2 * third], x[2 * third :]


def init_decoder(rng, prefix, variant, context_dim, hidden, out_dim=NUM_FEATURES, dtype=np.float32):
    in_dim = out_dim if variant == "C" else context_dim
    params = nn.init_gru_layer(rng, f"{prefix}.gru", in_dim, hidden, dtype)
    params.update(nn.init_linear(rng, f"{prefix}.F", out_dim, hidden, dtype))
    if variant == "U":
        params[f"{prefix}.h0"] = np.zeros(hidden, dtype=dtype)
    return params


def decoder_forward(context, targets, p, variant):
    """Batched decoding.

    ``context`` is ``(B, H)``; ``targets`` is a list of ``L_i x 13`` arrays.
    Returns predictions ``(B, L_max, 13)``, the validity mask and a cache.
    """
    bsz = context.shape[0]
    lengths = np.array([len(t) for t in targets])
    max_len = lengths.max()
    dtype = context.dtype
    mask = nn.lengths_to_mask(lengths, max_len, dtype)
    gru = nn.sub(p, "gru")
    if variant == "C":
        inputs = np.zeros((bsz, max_len, targets[0].shape[1]), dtype=dtype)
        for i, t in enumerate(targets):
            inputs[i, 1 : len(t)] = t[:-1]
        h0 = context
    else:
        inputs = np.broadcast_to(context[:, None, :], (bsz, max_len, context.shape[1])).copy()
        h0 = np.broadcast_to(p["h0"], (bsz, p["h0"].shape[0])).copy()
    states, c_gru = nn.gru_layer_forward(inputs, gru, h0=h0, mask=mask)
    preds, c_lin = nn.linear_forward(states, p["F"])
    return preds, mask, (c_gru, c_lin, variant)


def decoder_backward(dpreds, cache):
    """Returns ``(dcontext, grads)``."""
    c_gru, c_lin, variant = cache
    dstates, g_lin = nn.linear_backward(dpreds, c_lin)
    dinputs, dh0, g_gru = nn.gru_layer_backward(dstates, c_gru)
    grads = nn.prefixed(g_gru, "gru")
    grads["F"] = g_lin["M"]
    if variant == "C":
        dcontext = dh0
    else:
        dcontext = dinputs.sum(axis=1)
        grads["h0"] = dh0.sum(axis=0)
    return dcontext, grads


def decode_chunk_C(context, target, p):
    """Teacher-forced predictions for every frame of ``target``."""
    preds, _, _ = decoder_forward(np.asarray(context)[None], [np.asarray(target)], p, "C")
    return preds[0]


def decode_chunk_U(context, length, p):
    """Predict ``length`` frames from the context alone."""
    dummy = np.zeros((length, p["F"].shape[0]), dtype=np.asarray(context).dtype)
    preds, _, _ = decoder_forward(np.asarray(context)[None], [dummy], p, "U")
    return preds[0]


class Audio2Vec:
    """Shared encoder plus two unshared decoders (first and third chunk)."""

    def __init__(self, variant="C", encoder_config=EncoderConfig(), decoder_hidden=512,
                 seed=0, dtype=np.float32, params=None):
        variant = variant.upper()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown Audio2vec variant {variant!r}")
        if variant == "C" and decoder_hidden != encoder_config.output_dim:
            raise ConfigError("variant C needs decoder_hidden equal to the encoder output width")
        self.variant = variant
        self.encoder_config = encoder_config
        self.decoder_hidden = decoder_hidden
        if params is None:
            rng = np.random.default_rng(seed)
            params = init_encoder(encoder_config, rng, dtype)
            for target in TARGETS:
                params.update(init_decoder(rng, f"dec_{target}", variant,
                                           encoder_config.output_dim, decoder_hidden, dtype=dtype))
        self.params = params

    @property
    def name(self):
        return f"audio2vec-{self.variant.lower()}"

    def hyperparameters(self):
        return {"decoder_hidden": self.decoder_hidden}

    def min_length(self):
        return 3 * self.encoder_config.conv_size

    def predict(self, x):
        """Predicted first and third chunks for one utterance."""
        first, middle, third = split_thirds(np.asarray(x), self.encoder_config.conv_size)
        ctx = Encoder(self.params, self.encoder_config).encode(middle)
        out = []
        for target, chunk in zip(TARGETS, (first, third)):
            p = nn.sub(self.params, f"dec_{target}")
            if self.variant == "C":
                out.append(decode_chunk_C(ctx, chunk.astype(ctx.dtype), p))
            else:
                out.append(decode_chunk_U(ctx, len(chunk), p))
        return tuple(out)

    def loss(self, xs, speakers=None):
        return self.loss_and_grads(xs, speakers, need_grads=False)[0]

    def loss_and_grads(self, xs, speakers=None, need_grads=True):
        """Mean over utterances of the per-utterance MSE (frames x 13 dims, both chunks)."""
        dtype = self.params["enc.conv.kernel"].dtype
        triples = [split_thirds(np.asarray(x, dtype=dtype), self.encoder_config.conv_size) for x in xs]
        bsz = len(triples)
        context, c_enc = encoder_forward(self.params, self.encoder_config, [t[1] for t in triples])
        denom = np.array([(len(t[0]) + len(t[2])) * t[0].shape[1] for t in triples], dtype=dtype)

        loss = 0.0
        parts = []
        for target, idx in zip(TARGETS, (0, 2)):
            chunks = [t[idx] for t in triples]
            p = nn.sub(self.params, f"dec_{target}")
            preds, mask, cache = decoder_forward(context, chunks, p, self.variant)
            padded = np.zeros_like(preds)
            for i, c in enumerate(chunks):
                padded[i, : len(c)] = c
            err = (preds - padded) * mask[:, :, None]
            loss += float(np.sum(np.sum(err**2, axis=(1, 2)) / denom)) / bsz
            parts.append((target, err, cache))
        nn.check_finite_loss(loss)
        if not need_grads:
            return loss, None

        grads = {}
        dcontext = np.zeros_like(context)
        for target, err, cache in parts:
            dpreds = 2.0 * err / (denom[:, None, None] * bsz)
            dctx, g = decoder_backward(dpreds, cache)
            dcontext += dctx
            grads.update(nn.prefixed(g, f"dec_{target}"))
        grads.update(encoder_backward(dcontext, c_enc))
        return loss, grads

    def embed(self, xs, batch_size=64):
        """Whole-utterance unit-norm embeddings."""
        return Encoder(self.params, self.encoder_config).encode_batch(xs, batch_size)


def audio2vec_loss(x, model):
    """Loss of a single utterance."""
    return model.loss([x])
