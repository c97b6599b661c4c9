"""SegMatch: match the beginning and end of each utterance against in-batch negatives.

Each utterance is cut around an erased center window; both halves go through
the shared encoder and are then projected by separate matrices (``B`` for
beginnings, ``E`` for ends). The loss is a margin ranking loss over cosine
distances. An optional speaker classifier attached through gradient reversal
pushes the encoder towards speaker-invariant embeddings.
"""
from dataclasses import dataclass

import numpy as np

from . import nn
from .encoder import Encoder, EncoderConfig, encoder_backward, encoder_forward, init_encoder
from .errors import BatchError, DataError, LengthError, NumericsError


def split_halves(x, erased=30, min_len=6):
    """Return ``(x[:m], x[m+erased:])`` with ``m = (n - erased) // 2``."""
    n = len(x)
    m = (n - erased) // 2
    if m < min_len or n - m - erased < min_len:
        raise LengthError(f"{n} frames too short to split around a {erased}-frame gap")
    return x[:m], x[m + erased :]


def cosine_distance(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise NumericsError("cosine distance undefined for a zero vector")
    return float(1.0 - u @ v / (nu * nv))


def segmatch_loss_forward(b, e, alpha=0.2):
    """Margin loss for matched rows of ``b`` and ``e`` (both ``(n, D)``).

    Returns the loss and ``(db, de)``.
    """
    n = b.shape[0]
    if n < 2:
        raise BatchError(f"SegMatch needs at least 2 pairs per batch, got {n}")
    bn, c_b = nn.l2_normalize_forward(b)
    en, c_e = nn.l2_normalize_forward(e)
    dist = 1.0 - bn @ en.T
    diag = np.diag(dist)
    off = ~np.eye(n, dtype=bool)
    # cost_b[j, i]: negative beginning j against end i
    cost_b = (alpha + diag[None, :] - dist) * off
    # cost_e[i, j]: beginning i against negative end j
    cost_e = (alpha + diag[:, None] - dist) * off
    loss = float(np.maximum(cost_b, 0).sum() + np.maximum(cost_e, 0).sum())

    act_b = ((cost_b > 0) & off).astype(b.dtype)
    act_e = ((cost_e > 0) & off).astype(b.dtype)
    ddist = -act_b - act_e
    ddist[np.diag_indices(n)] += act_b.sum(axis=0) + act_e.sum(axis=1)
    dsim = -ddist
    dbn = dsim @ en
    den = dsim.T @ bn
    return loss, (nn.l2_normalize_backward(dbn, c_b), nn.l2_normalize_backward(den, c_e))


def segmatch_loss(b, e, alpha=0.2):
    return segmatch_loss_forward(np.asarray(b, dtype=np.float64), np.asarray(e, dtype=np.float64), alpha)[0]


@dataclass(frozen=True)
class AdversaryConfig:
    num_speakers: int
    hidden: int = 512
    lam: float = 1.0
    weight: float = 1.0


def init_adversary(rng, config, in_dim, dtype=np.float32, prefix="adv"):
    params = nn.init_linear(rng, f"{prefix}.W1", config.hidden, in_dim, dtype)
    params[f"{prefix}.b1"] = np.zeros(config.hidden, dtype=dtype)
    params.update(nn.init_linear(rng, f"{prefix}.W2", config.num_speakers, config.hidden, dtype))
    params[f"{prefix}.b2"] = np.zeros(config.num_speakers, dtype=dtype)
    return params


def adversary_loss_forward(emb, labels, p, lam=1.0, reverse=True):
    """Speaker cross-entropy on ``emb`` through a gradient-reversal layer.

    Returns the loss, the gradient reaching ``emb`` and the classifier
    gradients. ``reverse=False`` disables the reversal (plain gradient).
    """
    labels = np.asarray(labels)
    num_speakers = p["W2"].shape[0]
    if labels.min() < 0 or labels.max() >= num_speakers:
        raise DataError(f"speaker label outside [0, {num_speakers})")
    x, lam_cache = nn.grad_reverse_forward(emb, lam)
    pre, c1 = nn.linear_forward(x, p["W1"], p["b1"])
    hidden = np.maximum(pre, 0)
    logits, c2 = nn.linear_forward(hidden, p["W2"], p["b2"])
    loss, dlogits = nn.softmax_cross_entropy(logits, labels)
    dhidden, g2 = nn.linear_backward(dlogits, c2)
    dpre = dhidden * (pre > 0)
    dx, g1 = nn.linear_backward(dpre, c1)
    grads = {"W1": g1["M"], "b1": g1["b"], "W2": g2["M"], "b2": g2["b"]}
    demb = nn.grad_reverse_backward(dx, lam_cache) if reverse else dx
    return float(loss), demb, grads


def adversary_predict(emb, p):
    hidden = np.maximum(emb @ p["W1"].T + p["b1"], 0)
    return np.argmax(hidden @ p["W2"].T + p["b2"], axis=1)


class SegMatch:
    """Shared encoder with beginning/end projections and optional speaker adversary."""

    name = "segmatch"

    def __init__(self, encoder_config=EncoderConfig(), projection_dim=512, margin=0.2,
                 erased=30, adversary=None, seed=0, dtype=np.float32, params=None):
        self.encoder_config = encoder_config
        self.projection_dim = projection_dim
        self.margin = margin
        self.erased = erased
        self.adversary = adversary
        if params is None:
            rng = np.random.default_rng(seed)
            h = encoder_config.output_dim
            params = init_encoder(encoder_config, rng, dtype)
            params.update(nn.init_linear(rng, "proj.B", projection_dim, h, dtype))
            params.update(nn.init_linear(rng, "proj.E", projection_dim, h, dtype))
            if adversary is not None:
                params.update(init_adversary(rng, adversary, h, dtype))
        self.params = params

    def hyperparameters(self):
        hp = {"projection_dim": self.projection_dim, "margin": self.margin, "erased": self.erased}
        if self.adversary is not None:
            a = self.adversary
            hp["adversary"] = {"num_speakers": a.num_speakers, "hidden": a.hidden,
                               "lam": a.lam, "weight": a.weight}
        return hp

    def min_length(self):
        return self.erased + 2 * self.encoder_config.conv_size

    def segment(self, xs):
        dtype = self.params["enc.conv.kernel"].dtype
        pairs = [split_halves(np.asarray(x, dtype=dtype), self.erased, self.encoder_config.conv_size)
                 for x in xs]
        return [p[0] for p in pairs], [p[1] for p in pairs]

    def project(self, xs):
        """Projected ``(b, e)`` segment embeddings for each utterance."""
        begins, ends = self.segment(xs)
        enc, _ = encoder_forward(self.params, self.encoder_config, begins + ends)
        n = len(xs)
        return enc[:n] @ self.params["proj.B"].T, enc[n:] @ self.params["proj.E"].T

    def loss(self, xs, speakers=None):
        return self.loss_and_grads(xs, speakers, need_grads=False)[0]

    def loss_terms(self, xs, speakers=None):
        """``(margin_loss, adversary_cross_entropy)``; the latter is 0 without an adversary."""
        terms = {}
        self.loss_and_grads(xs, speakers, need_grads=False, terms=terms)
        return terms["margin"], terms.get("adversary", 0.0)

    def loss_and_grads(self, xs, speakers=None, need_grads=True, terms=None):
        """Margin loss (+ weighted adversary cross-entropy when configured).

        ``speakers`` are integer labels, required only with an adversary.
        """
        n = len(xs)
        if n < 2:
            raise BatchError(f"SegMatch needs at least 2 utterances per batch, got {n}")
        begins, ends = self.segment(xs)
        enc, c_enc = encoder_forward(self.params, self.encoder_config, begins + ends)
        b, c_b = nn.linear_forward(enc[:n], self.params["proj.B"])
        e, c_e = nn.linear_forward(enc[n:], self.params["proj.E"])
        loss, (db, de) = segmatch_loss_forward(b, e, self.margin)
        if terms is not None:
            terms["margin"] = loss

        adv = None
        if self.adversary is not None:
            if speakers is None:
                raise DataError("speaker labels required when the adversary is enabled")
            labels = np.concatenate([np.asarray(speakers), np.asarray(speakers)])
            a_loss, a_demb, a_grads = adversary_loss_forward(
                enc, labels, nn.sub(self.params, "adv"), self.adversary.lam)
            loss += self.adversary.weight * a_loss
            if terms is not None:
                terms["adversary"] = a_loss
            adv = (a_demb, a_grads)
        nn.check_finite_loss(loss)
        if not need_grads:
            return loss, None

        grads = {}
        denc_b, g = nn.linear_backward(db, c_b)
        grads["proj.B"] = g["M"]
        denc_e, g = nn.linear_backward(de, c_e)
        grads["proj.E"] = g["M"]
        denc = np.concatenate([denc_b, denc_e], axis=0)
        if adv is not None:
            w = self.adversary.weight
            denc = denc + w * adv[0]
            grads.update({f"adv.{k}": w * v for k, v in adv[1].items()})
        grads.update(encoder_backward(denc, c_enc))
        return loss, grads

    def embed(self, xs, batch_size=64):
        """Whole-utterance unit-norm encoder outputs (no projection)."""
        return Encoder(self.params, self.encoder_config).encode_batch(xs, batch_size)
