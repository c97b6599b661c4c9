"""Differentiable building blocks with explicit forward/backward passes.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns the input gradient
together with a dict of parameter gradients. Sequences are batch-major
``(B, T, dim)`` arrays accompanied by a ``(B, T)`` validity mask of 0/1
values; masked steps never influence valid outputs.

Parameters live in plain ``dict[str, np.ndarray]`` containers keyed by
dotted names (``"enc.gru.l0.W_i"``), and gradients use the same keys.
"""
import numpy as np

from .errors import LengthError, MaskError, NumericsError


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lengths_to_mask(lengths, max_len, dtype=np.float64):
    lengths = np.asarray(lengths)
    return (np.arange(max_len)[None, :] < lengths[:, None]).astype(dtype)


# ---------------------------------------------------------------- init

def uniform_init(rng, shape, fan_in, dtype=np.float32):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_conv1d(rng, prefix, size, in_dim, channels, dtype=np.float32):
    return {
        f"{prefix}.kernel": uniform_init(rng, (size, in_dim, channels), size * in_dim, dtype),
        f"{prefix}.bias": np.zeros(channels, dtype=dtype),
    }


def init_gru_layer(rng, prefix, in_dim, hidden, dtype=np.float32):
    return {
        f"{prefix}.W_i": uniform_init(rng, (in_dim, 3 * hidden), in_dim, dtype),
        f"{prefix}.W_h": uniform_init(rng, (hidden, 3 * hidden), hidden, dtype),
        f"{prefix}.b_i": np.zeros(3 * hidden, dtype=dtype),
        f"{prefix}.b_h": np.zeros(3 * hidden, dtype=dtype),
    }


def init_gru_stack(rng, prefix, in_dim, hidden, layers, dtype=np.float32):
    params = {}
    for l in range(layers):
        params.update(init_gru_layer(rng, f"{prefix}.l{l}", in_dim if l == 0 else hidden, hidden, dtype))
    return params


def init_attention(rng, prefix, dim, hidden, dtype=np.float32):
    return {
        f"{prefix}.W": uniform_init(rng, (hidden, dim), dim, dtype),
        f"{prefix}.U": uniform_init(rng, (hidden,), hidden, dtype),
    }


def init_linear(rng, name, out_dim, in_dim, dtype=np.float32):
    return {name: uniform_init(rng, (out_dim, in_dim), in_dim, dtype)}


def sub(params, prefix):
    """View of the entries under ``prefix.`` with the prefix stripped."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def prefixed(grads, prefix):
    return {f"{prefix}.{k}": v for k, v in grads.items()}


# ---------------------------------------------------------------- conv1d

def conv_output_length(length, size, stride):
    length = np.asarray(length)
    if np.any(length < size):
        raise LengthError(f"sequence of length {np.min(length)} shorter than conv kernel {size}")
    return 1 + (length - size) // stride


def conv1d_forward(x, kernel, bias, stride):
    """Valid (unpadded) strided correlation plus bias.

    ``x`` is ``(B, T, in_dim)`` or ``(T, in_dim)``; ``kernel`` is
    ``(size, in_dim, channels)``.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    size, in_dim, channels = kernel.shape
    t_out = int(conv_output_length(x.shape[1], size, stride))
    idx = stride * np.arange(t_out)[:, None] + np.arange(size)[None, :]
    cols = x[:, idx, :].reshape(x.shape[0], t_out, size * in_dim)
    out = cols @ kernel.reshape(size * in_dim, channels) + bias
    cache = (x.shape, cols, kernel, stride, squeeze)
    return (out[0] if squeeze else out), cache


def conv1d_backward(dout, cache):
    x_shape, cols, kernel, stride, squeeze = cache
    if squeeze:
        dout = dout[None]
    size, in_dim, channels = kernel.shape
    t_out = dout.shape[1]
    flat = kernel.reshape(size * in_dim, channels)
    dkernel = np.einsum("btc,btd->cd", cols, dout).reshape(kernel.shape)
    dbias = dout.sum(axis=(0, 1))
    dcols = (dout @ flat.T).reshape(dout.shape[0], t_out, size, in_dim)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    steps = stride * np.arange(t_out)
    for j in range(size):
        dx[:, steps + j, :] += dcols[:, :, j, :]
    return (dx[0] if squeeze else dx), {"kernel": dkernel, "bias": dbias}


# ---------------------------------------------------------------- GRU
#
# Gate layout along the 3H axis is [reset, update, candidate]. The reset
# gate multiplies the recurrent term after its matrix product:
#   n_t = tanh(W_in x_t + b_in + r_t * (W_hn h_{t-1} + b_hn))
#   h_t = (1 - z_t) * n_t + z_t * h_{t-1}
# Masked steps carry h_{t-1} forward unchanged.

def gru_cell(x, h, p):
    """One GRU step on ``(B, in)`` input and ``(B, H)`` state."""
    hid = h.shape[-1]
    gi = x @ p["W_i"] + p["b_i"]
    gh = h @ p["W_h"] + p["b_h"]
    r = sigmoid(gi[:, :hid] + gh[:, :hid])
    z = sigmoid(gi[:, hid : 2 * hid] + gh[:, hid : 2 * hid])
    n = np.tanh(gi[:, 2 * hid :] + r * gh[:, 2 * hid :])
    return (1.0 - z) * n + z * h


def gru_layer_forward(x, p, h0=None, mask=None):
    """Run one GRU layer over ``(B, T, in)``; returns all states ``(B, T, H)``."""
    bsz, steps, _ = x.shape
    hid = p["W_h"].shape[0]
    h = np.zeros((bsz, hid), dtype=x.dtype) if h0 is None else h0
    if mask is None:
        mask = np.ones((bsz, steps), dtype=x.dtype)
    gi_all = x @ p["W_i"] + p["b_i"]
    out = np.empty((bsz, steps, hid), dtype=x.dtype)
    r_all = np.empty_like(out)
    z_all = np.empty_like(out)
    n_all = np.empty_like(out)
    ghn_all = np.empty_like(out)
    hprev_all = np.empty_like(out)
    for t in range(steps):
        gi = gi_all[:, t]
        gh = h @ p["W_h"] + p["b_h"]
        r = sigmoid(gi[:, :hid] + gh[:, :hid])
        z = sigmoid(gi[:, hid : 2 * hid] + gh[:, hid : 2 * hid])
        ghn = gh[:, 2 * hid :]
        n = np.tanh(gi[:, 2 * hid :] + r * ghn)
        h_new = (1.0 - z) * n + z * h
        m = mask[:, t : t + 1]
        hprev_all[:, t] = h
        h = m * h_new + (1.0 - m) * h
        out[:, t] = h
        r_all[:, t], z_all[:, t], n_all[:, t], ghn_all[:, t] = r, z, n, ghn
    cache = (x, p, mask, hprev_all, r_all, z_all, n_all, ghn_all, h0 is not None)
    return out, cache


def gru_layer_backward(dout, cache, dh_last=None):
    """Backprop through time. Returns ``(dx, dh0, grads)``; ``dh0`` is None
    when the forward pass used the implicit zero initial state."""
    x, p, mask, hprev_all, r_all, z_all, n_all, ghn_all, has_h0 = cache
    bsz, steps, _ = x.shape
    hid = p["W_h"].shape[0]
    W_h = p["W_h"]
    dh = np.zeros((bsz, hid), dtype=dout.dtype) if dh_last is None else dh_last.copy()
    dgi_all = np.empty((bsz, steps, 3 * hid), dtype=dout.dtype)
    dW_h = np.zeros_like(W_h)
    db_h = np.zeros(3 * hid, dtype=dout.dtype)
    for t in range(steps - 1, -1, -1):
        dh = dh + dout[:, t]
        m = mask[:, t : t + 1]
        r, z, n, ghn, h_prev = r_all[:, t], z_all[:, t], n_all[:, t], ghn_all[:, t], hprev_all[:, t]
        dh_new = m * dh
        dh_prev = (1.0 - m) * dh + dh_new * z
        dan = dh_new * (1.0 - z) * (1.0 - n * n)
        daz = dh_new * (h_prev - n) * z * (1.0 - z)
        dar = dan * ghn * r * (1.0 - r)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        dgi_all[:, t] = np.concatenate([dar, daz, dan], axis=1)
        dW_h += h_prev.T @ dgh
        db_h += dgh.sum(axis=0)
        dh = dh_prev + dgh @ W_h.T
    grads = {
        "W_i": np.einsum("bti,btg->ig", x, dgi_all),
        "W_h": dW_h,
        "b_i": dgi_all.sum(axis=(0, 1)),
        "b_h": db_h,
    }
    dx = dgi_all @ p["W_i"].T
    return dx, (dh if has_h0 else None), grads


def gru_stack_forward(x, params, layers, mask=None):
    """Stack of GRU layers with zero initial states; returns top-layer states.

    ``params`` holds ``l{k}.W_i`` ... for each layer ``k``.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    caches = []
    h = x
    for l in range(layers):
        h, c = gru_layer_forward(h, sub(params, f"l{l}"), mask=mask)
        caches.append(c)
    return (h[0] if squeeze else h), (caches, squeeze)


def gru_stack_backward(dout, cache):
    caches, squeeze = cache
    if squeeze:
        dout = dout[None]
    grads = {}
    d = dout
    for l in range(len(caches) - 1, -1, -1):
        d, _, g = gru_layer_backward(d, caches[l])
        grads.update(prefixed(g, f"l{l}"))
    return (d[0] if squeeze else d), grads


# ---------------------------------------------------------------- attention

def attention_forward(x, W, U, mask=None):
    """Attention pooling: ``sum_t a_t x_t`` with ``a = softmax_t(U tanh(W x_t))``.

    ``x`` is ``(B, T, H)`` (or ``(T, H)``), ``W`` is ``(H_a, H)``, ``U`` is
    ``(H_a,)``. Masked steps get zero weight. Returns pooled ``(B, H)`` and
    the cache; the weights are ``cache["alpha"]``.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=x.dtype)
    valid = mask > 0
    if not np.all(valid.any(axis=1)):
        raise MaskError("attention mask has a row with no valid time step")
    a = np.tanh(x @ W.T)
    scores = a @ U
    scores = np.where(valid, scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.where(valid, np.exp(scores), 0.0)
    alpha = (e / e.sum(axis=1, keepdims=True)).astype(x.dtype)
    out = np.einsum("bt,bth->bh", alpha, x)
    cache = {"x": x, "W": W, "U": U, "a": a, "alpha": alpha, "squeeze": squeeze}
    return (out[0] if squeeze else out), cache


def attention_backward(dout, cache):
    x, W, U, a, alpha = cache["x"], cache["W"], cache["U"], cache["a"], cache["alpha"]
    if cache["squeeze"]:
        dout = dout[None]
    dx = alpha[:, :, None] * dout[:, None, :]
    dalpha = np.einsum("bth,bh->bt", x, dout)
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    dU = np.einsum("btk,bt->k", a, ds)
    dpre = ds[:, :, None] * U[None, None, :] * (1.0 - a * a)
    dW = np.einsum("btk,bth->kh", dpre, x)
    dx += dpre @ W
    return (dx[0] if cache["squeeze"] else dx), {"W": dW, "U": dU}


# ---------------------------------------------------------------- small ops

def l2_normalize_forward(x):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise NumericsError("cannot L2-normalize a zero or non-finite vector")
    y = x / norm
    return y, (y, norm)


def l2_normalize_backward(dy, cache):
    y, norm = cache
    return (dy - y * np.sum(y * dy, axis=-1, keepdims=True)) / norm


def linear_forward(x, M, b=None):
    """``y = x M^T (+ b)`` for ``M`` of shape ``(out, in)``."""
    y = x @ M.T
    if b is not None:
        y = y + b
    return y, (x, M, b is not None)


def linear_backward(dy, cache):
    x, M, has_bias = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    grads = {"M": dy2.T @ x2}
    if has_bias:
        grads["b"] = dy2.sum(axis=0)
    return dy @ M, grads


def grad_reverse_forward(x, lam):
    """Identity on the way forward."""
    return x, lam


def grad_reverse_backward(dy, lam):
    return -lam * dy


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


# ---------------------------------------------------------------- optimisation

def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_gradients(grads, max_norm=2.0):
    """Rescale all gradients jointly so their global L2 norm is <= ``max_norm``."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericsError("non-finite gradient norm")
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}, norm


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, lr=0.0002, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)
        return params

    def state_dict(self):
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state_dict(self, state):
        self.step_count = int(state["step"])
        self.m = {k: v.copy() for k, v in state["m"].items()}
        self.v = {k: v.copy() for k, v in state["v"].items()}


def check_finite_loss(loss):
    if not np.isfinite(loss):
        raise NumericsError(f"non-finite loss {loss}")
    return loss
