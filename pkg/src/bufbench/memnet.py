"""End-to-end memory network over token grids, built on plain numpy.

The forward pass embeds every line of a program twice (value and address
embeddings), weights tokens with a fixed position encoding, then runs H
attention hops: softmax addressing of the memory against the current query
state, a readout, a per-hop linear map, batch normalization, and a residual
update of the query state. A linear softmax classifier reads the final
state. Training is plain reverse-mode differentiation of this exact graph
(gradients are finite-difference checked in the test suite) with Adam and
class-balanced batches.

All arithmetic is float64. Padding token id 0 owns the all-zero row 0 of
both embedding matrices, which is never updated, and attention logits of
padded rows are masked to -inf so no probability mass leaks onto padding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tokenizer import TensorDataset

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BN_EPS = 1e-5
BN_MOMENTUM = 0.99
LOSS_CLAMP = 1e-12

CKPT_MAGIC = b"BUFBENCH-CKPT1\n"


class MemNetError(ValueError):
    """Shape/vocabulary integrity violation."""


class NumericError(ArithmeticError):
    """A non-finite value appeared in the forward pass."""

    def __init__(self, hop: int, what: str):
        self.hop = hop
        super().__init__(f"non-finite {what} at hop {hop}")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


@dataclass(frozen=True)
class HyperParams:
    dim: int = 32
    hops: int = 3
    classes: int = 4
    dropout: float = 0.3
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def validate(self) -> None:
        if min(self.dim, self.hops, self.classes) < 1:
            raise MemNetError("dim, hops, and classes must all be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise MemNetError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.batch_size % self.classes != 0:
            raise MemNetError("batch_size must be a positive multiple of classes")
        if self.epochs < 0:
            raise MemNetError("epochs must be >= 0")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim, "hops": self.hops, "classes": self.classes,
            "dropout": self.dropout, "lr": self.lr, "epochs": self.epochs,
            "batch_size": self.batch_size, "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "HyperParams":
        return HyperParams(
            dim=int(d["dim"]), hops=int(d["hops"]), classes=int(d["classes"]),
            dropout=float(d["dropout"]), lr=float(d["lr"]), epochs=int(d["epochs"]),
            batch_size=int(d["batch_size"]), seed=int(d["seed"]),
        )


@dataclass
class MemNetParams:
    e_val: np.ndarray    # (V, d), row 0 fixed at zero
    e_addr: np.ndarray   # (V, d), row 0 fixed at zero
    r_hop: np.ndarray    # (H, d, d)
    gamma: np.ndarray    # (H, d)
    beta: np.ndarray     # (H, d)
    run_mean: np.ndarray  # (H, d), batch-norm running statistics
    run_var: np.ndarray   # (H, d)
    w: np.ndarray        # (C, d)

    LEARNABLE = ("e_val", "e_addr", "r_hop", "gamma", "beta", "w")

    @property
    def vocab_size(self) -> int:
        return self.e_val.shape[0]

    @property
    def dim(self) -> int:
        return self.e_val.shape[1]

    @property
    def hops(self) -> int:
        return self.r_hop.shape[0]

    @property
    def classes(self) -> int:
        return self.w.shape[0]

    def learnables(self):
        for name in self.LEARNABLE:
            yield name, getattr(self, name)

    def copy(self) -> "MemNetParams":
        return MemNetParams(**{
            f: getattr(self, f).copy()
            for f in ("e_val", "e_addr", "r_hop", "gamma", "beta",
                      "run_mean", "run_var", "w")
        })


def init_params(vocab_size: int, hyper: HyperParams,
                rng: np.random.Generator) -> MemNetParams:
    d, h, c = hyper.dim, hyper.hops, hyper.classes
    e_val = rng.normal(0.0, 0.1, size=(vocab_size, d))
    e_addr = rng.normal(0.0, 0.1, size=(vocab_size, d))
    e_val[0] = 0.0
    e_addr[0] = 0.0
    return MemNetParams(
        e_val=e_val,
        e_addr=e_addr,
        r_hop=rng.normal(0.0, 0.1, size=(h, d, d)),
        gamma=np.ones((h, d)),
        beta=np.zeros((h, d)),
        run_mean=np.zeros((h, d)),
        run_var=np.ones((h, d)),
        w=rng.normal(0.0, 0.1, size=(c, d)),
    )


def position_encoding(n_tokens: int, dim: int) -> np.ndarray:
    """Fixed token-position weights l[j, k] = (1 - j/J) - (k/d)(1 - 2j/J),
    with 1-based j and k."""
    j = np.arange(1, n_tokens + 1, dtype=np.float64)[:, None]
    k = np.arange(1, dim + 1, dtype=np.float64)[None, :]
    return (1.0 - j / n_tokens) - (k / dim) * (1.0 - 2.0 * j / n_tokens)


def embed_lines(grids: np.ndarray, emb: np.ndarray, pos: np.ndarray,
                dropout_p: float = 0.0, train: bool = False,
                rng: np.random.Generator | None = None):
    """Position-weighted token-sum embedding of lines.

    ``grids`` has shape (..., J); result has shape (..., d). Padding ids hit
    the all-zero row 0 and contribute nothing. Dropout is inverted (scaled
    at train time, identity in eval mode); returns (embedded, mask).
    """
    if int(grids.max(initial=0)) >= emb.shape[0]:
        raise MemNetError("token id out of embedding range")
    gathered = emb[grids]                      # (..., J, d)
    m = np.einsum("...jd,jd->...d", gathered, pos)
    mask = None
    if train and dropout_p > 0.0:
        mask = (rng.random(m.shape) >= dropout_p) / (1.0 - dropout_p)
        m = m * mask
    return m, mask


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class ForwardCache:
    grids: np.ndarray
    q_tokens: np.ndarray
    pos: np.ndarray
    nonpad: np.ndarray
    m_val: np.ndarray
    m_addr: np.ndarray
    mask_val: np.ndarray | None
    mask_addr: np.ndarray | None
    hop_u: list = field(default_factory=list)      # u entering each hop, plus final
    hop_p: list = field(default_factory=list)
    hop_o: list = field(default_factory=list)
    hop_rhat: list = field(default_factory=list)
    bn_mu: list = field(default_factory=list)
    bn_var: list = field(default_factory=list)
    probs: np.ndarray | None = None
    train: bool = False


def forward(params: MemNetParams, grids: np.ndarray, query_rows: np.ndarray,
            dropout_p: float = 0.0, train: bool = False,
            rng: np.random.Generator | None = None):
    """Batched forward pass; returns (class probabilities, cache).

    ``grids`` is (B, N, J) token ids, ``query_rows`` the 0-based row of each
    batch element's query line (which must be a real, non-pad row).
    """
    grids = np.asarray(grids)
    if grids.ndim == 2:
        grids = grids[None]
    query_rows = np.atleast_1d(np.asarray(query_rows))
    b, n, j = grids.shape
    d = params.dim

    nonpad = grids[:, :, 0] != 0
    if not nonpad[np.arange(b), query_rows].all():
        raise MemNetError("query_row points at a padded row")

    pos = position_encoding(j, d)
    m_val, mask_val = embed_lines(grids, params.e_val, pos, dropout_p, train, rng)
    m_addr, mask_addr = embed_lines(grids, params.e_addr, pos, dropout_p, train, rng)

    q_tokens = grids[np.arange(b), query_rows]            # (B, J)
    u, _ = embed_lines(q_tokens, params.e_addr, pos)      # (B, d), no dropout

    cache = ForwardCache(grids=grids, q_tokens=q_tokens, pos=pos, nonpad=nonpad,
                         m_val=m_val, m_addr=m_addr,
                         mask_val=mask_val, mask_addr=mask_addr, train=train)

    for h in range(params.hops):
        cache.hop_u.append(u)
        logits = np.einsum("bnd,bd->bn", m_addr, u)
        logits = np.where(nonpad, logits, -np.inf)
        p = _softmax(logits, axis=1)
        o = np.einsum("bn,bnd->bd", p, m_val)
        r = o @ params.r_hop[h].T
        if train:
            mu = r.mean(axis=0)
            var = r.var(axis=0)
        else:
            mu = params.run_mean[h]
            var = params.run_var[h]
        rhat = (r - mu) / np.sqrt(var + BN_EPS)
        s = params.gamma[h] * rhat + params.beta[h]
        if not np.isfinite(s).all():
            raise NumericError(h + 1, "hop output")
        u = u + s
        cache.hop_p.append(p)
        cache.hop_o.append(o)
        cache.hop_rhat.append(rhat)
        cache.bn_mu.append(mu)
        cache.bn_var.append(var)

    cache.hop_u.append(u)
    probs = _softmax(u @ params.w.T, axis=1)
    if not np.isfinite(probs).all():
        raise NumericError(params.hops, "class probabilities")
    cache.probs = probs
    return probs, cache


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> tuple[float, int]:
    """(mean -log p[label], number of probabilities clamped to eps)."""
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(labels)
    picked = probs[np.arange(len(labels)), labels]
    clamped = int((picked < LOSS_CLAMP).sum())
    return float(-np.log(np.maximum(picked, LOSS_CLAMP)).mean()), clamped


def _token_bags(ids: np.ndarray, vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Position-weighted token-count matrices for embedding gradients.

    The position encoding is rank-2 in (j, k): l[j, k] = a_j + (k/d) b_j
    with a_j = 1 - j/J and b_j = 2j/J - 1. Returns (Ca, Cb) of shape
    (rows, V) with Ca[r, v] = sum_j a_j [ids[r, j] == v] (Cb likewise), so
    the scatter of position-weighted gradients becomes two matmuls.
    """
    rows, j = ids.shape
    pos = np.arange(1, j + 1, dtype=np.float64)
    a = 1.0 - pos / j
    b = 2.0 * pos / j - 1.0
    flat = ids.reshape(-1).astype(np.int64)
    offsets = np.repeat(np.arange(rows, dtype=np.int64) * vocab_size, j)
    keys = offsets + flat
    ca = np.bincount(keys, weights=np.tile(a, rows),
                     minlength=rows * vocab_size).reshape(rows, vocab_size)
    cb = np.bincount(keys, weights=np.tile(b, rows),
                     minlength=rows * vocab_size).reshape(rows, vocab_size)
    return ca, cb


def _embedding_grad(grad: np.ndarray, ids: np.ndarray, dm: np.ndarray) -> None:
    """grad[v] += sum over tokens of l_j * dm_row, for ids of shape (R, J)."""
    vocab_size, d = grad.shape
    ca, cb = _token_bags(ids, vocab_size)
    kscale = np.arange(1, d + 1, dtype=np.float64) / d
    flat = dm.reshape(-1, d)
    grad += ca.T @ flat
    grad += cb.T @ (flat * kscale)


def backward(params: MemNetParams, cache: ForwardCache,
             labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy w.r.t. every learnable tensor.

    Requires a train-mode cache (batch-norm backward uses the cached batch
    statistics). Row 0 of both embedding gradients is identically zero.
    """
    labels = np.atleast_1d(labels)
    probs = cache.probs
    b, c = probs.shape
    if len(labels) != b:
        raise MemNetError("labels do not match the cached batch")
    d = params.dim

    grads = {name: np.zeros_like(arr) for name, arr in params.learnables()}

    onehot = np.zeros_like(probs)
    onehot[np.arange(b), labels] = 1.0
    dz = (probs - onehot) / b                    # (B, C)
    u_final = cache.hop_u[-1]
    grads["w"] += dz.T @ u_final
    du = dz @ params.w                           # (B, d)

    dm_val = np.zeros_like(cache.m_val)
    dm_addr = np.zeros_like(cache.m_addr)

    for h in range(params.hops - 1, -1, -1):
        ds = du                                  # residual: u_out = u_in + s
        rhat = cache.hop_rhat[h]
        var = cache.bn_var[h]
        grads["gamma"][h] += (ds * rhat).sum(axis=0)
        grads["beta"][h] += ds.sum(axis=0)
        drhat = ds * params.gamma[h]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        dr = inv * (drhat - drhat.mean(axis=0)
                    - rhat * (drhat * rhat).mean(axis=0))
        o = cache.hop_o[h]
        grads["r_hop"][h] += dr.T @ o
        do = dr @ params.r_hop[h]
        p = cache.hop_p[h]
        dp = np.einsum("bd,bnd->bn", do, cache.m_val)
        dm_val += p[:, :, None] * do[:, None, :]
        dlog = p * (dp - (dp * p).sum(axis=1, keepdims=True))
        u_in = cache.hop_u[h]
        du = du + np.einsum("bn,bnd->bd", dlog, cache.m_addr)
        dm_addr += dlog[:, :, None] * u_in[:, None, :]

    if cache.mask_val is not None:
        dm_val = dm_val * cache.mask_val
    if cache.mask_addr is not None:
        dm_addr = dm_addr * cache.mask_addr

    # position-weighted scatter back into the embedding tables
    b_, n_, j_ = cache.grids.shape
    line_ids = cache.grids.reshape(b_ * n_, j_)
    _embedding_grad(grads["e_val"], line_ids, dm_val.reshape(b_ * n_, d))
    _embedding_grad(grads["e_addr"], line_ids, dm_addr.reshape(b_ * n_, d))
    _embedding_grad(grads["e_addr"], cache.q_tokens, du)

    grads["e_val"][0] = 0.0
    grads["e_addr"][0] = 0.0
    return grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def adam_init(params: MemNetParams) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(arr) for name, arr in params.learnables()},
        v={name: np.zeros_like(arr) for name, arr in params.learnables()},
    )


def adam_step(params: MemNetParams, grads: dict, state: AdamState,
              lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    correct1 = 1.0 - state.beta1 ** state.t
    correct2 = 1.0 - state.beta2 ** state.t
    for name, arr in params.learnables():
        g = grads[name]
        if g.shape != arr.shape:
            raise MemNetError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        arr -= lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
    params.e_val[0] = 0.0
    params.e_addr[0] = 0.0


def balanced_batches(labels: np.ndarray, batch_size: int, n_batches: int,
                     rng: np.random.Generator):
    """Yield index batches with equal per-class counts.

    Samples with replacement from per-class pools; deterministic for a given
    generator state. Every class must be populated and batch_size must be a
    multiple of the class count.
    """
    labels = np.asarray(labels)
    classes = sorted(int(c) for c in np.unique(labels))
    n_classes = max(classes) + 1
    pools = [np.flatnonzero(labels == c) for c in range(n_classes)]
    for c, pool in enumerate(pools):
        if len(pool) == 0:
            raise MemNetError(f"class {c} has no samples")
    if batch_size % n_classes != 0:
        raise MemNetError(f"batch_size {batch_size} not divisible by {n_classes} classes")
    quota = batch_size // n_classes
    for _ in range(n_batches):
        parts = [rng.choice(pool, size=quota, replace=True) for pool in pools]
        yield np.concatenate(parts)


@dataclass
class TrainHistory:
    epoch_loss: list
    val_f1: list
    clamp_events: int = 0


def train(dataset: TensorDataset, hyper: HyperParams,
          val: TensorDataset | None = None,
          log=None) -> tuple[MemNetParams, TrainHistory]:
    """Train a fresh network on a tensor dataset.

    Runs epochs x (n_queries // batch_size) balanced batches of
    forward/backward/Adam. Batch-norm running statistics are updated from
    train-mode batch statistics and used in eval mode. Fully deterministic
    for a given hyper.seed.
    """
    hyper.validate()
    if dataset.n_queries == 0:
        raise MemNetError("dataset has no queries")
    ss = np.random.SeedSequence(hyper.seed)
    init_rng, batch_rng, drop_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    params = init_params(dataset.vocab_size, hyper, init_rng)
    state = adam_init(params)
    n_batches = max(1, dataset.n_queries // hyper.batch_size)
    history = TrainHistory(epoch_loss=[], val_f1=[])

    for epoch in range(hyper.epochs):
        losses = []
        batches = balanced_batches(dataset.query_label, hyper.batch_size,
                                   n_batches, batch_rng)
        for bi, idx in enumerate(batches):
            grids = dataset.grids[dataset.query_file[idx]]
            rows = dataset.query_row[idx]
            labels = dataset.query_label[idx]
            probs, cache = forward(params, grids, rows, hyper.dropout,
                                   train=True, rng=drop_rng)
            loss, clamped = cross_entropy(probs, labels)
            history.clamp_events += clamped
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, bi)
            grads = backward(params, cache, labels)
            adam_step(params, grads, state, hyper.lr)
            for h in range(params.hops):
                params.run_mean[h] *= BN_MOMENTUM
                params.run_mean[h] += (1.0 - BN_MOMENTUM) * cache.bn_mu[h]
                params.run_var[h] *= BN_MOMENTUM
                params.run_var[h] += (1.0 - BN_MOMENTUM) * cache.bn_var[h]
            losses.append(loss)
        history.epoch_loss.append(float(np.mean(losses)) if losses else float("nan"))
        if val is not None:
            preds, _ = predict(params, val)
            history.val_f1.append(_binary_f1(preds, val.query_label))
        else:
            history.val_f1.append(None)
        if log is not None:
            log(epoch, history)
    return params, history


def _binary_f1(preds: np.ndarray, truth: np.ndarray) -> float:
    # collapsed safe/unsafe view; odd class ids (``*_UNSAFE``) are positive
    pred_pos = preds % 2 == 1
    true_pos = truth % 2 == 1
    tp = int((pred_pos & true_pos).sum())
    fp = int((pred_pos & ~true_pos).sum())
    fn = int((~pred_pos & true_pos).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def predict(params: MemNetParams, dataset: TensorDataset,
            batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode argmax labels and probabilities for every query, in order."""
    if dataset.vocab_size != params.vocab_size:
        raise MemNetError(
            f"dataset vocabulary {dataset.vocab_size} does not match "
            f"checkpoint vocabulary {params.vocab_size}")
    preds = np.zeros(dataset.n_queries, dtype=np.int64)
    probs_out = np.zeros((dataset.n_queries, params.classes))
    for start in range(0, dataset.n_queries, batch_size):
        stop = min(start + batch_size, dataset.n_queries)
        idx = np.arange(start, stop)
        grids = dataset.grids[dataset.query_file[idx]]
        rows = dataset.query_row[idx]
        probs, _ = forward(params, grids, rows, train=False)
        preds[idx] = probs.argmax(axis=1)
        probs_out[idx] = probs
    return preds, probs_out


# ---------------------------------------------------------------------------
# Checkpoints (see docs/formats.md)
# ---------------------------------------------------------------------------

_CKPT_FIELDS = ("e_val", "e_addr", "r_hop", "gamma", "beta",
                "run_mean", "run_var", "w")


def save_checkpoint(path: Path | str, params: MemNetParams,
                    hyper: HyperParams, vocab_hash: str) -> None:
    arrays = []
    blobs = []
    for name in _CKPT_FIELDS:
        arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
        arrays.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({
        "hyper": hyper.to_dict(),
        "vocab_hash": vocab_hash,
        "vocab_size": params.vocab_size,
        "arrays": arrays,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: Path | str):
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise MemNetError(f"{path}: not a checkpoint file")
    off = len(CKPT_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    fields = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        fields[spec["name"]] = arr.reshape(shape).copy()
        off += 8 * count
    params = MemNetParams(**fields)
    hyper = HyperParams.from_dict(header["hyper"])
    return params, hyper, header["vocab_hash"]
