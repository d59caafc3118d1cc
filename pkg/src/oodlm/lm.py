"""Small autoregressive language models trained from scratch on walk corpora.

Two architectures share one training loop: a stacked GRU and a pre-norm
decoder-only transformer.  Inputs are ``[BOS, x_1 .. x_T]`` and targets
``[x_1 .. x_T, EOS]``; batches are length-aligned so no padding exists.
Optional train-time corruption comes in two flavors: token substitution
(inputs resampled from the corpus unigram, targets left clean) and hidden
state dropout with inverted scaling.  Inference is always noise-free.

Training math runs in float32 by default; the identical code path runs in
float64 for finite-difference gradient checks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tape
from .corpus import corpus_digest, count_corpus, unigram_dist
from .tape import Tensor
from .util import check_dist, write_atomic

CHECKPOINT_FORMAT = "lmckpt-v1"


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, epoch: int, loss: float):
        self.step = step
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step} (epoch {epoch})")


@dataclass
class LmConfig:
    arch: str
    vocab_size: int
    embed_dim: int = 128
    hidden_dim: int = 256
    num_layers: int = 1
    num_heads: int = 4
    ff_multiplier: int = 4
    max_seq_len: int = 128

    def validate(self) -> None:
        if self.arch not in ("gru", "transformer"):
            raise ValueError(f"unknown arch {self.arch!r}")
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_layers", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.arch == "transformer":
            if self.hidden_dim % self.num_heads != 0:
                raise ValueError(
                    f"num_heads {self.num_heads} must divide hidden_dim {self.hidden_dim}"
                )

    def to_dict(self) -> dict:
        return asdict(self)


def default_gru_config(vocab_size: int, num_layers: int = 1) -> LmConfig:
    return LmConfig(
        arch="gru", vocab_size=vocab_size, embed_dim=128, hidden_dim=256, num_layers=num_layers
    )


def default_transformer_config(vocab_size: int) -> LmConfig:
    # sized so a full training run stays in the minutes range on one core
    return LmConfig(
        arch="transformer",
        vocab_size=vocab_size,
        embed_dim=128,
        hidden_dim=128,
        num_layers=2,
        num_heads=4,
    )


@dataclass
class NoiseConfig:
    token_prob: float = 0.0
    dropout_prob: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.token_prob <= 1.0:
            raise ValueError(f"token_prob must lie in [0, 1], got {self.token_prob}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")

    @property
    def active(self) -> bool:
        return self.token_prob > 0 or self.dropout_prob > 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainConfig:
    seed: int = 0
    num_examples: int = 128_000
    batch_size: int = 32
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dtype: str = "float32"

    def validate(self) -> None:
        if self.num_examples < 1 or self.batch_size < 1:
            raise ValueError("num_examples and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.noise.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = self.noise.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["noise"] = NoiseConfig(**d.get("noise", {}))
        return cls(**d)


# -- noise primitives ----------------------------------------------------


def apply_token_noise(
    tokens: np.ndarray, p: float, unigram: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Independently replace each token with a unigram sample with probability p.

    ``unigram`` is a distribution over symbols (an EOS slot, if present, must
    be empty: substitution never manufactures terminators).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"noise probability must lie in [0, 1], got {p}")
    tokens = np.asarray(tokens, dtype=np.int64)
    if p == 0.0 or tokens.size == 0:
        return tokens.copy()
    probs = np.asarray(unigram, dtype=np.float64)
    vocab = probs.size - 1 if probs.size and probs[-1] == 0.0 else probs.size
    probs = probs[:vocab]
    total = probs.sum()
    if total <= 0:
        raise ValueError("unigram distribution has no mass on symbols")
    cdf = np.cumsum(probs / total)
    mask = rng.random(tokens.shape) < p
    out = tokens.copy()
    n = int(mask.sum())
    if n:
        out[mask] = np.searchsorted(cdf, rng.random(n), side="right")
    return out


def state_dropout(hidden, p: float, rng: np.random.Generator):
    """Zero each feature with probability p and rescale survivors by 1/(1-p).

    Works on plain arrays and on tape tensors; expectation equals the input.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if p == 0.0:
        return hidden
    shape = hidden.data.shape if isinstance(hidden, Tensor) else np.asarray(hidden).shape
    keep = rng.random(shape) >= p
    if isinstance(hidden, Tensor):
        mask = (keep / (1.0 - p)).astype(hidden.data.dtype)
        return tape.mul(hidden, Tensor(mask))
    return np.asarray(hidden) * (keep / (1.0 - p))


# -- models --------------------------------------------------------------


def _uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _LmBase:
    """Shared parameter plumbing and the public predictive interface.

    ``params`` maps names to numpy arrays in a fixed declaration order
    (``param_order``), which also fixes the checkpoint block layout.
    """

    def __init__(self, config: LmConfig, rng: np.random.Generator | None, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.param_order: list[str] = []
        self.provenance: dict = {}
        self.loss_history: np.ndarray | None = None
        self._init_params(rng if rng is not None else np.random.default_rng(0))

    # subclasses define _init_params and _forward

    def _add_param(self, name: str, array: np.ndarray) -> None:
        self.params[name] = array
        self.param_order.append(name)

    def _wrap_params(self, requires_grad: bool) -> dict:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    @property
    def bos_id(self) -> int:
        return self.config.vocab_size

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def get_params(self) -> dict:
        return {"lm_config": self.config.to_dict(), "provenance": dict(self.provenance)}

    def logits(
        self,
        input_ids: np.ndarray,
        requires_grad: bool = False,
        dropout_prob: float = 0.0,
        rng: np.random.Generator | None = None,
    ):
        """Forward pass; returns (logits Tensor of shape (B, T, V+1), params dict)."""
        input_ids = np.asarray(input_ids, dtype=np.int64)
        if input_ids.ndim != 2:
            raise ValueError("input_ids must be (batch, time)")
        if input_ids.shape[1] > self.config.max_seq_len:
            raise ValueError(
                f"sequence length {input_ids.shape[1]} exceeds max_seq_len "
                f"{self.config.max_seq_len}"
            )
        if dropout_prob > 0 and rng is None:
            raise ValueError("dropout requires an RNG")
        p = self._wrap_params(requires_grad)
        return self._forward(p, input_ids, dropout_prob, rng), p

    def predict_proba(self, context) -> np.ndarray:
        """Next-token distribution (V+1, EOS last) after the given context."""
        ids = np.concatenate([[self.bos_id], np.asarray(context, dtype=np.int64)])
        out, _ = self.logits(ids[None, :])
        logit = out.data[0, -1].astype(np.float64)
        logit -= logit.max()
        e = np.exp(logit)
        return check_dist(e / e.sum())

    def predict_proba_many(self, contexts) -> np.ndarray:
        """Batched predict_proba over arbitrary-length contexts (length-bucketed)."""
        arrs = [np.asarray(c, dtype=np.int64) for c in contexts]
        out = np.zeros((len(arrs), self.vocab_size + 1), dtype=np.float64)
        by_len: dict[int, list[int]] = {}
        for i, a in enumerate(arrs):
            by_len.setdefault(a.size, []).append(i)
        for length, idxs in sorted(by_len.items()):
            batch = np.full((len(idxs), length + 1), self.bos_id, dtype=np.int64)
            for r, i in enumerate(idxs):
                batch[r, 1:] = arrs[i]
            res, _ = self.logits(batch)
            logit = res.data[:, -1, :].astype(np.float64)
            logit -= logit.max(axis=1, keepdims=True)
            e = np.exp(logit)
            out[idxs] = e / e.sum(axis=1, keepdims=True)
        return out

    def fit(self, corpus, train_config: TrainConfig):
        """Train in place on a corpus of token sequences; returns self."""
        train_lm(corpus, self.config, train_config, model=self)
        return self


class GruLm(_LmBase):
    """Stacked GRU with tied input embedding table (BOS row included)."""

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        self._add_param(
            "embed", _uniform_init(rng, (c.vocab_size + 1, c.embed_dim), c.embed_dim, self.dtype)
        )
        in_dim = c.embed_dim
        for layer in range(c.num_layers):
            h = c.hidden_dim
            self._add_param(f"wx{layer}", _uniform_init(rng, (in_dim, 3 * h), in_dim, self.dtype))
            self._add_param(f"bx{layer}", _uniform_init(rng, (3 * h,), in_dim, self.dtype))
            self._add_param(f"wh{layer}", _uniform_init(rng, (h, 3 * h), h, self.dtype))
            self._add_param(f"bh{layer}", _uniform_init(rng, (3 * h,), h, self.dtype))
            in_dim = h
        self._add_param(
            "w_out",
            _uniform_init(rng, (c.hidden_dim, c.vocab_size + 1), c.hidden_dim, self.dtype),
        )
        self._add_param(
            "b_out", _uniform_init(rng, (c.vocab_size + 1,), c.hidden_dim, self.dtype)
        )

    def _forward(self, p, input_ids, dropout_prob, rng):
        c = self.config
        batch, time = input_ids.shape
        h_dim = c.hidden_dim
        layer_inputs = [tape.embedding(p["embed"], input_ids[:, t]) for t in range(time)]
        for layer in range(c.num_layers):
            wx, bx = p[f"wx{layer}"], p[f"bx{layer}"]
            wh, bh = p[f"wh{layer}"], p[f"bh{layer}"]
            h = Tensor(np.zeros((batch, h_dim), dtype=self.dtype))
            outputs = []
            for t in range(time):
                gx = tape.add(tape.matmul(layer_inputs[t], wx), bx)
                gh = tape.add(tape.matmul(h, wh), bh)
                r = tape.sigmoid(
                    tape.add(tape.slice_last(gx, 0, h_dim), tape.slice_last(gh, 0, h_dim))
                )
                z = tape.sigmoid(
                    tape.add(
                        tape.slice_last(gx, h_dim, 2 * h_dim),
                        tape.slice_last(gh, h_dim, 2 * h_dim),
                    )
                )
                n = tape.tanh(
                    tape.add(
                        tape.slice_last(gx, 2 * h_dim, 3 * h_dim),
                        tape.mul(r, tape.slice_last(gh, 2 * h_dim, 3 * h_dim)),
                    )
                )
                h_new = tape.add(tape.mul(tape.affine(z, -1.0, 1.0), n), tape.mul(z, h))
                outputs.append(h_new)
                # dropout only corrupts the carried state; the emitted hidden
                # state at this step stays clean
                h = (
                    state_dropout(h_new, dropout_prob, rng)
                    if dropout_prob > 0 and t + 1 < time
                    else h_new
                )
            layer_inputs = outputs
        hs = tape.stack(layer_inputs, axis=1)
        return tape.add(tape.matmul(hs, p["w_out"]), p["b_out"])


def _sinusoidal_positions(time: int, dim: int, dtype) -> np.ndarray:
    pos = np.arange(time, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


class TransformerLm(_LmBase):
    """Pre-norm decoder-only transformer with sinusoidal positions and a final norm."""

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        if c.embed_dim != c.hidden_dim:
            raise ValueError("transformer requires embed_dim == hidden_dim")
        d = c.hidden_dim
        ff = c.ff_multiplier * d
        self._add_param("embed", _uniform_init(rng, (c.vocab_size + 1, d), d, self.dtype))
        for layer in range(c.num_layers):
            self._add_param(f"ln1g{layer}", np.ones(d, dtype=self.dtype))
            self._add_param(f"ln1b{layer}", np.zeros(d, dtype=self.dtype))
            self._add_param(f"w_qkv{layer}", _uniform_init(rng, (d, 3 * d), d, self.dtype))
            self._add_param(f"b_qkv{layer}", _uniform_init(rng, (3 * d,), d, self.dtype))
            self._add_param(f"w_attn{layer}", _uniform_init(rng, (d, d), d, self.dtype))
            self._add_param(f"b_attn{layer}", _uniform_init(rng, (d,), d, self.dtype))
            self._add_param(f"ln2g{layer}", np.ones(d, dtype=self.dtype))
            self._add_param(f"ln2b{layer}", np.zeros(d, dtype=self.dtype))
            self._add_param(f"w_ff1{layer}", _uniform_init(rng, (d, ff), d, self.dtype))
            self._add_param(f"b_ff1{layer}", _uniform_init(rng, (ff,), d, self.dtype))
            self._add_param(f"w_ff2{layer}", _uniform_init(rng, (ff, d), ff, self.dtype))
            self._add_param(f"b_ff2{layer}", _uniform_init(rng, (d,), ff, self.dtype))
        self._add_param("lnfg", np.ones(d, dtype=self.dtype))
        self._add_param("lnfb", np.zeros(d, dtype=self.dtype))
        self._add_param("w_out", _uniform_init(rng, (d, c.vocab_size + 1), d, self.dtype))
        self._add_param("b_out", _uniform_init(rng, (c.vocab_size + 1,), d, self.dtype))

    def _forward(self, p, input_ids, dropout_prob, rng):
        c = self.config
        batch, time = input_ids.shape
        d = c.hidden_dim
        heads = c.num_heads
        dh = d // heads
        x = tape.add(
            tape.embedding(p["embed"], input_ids),
            Tensor(_sinusoidal_positions(time, d, self.dtype)),
        )
        causal = np.triu(np.full((time, time), -1e9, dtype=self.dtype), k=1)
        for layer in range(c.num_layers):
            a = tape.layer_norm(x, p[f"ln1g{layer}"], p[f"ln1b{layer}"])
            qkv = tape.add(tape.matmul(a, p[f"w_qkv{layer}"]), p[f"b_qkv{layer}"])
            parts = []
            for j in range(3):
                part = tape.slice_last(qkv, j * d, (j + 1) * d)
                part = tape.reshape(part, (batch, time, heads, dh))
                parts.append(tape.transpose(part, (0, 2, 1, 3)))
            q, k, v = parts
            scores = tape.scale(
                tape.matmul(q, tape.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh)
            )
            attn = tape.softmax_last(scores, additive_mask=causal)
            ctx = tape.matmul(attn, v)
            ctx = tape.reshape(tape.transpose(ctx, (0, 2, 1, 3)), (batch, time, d))
            proj = tape.add(tape.matmul(ctx, p[f"w_attn{layer}"]), p[f"b_attn{layer}"])
            if dropout_prob > 0:
                proj = state_dropout(proj, dropout_prob, rng)
            x = tape.add(x, proj)
            f = tape.layer_norm(x, p[f"ln2g{layer}"], p[f"ln2b{layer}"])
            hid = tape.relu(tape.add(tape.matmul(f, p[f"w_ff1{layer}"]), p[f"b_ff1{layer}"]))
            ffo = tape.add(tape.matmul(hid, p[f"w_ff2{layer}"]), p[f"b_ff2{layer}"])
            x = tape.add(x, ffo)
        x = tape.layer_norm(x, p["lnfg"], p["lnfb"])
        return tape.add(tape.matmul(x, p["w_out"]), p["b_out"])


def make_model(config: LmConfig, rng: np.random.Generator | None = None, dtype=np.float32):
    cls = GruLm if config.arch == "gru" else TransformerLm
    return cls(config, rng, dtype=dtype)


# -- optimizer and training loop -----------------------------------------


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float, beta2: float, eps: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            params[k] -= (self.lr / bias1) * m / (np.sqrt(v / bias2) + self.eps)


def _length_batches(lengths: np.ndarray, perm: np.ndarray, batch_size: int) -> list:
    """Batches of equal-length sequence indices, honoring the shuffled order."""
    groups: dict[int, list] = {}
    for idx in perm:
        groups.setdefault(int(lengths[idx]), []).append(int(idx))
    batches = []
    for length in sorted(groups):
        members = groups[length]
        for i in range(0, len(members), batch_size):
            batches.append(np.array(members[i : i + batch_size], dtype=np.int64))
    return batches


def _batch_arrays(walks, idxs, vocab_size: int, noise: NoiseConfig, unigram, rng):
    """Inputs [BOS, x..], clean targets [x.., EOS], and loss weights for one batch."""
    bos = eos = vocab_size
    length = len(walks[idxs[0]])
    B = len(idxs)
    inputs = np.full((B, length + 1), bos, dtype=np.int64)
    targets = np.full((B, length + 1), eos, dtype=np.int64)
    weights = np.ones((B, length + 1), dtype=np.float64)
    for r, i in enumerate(idxs):
        w = walks[i]
        toks = np.asarray(getattr(w, "tokens", w), dtype=np.int64)
        fed = (
            apply_token_noise(toks, noise.token_prob, unigram, rng)
            if noise.token_prob > 0
            else toks
        )
        inputs[r, 1:] = fed
        targets[r, :length] = toks
        if not getattr(w, "terminated", True):
            weights[r, -1] = 0.0
    return inputs, targets, weights


def train_lm(
    corpus,
    lm_config: LmConfig,
    train_config: TrainConfig,
    model=None,
    log_every: int = 0,
):
    """Train a model on a walk corpus; deterministic given the seed.

    ``num_examples`` counts presentations: the corpus is reshuffled and cycled
    until that many sequences have been seen.  Returns the trained model with
    ``loss_history`` and provenance attached.  Raises TrainingDivergedError on
    a non-finite loss.
    """
    train_config.validate()
    lm_config.validate()
    walks = list(corpus)
    if not walks:
        raise ValueError("empty corpus")
    dtype = np.float32 if train_config.dtype == "float32" else np.float64
    rng = np.random.default_rng(train_config.seed)
    if model is None:
        model = make_model(lm_config, rng, dtype=dtype)
    noise = train_config.noise
    unigram = None
    if noise.token_prob > 0:
        unigram = unigram_dist(count_corpus(walks, lm_config.vocab_size))
    opt = Adam(
        model.params,
        train_config.learning_rate,
        train_config.beta1,
        train_config.beta2,
        train_config.adam_eps,
    )
    lengths = np.array([len(getattr(w, "tokens", w)) for w in walks])
    if int(lengths.max()) + 1 > lm_config.max_seq_len:
        raise ValueError("corpus contains sequences longer than max_seq_len - 1")
    # Batches group equal-length walks, so the number of supervised positions
    # per step varies wildly.  Adam normalizes step magnitudes, which would let
    # a batch of short walks punch far above its per-token weight (visible as
    # the model over-predicting EOS after short prefixes).  Scaling each
    # batch's mean loss by its share of a reference token count keeps every
    # position in the epoch at equal gradient weight.
    ref_tokens = float(train_config.batch_size) * (float(lengths.mean()) + 1.0)
    history = []
    presented = 0
    step = 0
    epoch = 0
    while presented < train_config.num_examples:
        perm = rng.permutation(len(walks))
        batches = _length_batches(lengths, perm, train_config.batch_size)
        for b in rng.permutation(len(batches)):
            idxs = batches[b]
            remaining = train_config.num_examples - presented
            if remaining <= 0:
                break
            if idxs.size > remaining:
                idxs = idxs[:remaining]
            inputs, targets, weights = _batch_arrays(
                walks, idxs, lm_config.vocab_size, noise, unigram, rng
            )
            out, wrapped = model.logits(
                inputs, requires_grad=True, dropout_prob=noise.dropout_prob, rng=rng
            )
            loss = tape.softmax_cross_entropy(out, targets, weights)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(step, epoch, loss_val)
            tape.backward(tape.scale(loss, float(weights.sum()) / ref_tokens))
            grads = {k: wrapped[k].grad for k in model.param_order}
            opt.step(model.params, grads)
            history.append(loss_val)
            presented += int(idxs.size)
            step += 1
            if log_every and step % log_every == 0:
                print(f"step {step}: loss {loss_val:.4f} ({presented} examples)")
        epoch += 1
    model.loss_history = np.array(history, dtype=np.float32)
    model.provenance = {
        "train_config": train_config.to_dict(),
        "corpus_digest": corpus_digest(walks),
        "corpus_sequences": len(walks),
        "steps": step,
        "epochs": epoch,
        "final_loss": float(np.float32(history[-1])),
    }
    return model


def lm_next_dist(model, context) -> np.ndarray:
    """Free-function alias for the predictive interface."""
    return model.predict_proba(context)


# -- checkpoints ---------------------------------------------------------


def save_lm(model, path: str) -> None:
    """Single-file checkpoint: JSON header line + little-endian float32 blocks.

    Serialization rounds parameters through float32, so save/load/save is
    byte-identical for float32 models.
    """
    blocks = []
    entries = []
    offset = 0
    for name in model.param_order:
        arr = np.ascontiguousarray(model.params[name].astype("<f4"))
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blocks.append(raw)
        offset += len(raw)
    header = {
        "format": CHECKPOINT_FORMAT,
        "arch": model.config.arch,
        "lm_config": model.config.to_dict(),
        "dtype": "float32",
        "byte_order": "little",
        "params": entries,
        "total_bytes": offset,
        "provenance": model.provenance,
        "loss_history": [float(x) for x in (model.loss_history if model.loss_history is not None else [])],
    }
    payload = json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(blocks)
    write_atomic(path, payload)


def load_lm(path: str):
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.index(b"\n")
    header = json.loads(data[:nl].decode())
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
    if header.get("byte_order") != "little":
        raise ValueError("checkpoint byte order must be little-endian")
    config = LmConfig(**header["lm_config"])
    model = make_model(config, np.random.default_rng(0), dtype=np.float32)
    blob = data[nl + 1 :]
    if len(blob) != header["total_bytes"]:
        raise ValueError(
            f"checkpoint truncated: header promises {header['total_bytes']} bytes, "
            f"found {len(blob)}"
        )
    loaded = set()
    for entry in header["params"]:
        name = entry["name"]
        if name not in model.params:
            raise ValueError(f"checkpoint parameter {name!r} unknown to arch {config.arch}")
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 4
        raw = blob[entry["offset"] : entry["offset"] + size]
        model.params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        loaded.add(name)
    missing = set(model.param_order) - loaded
    if missing:
        raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
    model.provenance = header.get("provenance", {})
    hist = header.get("loss_history", [])
    model.loss_history = np.array(hist, dtype=np.float32) if hist else None
    return model


# -- gradient checking ---------------------------------------------------


def tiny_lm_config(arch: str) -> LmConfig:
    if arch == "gru":
        return LmConfig(arch="gru", vocab_size=5, embed_dim=6, hidden_dim=8, num_layers=2)
    return LmConfig(
        arch="transformer",
        vocab_size=5,
        embed_dim=8,
        hidden_dim=8,
        num_layers=2,
        num_heads=2,
        ff_multiplier=2,
    )


def grad_check_lm(
    config: LmConfig | None = None,
    seed: int = 0,
    h: float = 1e-4,
    batch: int = 3,
    time: int = 5,
) -> float:
    """Max relative error between tape gradients and central differences.

    Runs the full forward (embedding through loss) in float64 on a tiny random
    model and batch, perturbing every coordinate of every parameter.
    """
    if config is None:
        config = tiny_lm_config("gru")
    rng = np.random.default_rng(seed)
    model = make_model(config, rng, dtype=np.float64)
    vocab = config.vocab_size
    inputs = rng.integers(0, vocab + 1, size=(batch, time))
    targets = rng.integers(0, vocab + 1, size=(batch, time))
    weights = np.ones((batch, time), dtype=np.float64)
    weights[-1, -1] = 0.0  # exercise the masked-position path

    def loss_value() -> float:
        out, _ = model.logits(inputs)
        z = out.data.reshape(-1, vocab + 1)
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        nll = lse - z[np.arange(z.shape[0]), targets.reshape(-1)]
        w = weights.reshape(-1)
        return float((w * nll).sum() / w.sum())

    out, wrapped = model.logits(inputs, requires_grad=True)
    loss = tape.softmax_cross_entropy(out, targets, weights)
    tape.backward(loss)
    worst = 0.0
    for name in model.param_order:
        arr = model.params[name]
        analytic = wrapped[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
