"""A small pre-norm Transformer encoder-decoder with tied embeddings.

Token ids follow the shared vocabulary convention: 0 pad, 1 bos, 2 eos,
3 mask, 4 unk, then language tags and words.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .corpus import Sentence, Vocabulary
from .errors import DegenerateBatchError, DivergenceError, FormatError, ParameterError, TruncationWarning

PAD_ID, BOS_ID, EOS_ID, MASK_ID, UNK_ID = 0, 1, 2, 3, 4
CHECKPOINT_MAGIC = b"CSRLAB-CKPT\n"
CHECKPOINT_VERSION = 1

REFERENCE_DROPOUT = 0.3
REFERENCE_LABEL_SMOOTHING = 0.2
REFERENCE_WARMUP = 2500
REFERENCE_LR = 3e-5
REFERENCE_BEAM = 5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim: int = 64
    layers: int = 2
    heads: int = 2
    ffn_dim: int = 128
    dropout: float = REFERENCE_DROPOUT
    max_len: int = 64
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("vocab_size", "dim", "layers", "heads", "ffn_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ParameterError(f"ModelConfig.{name} must be positive")
        if self.dim % self.heads:
            raise ParameterError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ParameterError(f"unsupported dtype {self.dtype!r}")

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)


def parameter_count(config: ModelConfig) -> int:
    d, f, L = config.dim, config.ffn_dim, config.layers
    attn = 4 * (d * d + d)
    ffn = d * f + f + f * d + d
    ln = 2 * d
    encoder = L * (attn + ffn + 2 * ln)
    decoder = L * (2 * attn + ffn + 3 * ln)
    return config.vocab_size * d + 2 * config.max_len * d + encoder + decoder + 2 * ln


def _dropout(x: torch.Tensor, p: float, rng: torch.Generator | None) -> torch.Tensor:
    if rng is None or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=rng, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, query, memory, key_pad, causal, p, rng):
        B, Tq, D = query.shape
        Tk = memory.shape[1]
        h, dh = self.heads, D // self.heads
        q = self.q(query).view(B, Tq, h, dh).transpose(1, 2)
        k = self.k(memory).view(B, Tk, h, dh).transpose(1, 2)
        v = self.v(memory).view(B, Tk, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        blocked = key_pad[:, None, None, :]
        if causal:
            future = torch.triu(torch.ones(Tq, Tk, dtype=torch.bool), diagonal=1)
            blocked = blocked | future
        scores = scores.masked_fill(blocked, float("-inf"))
        weights = _dropout(torch.softmax(scores, dim=-1), p, rng)
        out = (weights @ v).transpose(1, 2).reshape(B, Tq, D)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, ffn_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, dim)

    def forward(self, x, p, rng):
        return self.fc2(_dropout(torch.relu(self.fc1(x)), p, rng))


class EncoderLayer(nn.Module):
    def __init__(self, c: ModelConfig):
        super().__init__()
        self.ln_attn = nn.LayerNorm(c.dim)
        self.attn = MultiHeadAttention(c.dim, c.heads)
        self.ln_ffn = nn.LayerNorm(c.dim)
        self.ffn = FeedForward(c.dim, c.ffn_dim)

    def forward(self, x, pad, p, rng):
        h = self.ln_attn(x)
        x = x + _dropout(self.attn(h, h, pad, False, p, rng), p, rng)
        return x + _dropout(self.ffn(self.ln_ffn(x), p, rng), p, rng)


class DecoderLayer(nn.Module):
    def __init__(self, c: ModelConfig):
        super().__init__()
        self.ln_self = nn.LayerNorm(c.dim)
        self.self_attn = MultiHeadAttention(c.dim, c.heads)
        self.ln_cross = nn.LayerNorm(c.dim)
        self.cross_attn = MultiHeadAttention(c.dim, c.heads)
        self.ln_ffn = nn.LayerNorm(c.dim)
        self.ffn = FeedForward(c.dim, c.ffn_dim)

    def forward(self, y, memory, dec_pad, enc_pad, p, rng):
        h = self.ln_self(y)
        y = y + _dropout(self.self_attn(h, h, dec_pad, True, p, rng), p, rng)
        y = y + _dropout(self.cross_attn(self.ln_cross(y), memory, enc_pad, False, p, rng), p, rng)
        return y + _dropout(self.ffn(self.ln_ffn(y), p, rng), p, rng)


class Seq2SeqModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.embed = nn.Parameter(torch.empty(c.vocab_size, c.dim))
        self.enc_pos = nn.Parameter(torch.empty(c.max_len, c.dim))
        self.dec_pos = nn.Parameter(torch.empty(c.max_len, c.dim))
        self.encoder = nn.ModuleList(EncoderLayer(c) for _ in range(c.layers))
        self.decoder = nn.ModuleList(DecoderLayer(c) for _ in range(c.layers))
        self.enc_ln = nn.LayerNorm(c.dim)
        self.dec_ln = nn.LayerNorm(c.dim)

    def _embed(self, ids, pos, p, rng):
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size):
            raise IndexError(f"token id outside [0, {self.config.vocab_size})")
        if ids.shape[1] > self.config.max_len:
            raise IndexError(f"sequence length {ids.shape[1]} exceeds max_len {self.config.max_len}")
        x = self.embed[ids] * math.sqrt(self.config.dim) + pos[: ids.shape[1]]
        return _dropout(x, p, rng)

    def encode(self, enc, rng=None):
        p = self.config.dropout if rng is not None else 0.0
        pad = enc == PAD_ID
        x = self._embed(enc, self.enc_pos, p, rng)
        for layer in self.encoder:
            x = layer(x, pad, p, rng)
        return self.enc_ln(x), pad

    def decode_hidden(self, dec_in, memory, enc_pad, rng=None):
        p = self.config.dropout if rng is not None else 0.0
        pad = dec_in == PAD_ID
        y = self._embed(dec_in, self.dec_pos, p, rng)
        for layer in self.decoder:
            y = layer(y, memory, pad, enc_pad, p, rng)
        return self.dec_ln(y)

    def log_probs(self, hidden):
        return torch.log_softmax(hidden @ self.embed.T, dim=-1)


def _generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def init_model(config: ModelConfig) -> Seq2SeqModel:
    """Deterministic scaled-uniform initialisation (std ``dim**-0.5`` embeddings, Xavier linears)."""
    model = Seq2SeqModel(config).to(config.torch_dtype)
    g = _generator(config.seed)
    bound = math.sqrt(3.0 / config.dim)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name in ("embed", "enc_pos", "dec_pos"):
                param.uniform_(-bound, bound, generator=g)
            elif ".ln_" in name or name.startswith(("enc_ln", "dec_ln")):
                param.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                param.zero_()
            else:
                fan_out, fan_in = param.shape
                a = math.sqrt(6.0 / (fan_in + fan_out))
                param.uniform_(-a, a, generator=g)
    return model


@dataclass
class Batch:
    encoder_inputs: torch.Tensor
    decoder_inputs: torch.Tensor
    decoder_targets: torch.Tensor

    @property
    def target_mask(self) -> torch.Tensor:
        return self.decoder_targets != PAD_ID

    def __len__(self) -> int:
        return self.encoder_inputs.shape[0]


def _pad(rows: Sequence[Sequence[int]], width: int | None = None) -> torch.Tensor:
    width = max(len(r) for r in rows) if width is None else width
    out = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.as_tensor(list(r), dtype=torch.long)
    return out


def make_batch(examples: Sequence[tuple[Sequence[int], Sequence[int]]], max_len: int | None = None) -> Batch:
    """Teacher-forcing batch from (encoder ids, target ids) pairs.

    The decoder reads ``bos + target`` and predicts ``target + eos``.
    Sequences longer than ``max_len`` are truncated with a warning.
    """
    if not examples:
        raise DegenerateBatchError("empty batch")
    enc_rows, in_rows, out_rows = [], [], []
    for src, tgt in examples:
        src, tgt = list(src), list(tgt)
        if max_len is not None and (len(src) > max_len or len(tgt) + 1 > max_len):
            warnings.warn(f"truncating example to max_len={max_len}", TruncationWarning, stacklevel=2)
            src, tgt = src[:max_len], tgt[: max_len - 1]
        enc_rows.append(src)
        in_rows.append([BOS_ID] + tgt)
        out_rows.append(tgt + [EOS_ID])
    return Batch(_pad(enc_rows), _pad(in_rows), _pad(out_rows))


def forward(model: Seq2SeqModel, batch: Batch, train_mode: bool = False,
            rng: torch.Generator | None = None) -> torch.Tensor:
    """Per-position log-probabilities, shape (B, T, V).  Dropout only when ``train_mode``."""
    if train_mode and rng is None:
        rng = _generator(0)
    drop_rng = rng if train_mode else None
    memory, enc_pad = model.encode(batch.encoder_inputs, drop_rng)
    hidden = model.decode_hidden(batch.decoder_inputs, memory, enc_pad, drop_rng)
    return model.log_probs(hidden)


def loss(logprobs: torch.Tensor, batch: Batch, label_smoothing: float = REFERENCE_LABEL_SMOOTHING) -> torch.Tensor:
    """(1 - eps) * NLL(target) + eps * mean-over-vocabulary NLL, averaged over non-pad positions."""
    mask = batch.target_mask
    if not bool(mask.any()):
        raise DegenerateBatchError("batch contains only padding")
    nll = -logprobs.gather(-1, batch.decoder_targets.unsqueeze(-1)).squeeze(-1)
    smooth = -logprobs.mean(dim=-1)
    per_pos = (1.0 - label_smoothing) * nll + label_smoothing * smooth
    return per_pos[mask].mean()


@dataclass
class OptimState:
    optimizer: torch.optim.Optimizer
    peak_lr: float
    warmup: int
    step: int = 0

    def lr_at(self, step: int) -> float:
        return lr_schedule(step, self.peak_lr, self.warmup)


def lr_schedule(step: int, peak_lr: float, warmup: int) -> float:
    """Linear warmup to ``peak_lr`` at ``warmup``, then inverse square-root decay."""
    if step <= 0:
        return 0.0
    if step < warmup:
        return peak_lr * step / warmup
    return peak_lr * math.sqrt(warmup / step)


def init_optim(model: Seq2SeqModel, peak_lr: float = 1e-3, warmup: int = 250,
               betas: tuple[float, float] = (0.9, 0.98), eps: float = 1e-8) -> OptimState:
    if warmup < 1 or peak_lr <= 0:
        raise ParameterError("warmup and peak_lr must be positive")
    opt = torch.optim.Adam(model.parameters(), lr=0.0, betas=betas, eps=eps)
    return OptimState(opt, peak_lr, warmup)


def train_step(model: Seq2SeqModel, batch: Batch, optim: OptimState, objective: str = "generation",
               label_smoothing: float = REFERENCE_LABEL_SMOOTHING,
               rng: torch.Generator | None = None) -> tuple[Seq2SeqModel, OptimState, float]:
    """One Adam update.  ``objective`` is recorded by callers; generation and restore share the loss."""
    if objective not in ("generation", "restore"):
        raise ParameterError(f"unknown objective {objective!r}")
    lr = optim.lr_at(optim.step + 1)
    for group in optim.optimizer.param_groups:
        group["lr"] = lr
    model.train()
    optim.optimizer.zero_grad(set_to_none=True)
    value = loss(forward(model, batch, train_mode=True, rng=rng), batch, label_smoothing)
    if not torch.isfinite(value):
        raise DivergenceError(f"non-finite loss {value.item()} at step {optim.step + 1} (lr {lr:.3g})")
    value.backward()
    optim.optimizer.step()
    optim.step += 1
    return model, optim, value.item()


@torch.no_grad()
def decode_ids(model: Seq2SeqModel, src_ids: Sequence[int], prefix: Sequence[int] = (), beam: int = REFERENCE_BEAM,
               max_len: int = 32, length_penalty: float = 1.0) -> tuple[list[int], float]:
    """Beam search.  Returns generated ids (without prefix, with eos if produced)
    and the score ``sum log p / len ** length_penalty``.

    At most ``max_len`` tokens are generated before eos is forced.
    """
    if beam < 1:
        raise ParameterError("beam must be at least 1")
    model.eval()
    enc = torch.as_tensor([list(src_ids)], dtype=torch.long)
    memory, enc_pad = model.encode(enc)
    start = [BOS_ID] + list(prefix)
    live: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []

    def norm(tokens, logp):
        return logp / (max(len(tokens), 1) ** length_penalty)

    for t in range(max_len + 1):
        dec = torch.as_tensor([start + toks for toks, _ in live], dtype=torch.long)
        hidden = model.decode_hidden(dec, memory.expand(len(live), -1, -1), enc_pad.expand(len(live), -1))
        lp = model.log_probs(hidden[:, -1]).double()
        lp[:, PAD_ID] = float("-inf")
        lp[:, BOS_ID] = float("-inf")
        if t == max_len:
            forced = torch.full_like(lp, float("-inf"))
            forced[:, EOS_ID] = lp[:, EOS_ID]
            lp = forced
        totals = torch.as_tensor([s for _, s in live], dtype=torch.float64)[:, None] + lp
        flat = totals.flatten()
        k = min(2 * beam, int(torch.isfinite(flat).sum()))
        scores, idx = torch.topk(flat, k)
        V = lp.shape[1]
        new_live = []
        for rank, (score, i) in enumerate(zip(scores.tolist(), idx.tolist())):
            h, tok = divmod(i, V)
            toks = live[h][0] + [tok]
            if tok == EOS_ID:
                if rank < beam:
                    finished.append((toks, score))
            else:
                new_live.append((toks, score))
                if len(new_live) == beam:
                    break
        live = new_live
        if len(finished) >= beam or not live:
            break
    best = max(finished, key=lambda f: norm(*f))
    return best[0], norm(*best)


def decode(model: Seq2SeqModel, vocab: Vocabulary, source: Sentence, target_lang, beam: int = REFERENCE_BEAM,
           max_len: int = 32, length_penalty: float = 1.0) -> Sentence:
    """Translate ``source`` (source tag appended, target tag as decoder prefix)."""
    src = encode_source(vocab, source, model.config.max_len)
    ids, _ = decode_ids(model, src, [vocab.index(str(target_lang))], beam, max_len, length_penalty)
    words = [vocab.itos[i] for i in ids if i != EOS_ID]
    return Sentence(tuple(words), target_lang)


def encode_source(vocab: Vocabulary, sent: Sentence, max_len: int | None = None) -> list[int]:
    ids = vocab.encode(sent.tokens) + [vocab.index(str(sent.lang))]
    if max_len is not None and len(ids) > max_len:
        warnings.warn(f"truncating {len(ids)}-token input to {max_len}", TruncationWarning, stacklevel=2)
        ids = ids[: max_len - 1] + ids[-1:]
    return ids


def encode_target(vocab: Vocabulary, sent: Sentence, max_len: int | None = None) -> list[int]:
    ids = [vocab.index(str(sent.lang))] + vocab.encode(sent.tokens)
    if max_len is not None and len(ids) + 1 > max_len:
        warnings.warn(f"truncating {len(ids)}-token target to {max_len - 1}", TruncationWarning, stacklevel=2)
        ids = ids[: max_len - 1]
    return ids


@torch.no_grad()
def sentence_embeddings(model: Seq2SeqModel, vocab: Vocabulary, sents: Sequence[Sentence],
                        batch_size: int = 256, pad_to: int | None = None) -> np.ndarray:
    """Final decoder hidden state at the last token, teacher-forcing the sentence onto itself."""
    model.eval()
    out = []
    for b in range(0, len(sents), batch_size):
        chunk = sents[b:b + batch_size]
        src = [encode_source(vocab, s, model.config.max_len) for s in chunk]
        dec = [[BOS_ID] + encode_target(vocab, s, model.config.max_len) for s in chunk]
        width = None if pad_to is None else max(pad_to, max(map(len, src)), max(map(len, dec)))
        enc_t, dec_t = _pad(src, width), _pad(dec, width)
        memory, enc_pad = model.encode(enc_t)
        hidden = model.decode_hidden(dec_t, memory, enc_pad)
        last = torch.as_tensor([len(d) - 1 for d in dec])
        out.append(hidden[torch.arange(len(chunk)), last].double().numpy())
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.dim))


def sentence_embedding(model: Seq2SeqModel, vocab: Vocabulary, sent: Sentence,
                       pad_to: int | None = None) -> np.ndarray:
    return sentence_embeddings(model, vocab, [sent], pad_to=pad_to)[0]


def save_checkpoint(model: Seq2SeqModel, path) -> None:
    """Magic line, one JSON header line (version, config, tensor names and shapes),
    then each tensor as little-endian float32."""
    state = model.state_dict()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in state.items()],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for t in state.values():
            fh.write(t.detach().to(torch.float32).numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> Seq2SeqModel:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: not a csrlab checkpoint")
    end = data.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(data[len(CHECKPOINT_MAGIC):end])
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    model = Seq2SeqModel(ModelConfig(**header["config"]))
    model.to(model.config.torch_dtype)
    offset = end + 1
    state = {}
    for spec in header["tensors"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(spec["shape"])
        offset += 4 * n
        state[spec["name"]] = torch.from_numpy(arr.copy()).to(model.config.torch_dtype)
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    model.load_state_dict(state)
    return model
