"""Miniature pre-layernorm transformer encoder with a tied masked-LM head.

Readouts: verbalizer-restricted softmax at the prompt's label slot, full
per-position token distributions for MLM, and an optional [CLS] linear
head for the plain fine-tuning variant.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, fields

import numpy as np

from . import numerics as nm
from .corpus import PAD_ID
from .numerics import Tensor, add, constant, matmul, mul, reshape, scale, slice_, softmax_last, take, transpose
from .seeding import stream_rng

_CKPT_MAGIC = b"PSCKPT01"
_ATTN_NEG = -1e30


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 4
    heads: int = 4
    model_dim: int = 128
    ff_dim: int = 256
    max_positions: int = 128
    dropout: float = 0.1
    tie_output_embeddings: bool = True
    cls_head: bool = False

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ModelError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.vocab_size < 6:
            raise ModelError("vocab_size must cover specials plus a verbalizer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ModelError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


def init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Fresh parameters, every one addressable by a dotted name."""
    rng = stream_rng(seed, "model-init")
    params: dict[str, Tensor] = {}

    def weight(name, shape, std=0.02):
        params[name] = Tensor(rng.normal(0.0, std, size=shape), name=name)

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape), name=name)

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape), name=name)

    d, f, v = config.model_dim, config.ff_dim, config.vocab_size
    weight("tok_emb", (v, d))
    weight("pos_emb", (config.max_positions, d))
    for i in range(config.layers):
        p = f"layers.{i}"
        ones(f"{p}.ln1.gain", (d,))
        zeros(f"{p}.ln1.bias", (d,))
        weight(f"{p}.attn.wqkv", (d, 3 * d))
        zeros(f"{p}.attn.bqkv", (3 * d,))
        weight(f"{p}.attn.wo", (d, d))
        zeros(f"{p}.attn.bo", (d,))
        ones(f"{p}.ln2.gain", (d,))
        zeros(f"{p}.ln2.bias", (d,))
        weight(f"{p}.ff.w1", (d, f))
        zeros(f"{p}.ff.b1", (f,))
        weight(f"{p}.ff.w2", (f, d))
        zeros(f"{p}.ff.b2", (d,))
    ones("ln_f.gain", (d,))
    zeros("ln_f.bias", (d,))
    if not config.tie_output_embeddings:
        weight("mlm_out.weight", (v, d))
    zeros("mlm_bias", (v,))
    if config.cls_head:
        weight("cls_head.weight", (d, 2))
        zeros("cls_head.bias", (2,))
    return params


def _as_id_batch(ids, config: ModelConfig) -> tuple[np.ndarray, bool]:
    arr = np.asarray(ids, dtype=np.intp)
    squeezed = arr.ndim == 1
    if squeezed:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ModelError(f"ids must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[1] > config.max_positions:
        raise ModelError(f"sequence length {arr.shape[1]} exceeds max_positions "
                         f"{config.max_positions}")
    if arr.size and (arr.min() < 0 or arr.max() >= config.vocab_size):
        raise ModelError(f"token id out of range for vocab size {config.vocab_size}")
    return arr, squeezed


def _forward(params: dict[str, Tensor], config: ModelConfig, ids,
             train: bool = False, rng: np.random.Generator | None = None) -> dict:
    """Run the encoder; returns logits, final hidden states, and the
    token-embedding activations (for saliency)."""
    arr, squeezed = _as_id_batch(ids, config)
    bsz, seqlen = arr.shape
    rate = config.dropout if train else 0.0
    if rate and rng is None:
        raise ModelError("training-mode forward needs an rng for dropout")

    def drop(t):
        return nm.dropout(t, rate, rng) if rate else t

    tok = take(params["tok_emb"], arr)
    pos = take(params["pos_emb"], np.broadcast_to(np.arange(seqlen), (bsz, seqlen)))
    h = drop(add(tok, pos))

    pad = arr == PAD_ID
    attn_bias = None
    if pad.any():
        bias = np.where(pad[:, None, None, :], _ATTN_NEG, 0.0)
        attn_bias = constant(np.broadcast_to(
            bias, (bsz, config.heads, seqlen, seqlen)).copy())

    d = config.model_dim
    hd = d // config.heads
    inv_sqrt = 1.0 / np.sqrt(hd)
    for i in range(config.layers):
        p = f"layers.{i}"
        a = nm.layernorm(h, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])
        qkv = add(matmul(a, params[f"{p}.attn.wqkv"]), params[f"{p}.attn.bqkv"])
        heads = []
        for j, name in enumerate(("q", "k", "v")):
            part = slice_(qkv, (slice(None), slice(None), slice(j * d, (j + 1) * d)))
            part = transpose(reshape(part, (bsz, seqlen, config.heads, hd)), (0, 2, 1, 3))
            heads.append(part)
        q, k, v = heads
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), inv_sqrt)
        if attn_bias is not None:
            scores = add(scores, attn_bias)
        weights = drop(softmax_last(scores))
        ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (bsz, seqlen, d))
        h = add(h, drop(add(matmul(ctx, params[f"{p}.attn.wo"]), params[f"{p}.attn.bo"])))
        ff = nm.layernorm(h, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
        ff = nm.gelu(add(matmul(ff, params[f"{p}.ff.w1"]), params[f"{p}.ff.b1"]))
        ff = add(matmul(ff, params[f"{p}.ff.w2"]), params[f"{p}.ff.b2"])
        h = add(h, drop(ff))

    h = nm.layernorm(h, params["ln_f.gain"], params["ln_f.bias"])
    out_w = params["tok_emb"] if config.tie_output_embeddings else params["mlm_out.weight"]
    logits = add(matmul(h, transpose(out_w, (1, 0))), params["mlm_bias"])
    return {"logits": logits, "hidden": h, "tok_emb": tok, "squeezed": squeezed,
            "batch": bsz, "seqlen": seqlen}


def forward_tokens(params: dict[str, Tensor], config: ModelConfig, ids,
                   train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Per-position vocabulary logits; (S, V) for 1-D input, (B, S, V) batched."""
    out = _forward(params, config, ids, train=train, rng=rng)
    logits = out["logits"]
    if out["squeezed"]:
        logits = reshape(logits, logits.data.shape[1:])
    return logits


def label_probs_from_logits(logits: Tensor, slots, verbalizer_ids: tuple[int, int]) -> Tensor:
    """Restricted softmax over the two verbalizer tokens at each label slot.

    logits is the batched (B, S, V) output; slots gives each sentence's
    label-slot position.
    """
    bsz, seqlen, vocab = logits.data.shape
    slots = np.asarray(slots, dtype=np.intp)
    flat = reshape(logits, (bsz * seqlen, vocab))
    rows = take(flat, np.arange(bsz) * seqlen + slots)
    pair = transpose(take(transpose(rows, (1, 0)), np.asarray(verbalizer_ids)), (1, 0))
    return softmax_last(pair)


def cls_label_probs(hidden: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Softmax over the linear head applied to the [CLS] position."""
    first = slice_(hidden, (slice(None), 0, slice(None)))
    return softmax_last(add(matmul(first, params["cls_head.weight"]),
                            params["cls_head.bias"]))


def token_probs_from_logits(logits: Tensor, flat_positions) -> Tensor:
    """Full-vocabulary softmax rows at flattened (batch*seq) positions."""
    bsz, seqlen, vocab = logits.data.shape
    flat = reshape(logits, (bsz * seqlen, vocab))
    rows = take(flat, np.asarray(flat_positions, dtype=np.intp))
    return softmax_last(rows)


def label_distribution(params: dict[str, Tensor], config: ModelConfig, ids, slots,
                       verbalizer_ids: tuple[int, int], readout: str = "prompt",
                       train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """p(label | input) per sentence; rows sum to 1."""
    out = _forward(params, config, ids, train=train, rng=rng)
    if readout == "prompt":
        if slots is None:
            raise ModelError("prompt readout needs label-slot indices")
        slot_arr = [slots] if out["squeezed"] else slots
        probs = label_probs_from_logits(out["logits"], slot_arr, verbalizer_ids)
    elif readout == "cls":
        probs = cls_label_probs(out["hidden"], params)
    else:
        raise ModelError(f"unknown readout {readout!r}")
    if out["squeezed"]:
        probs = reshape(probs, (2,))
    return probs


def mlm_token_distribution(params: dict[str, Tensor], config: ModelConfig, ids,
                           positions) -> Tensor:
    """Token distributions at the requested positions of one sentence."""
    out = _forward(params, config, ids)
    positions = np.asarray(positions, dtype=np.intp)
    if positions.size == 0:
        return constant(np.zeros((0, config.vocab_size)))
    return token_probs_from_logits(out["logits"], positions)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    config: ModelConfig
    extras: dict
    manifest: dict


def checkpoint_save(params: dict[str, Tensor], config: ModelConfig, path,
                    dtype: str = "float64", extras: dict | None = None) -> None:
    """Manifest JSON + raw little-endian IEEE-754 payload in one file."""
    if dtype not in ("float64", "float32"):
        raise ModelError(f"unsupported storage dtype {dtype!r}")
    np_dtype = "<f8" if dtype == "float64" else "<f4"
    entries = []
    chunks = []
    offset = 0
    for name, p in params.items():
        raw = np.ascontiguousarray(p.data, dtype=np_dtype).tobytes()
        entries.append({"name": name, "shape": list(p.data.shape), "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "config": config.to_dict(),
        "dtype": dtype,
        "params": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extras": extras or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        fh.write(payload)


def checkpoint_load(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ModelError(f"{path}: not a checkpoint file")
        length = int.from_bytes(fh.read(4), "little")
        manifest = json.loads(fh.read(length).decode("utf-8"))
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise ModelError(f"{path}: payload hash mismatch (corrupt checkpoint)")
    config = ModelConfig.from_dict(manifest["config"])
    if expected_config is not None:
        for f in fields(ModelConfig):
            got = getattr(config, f.name)
            want = getattr(expected_config, f.name)
            if got != want:
                raise ModelError(
                    f"{path}: config field '{f.name}' is {got!r}, expected {want!r}")
    np_dtype = "<f8" if manifest["dtype"] == "float64" else "<f4"
    params: dict[str, Tensor] = {}
    for entry in manifest["params"]:
        raw = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np_dtype).astype(np.float64).reshape(entry["shape"])
        params[entry["name"]] = Tensor(arr.copy(), name=entry["name"])
    return Checkpoint(params=params, config=config, extras=manifest.get("extras", {}),
                      manifest=manifest)


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {name: Tensor(p.data.copy(), name=name) for name, p in params.items()}
