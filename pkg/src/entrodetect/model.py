"""The entropy-sequence classifier: architecture, prediction, serialization.

Stack: scalar entropy -> affine to embed_dim + LayerNorm + GELU -> 2-layer
bidirectional LSTM -> attention pooling to a fixed context vector -> two
fully-connected blocks (affine + BatchNorm + ReLU + dropout) -> affine to
two class logits. Dropout applies after the embedding activation, between
the LSTM layers, on the context vector, and after each ReLU.

With the default configuration the parameter budget is exactly 652,355:
embedding 256, BiLSTM 593,920, attention 16,513, fully connected 41,536,
output 130.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    DimensionError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)
from .nn import (
    BatchNormState,
    GateParams,
    Parameters,
    RngStream,
    affine_backward,
    affine_forward,
    attention_pool_backward,
    attention_pool_forward,
    batch_norm_backward,
    batch_norm_forward,
    bilstm_backward,
    bilstm_forward,
    dropout_backward,
    dropout_forward,
    gelu_backward,
    gelu_forward,
    layer_norm_backward,
    layer_norm_forward,
    relu_backward,
    relu_forward,
    softmax,
)

MODEL_MAGIC = b"SHED"
MODEL_FORMAT_VERSION = 1
MODEL_KIND = "entropy-classifier"


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    lstm_hidden: int = 128
    lstm_layers: int = 2
    attn_hidden: int = 64
    fc_dims: tuple[int, ...] = (128, 64)
    num_classes: int = 2
    dropout: float = 0.4
    max_seq_len: int = 64

    def __post_init__(self):
        dims = (
            self.embed_dim,
            self.lstm_hidden,
            self.lstm_layers,
            self.attn_hidden,
            self.num_classes,
            self.max_seq_len,
            *self.fc_dims,
        )
        if any(int(d) <= 0 for d in dims):
            raise ValidationError(f"all config dimensions must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        object.__setattr__(self, "fc_dims", tuple(int(d) for d in self.fc_dims))

    def component_counts(self) -> dict[str, int]:
        """Closed-form parameter counts per architectural component."""
        e, h, a = self.embed_dim, self.lstm_hidden, self.attn_hidden
        embedding = (1 * e + e) + 2 * e  # affine + layer-norm gain/bias
        bilstm = 0
        for layer in range(self.lstm_layers):
            d_in = e if layer == 0 else 2 * h
            bilstm += 2 * (4 * h * (d_in + h) + 8 * h)  # two bias vectors per direction
        attention = (2 * h * a + a) + (a + 1)
        fully_connected = 0
        d_in = 2 * h
        for f in self.fc_dims:
            fully_connected += d_in * f + f + 2 * f  # affine + batch-norm gain/bias
            d_in = f
        output = d_in * self.num_classes + self.num_classes
        total = embedding + bilstm + attention + fully_connected + output
        return {
            "embedding": embedding,
            "bilstm": bilstm,
            "attention": attention,
            "fully_connected": fully_connected,
            "output": output,
            "total": total,
        }

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "lstm_hidden": self.lstm_hidden,
            "lstm_layers": self.lstm_layers,
            "attn_hidden": self.attn_hidden,
            "fc_dims": list(self.fc_dims),
            "num_classes": self.num_classes,
            "dropout": self.dropout,
            "max_seq_len": self.max_seq_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["fc_dims"] = tuple(d.get("fc_dims", (128, 64)))
        return cls(**d)


@dataclass
class Prediction:
    """Class probabilities, argmax class (ties go to class 0), and the
    attention weights over the true (post-truncation) sequence length."""

    probs: np.ndarray
    predicted_class: int
    attention: np.ndarray


def pad_sequences(seqs: list[np.ndarray]):
    """Pad variable-length 1-D sequences to the batch max length.

    Returns (values [n, S], mask [n, S] bool). Padded slots hold 0.0.
    """
    if not seqs:
        raise ValidationError("empty batch")
    lengths = [len(s) for s in seqs]
    if min(lengths) < 1:
        raise ValidationError("all sequences must have at least one value")
    n, S = len(seqs), max(lengths)
    values = np.zeros((n, S))
    mask = np.zeros((n, S), dtype=bool)
    for i, s in enumerate(seqs):
        values[i, : lengths[i]] = s
        mask[i, : lengths[i]] = True
    return values, mask


class EntropyClassifier:
    """Full classifier with explicit forward/backward and a dropout RNG.

    Train-mode forward draws dropout masks from ``self.rng`` and updates
    batch-norm running statistics; eval-mode forward is a pure function of
    the inputs and parameters.
    """

    def __init__(self, config: ModelConfig | None = None, rng: RngStream | None = None):
        self.config = config if config is not None else ModelConfig()
        self.rng = rng if rng is not None else RngStream(0)
        self.mode = "train"
        self.params = Parameters()
        self.bn_states: list[BatchNormState] = []
        self._build(self.rng)
        counts = self.config.component_counts()
        actual = self.params.total_size()
        if actual != counts["total"]:
            raise ValidationError(
                f"parameter accounting mismatch: built {actual}, expected {counts['total']}"
            )

    # -- construction -------------------------------------------------------

    def _uniform(self, rng: RngStream, shape, fan_in: int) -> np.ndarray:
        bound = float(np.sqrt(1.0 / fan_in))
        return rng.uniform(-bound, bound, shape)

    def _build(self, rng: RngStream) -> None:
        c = self.config
        e, h, a = c.embed_dim, c.lstm_hidden, c.attn_hidden
        p = self.params

        p.add("embed.W", self._uniform(rng, (1, e), 1))
        p.add("embed.b", np.zeros(e))
        p.add("embed.ln_gain", np.ones(e))
        p.add("embed.ln_bias", np.zeros(e))

        for layer in range(c.lstm_layers):
            d_in = e if layer == 0 else 2 * h
            for direction in ("fwd", "bwd"):
                prefix = f"lstm{layer}.{direction}"
                p.add(f"{prefix}.W_ih", self._uniform(rng, (4 * h, d_in), d_in))
                p.add(f"{prefix}.W_hh", self._uniform(rng, (4 * h, h), h))
                b_ih = np.zeros(4 * h)
                b_hh = np.zeros(4 * h)
                b_ih[h : 2 * h] = 1.0  # forget-gate bias: keep early cell state
                b_hh[h : 2 * h] = 1.0
                p.add(f"{prefix}.b_ih", b_ih)
                p.add(f"{prefix}.b_hh", b_hh)

        p.add("attn.W1", self._uniform(rng, (2 * h, a), 2 * h))
        p.add("attn.b1", np.zeros(a))
        p.add("attn.w2", self._uniform(rng, (a, 1), a))
        p.add("attn.b2", np.zeros(1))

        d_in = 2 * h
        for i, f in enumerate(c.fc_dims):
            p.add(f"fc{i}.W", self._uniform(rng, (d_in, f), d_in))
            p.add(f"fc{i}.b", np.zeros(f))
            p.add(f"fc{i}.bn_gain", np.ones(f))
            p.add(f"fc{i}.bn_bias", np.zeros(f))
            self.bn_states.append(BatchNormState(f))
            d_in = f

        p.add("out.W", self._uniform(rng, (d_in, c.num_classes), d_in))
        p.add("out.b", np.zeros(c.num_classes))

    def _gate_params(self, layer: int, direction: str) -> GateParams:
        p = self.params
        prefix = f"lstm{layer}.{direction}"
        return GateParams(
            p[f"{prefix}.W_ih"].data,
            p[f"{prefix}.W_hh"].data,
            p[f"{prefix}.b_ih"].data,
            p[f"{prefix}.b_hh"].data,
        )

    def _layer_weights(self):
        return [
            (self._gate_params(layer, "fwd"), self._gate_params(layer, "bwd"))
            for layer in range(self.config.lstm_layers)
        ]

    # -- mode / bookkeeping -------------------------------------------------

    def train_mode(self) -> None:
        self.mode = "train"

    def eval_mode(self) -> None:
        self.mode = "eval"

    def zero_grads(self) -> None:
        self.params.zero_grads()

    @property
    def num_params(self) -> int:
        return self.params.total_size()

    def parameter_counts(self) -> dict[str, int]:
        return self.config.component_counts()

    def snapshot(self) -> dict:
        return {
            "params": self.params.snapshot(),
            "bn": [(s.mean.copy(), s.var.copy()) for s in self.bn_states],
        }

    def restore(self, snap: dict) -> None:
        self.params.restore(snap["params"])
        for state, (mean, var) in zip(self.bn_states, snap["bn"]):
            state.mean[...] = mean
            state.var[...] = var

    # -- forward / backward -------------------------------------------------

    def forward(self, values: np.ndarray, mask: np.ndarray, mode: str | None = None):
        """values [n, S] float64, mask [n, S] bool -> (logits, attention, cache)."""
        mode = self.mode if mode is None else mode
        values = np.asarray(values, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if values.ndim != 2 or mask.shape != values.shape:
            raise DimensionError(
                f"values {values.shape} and mask {mask.shape} must be matching [n, S]"
            )
        n, S = values.shape
        if S > self.config.max_seq_len:
            raise ValidationError(
                f"batch length {S} exceeds max_seq_len {self.config.max_seq_len}; "
                "truncate sequences first"
            )
        if not mask.any(axis=1).all():
            raise ValidationError("batch contains an all-padding row")
        p = self.params
        rate = self.config.dropout
        rng = self.rng

        x = values.reshape(n * S, 1)
        emb, c_aff = affine_forward(x, p["embed.W"].data, p["embed.b"].data)
        ln, c_ln = layer_norm_forward(
            emb, p["embed.ln_gain"].data, p["embed.ln_bias"].data
        )
        act, c_gelu = gelu_forward(ln)
        act = act.reshape(n, S, self.config.embed_dim)
        act, c_drop0 = dropout_forward(act, rate, mode, rng)

        maskf = mask.astype(np.float64)
        B, c_bilstm = bilstm_forward(
            act,
            maskf,
            self._layer_weights(),
            dropout_rate=rate,
            mode=mode,
            rng=rng,
        )
        context, attn, c_attn = attention_pool_forward(
            B,
            mask,
            p["attn.W1"].data,
            p["attn.b1"].data,
            p["attn.w2"].data,
            p["attn.b2"].data,
        )
        hcur, c_dropc = dropout_forward(context, rate, mode, rng)

        fc_caches = []
        for i in range(len(self.config.fc_dims)):
            h1, c_fc = affine_forward(hcur, p[f"fc{i}.W"].data, p[f"fc{i}.b"].data)
            h2, c_bn = batch_norm_forward(
                h1,
                p[f"fc{i}.bn_gain"].data,
                p[f"fc{i}.bn_bias"].data,
                self.bn_states[i],
                mode,
            )
            h3, c_relu = relu_forward(h2)
            hcur, c_drop = dropout_forward(h3, rate, mode, rng)
            fc_caches.append((c_fc, c_bn, c_relu, c_drop))

        logits, c_out = affine_forward(hcur, p["out.W"].data, p["out.b"].data)
        cache = (n, S, c_aff, c_ln, c_gelu, c_drop0, c_bilstm, c_attn, c_dropc, fc_caches, c_out)
        return logits, attn, cache

    def backward(self, dlogits: np.ndarray, cache) -> None:
        """Accumulate parameter gradients for the given upstream dlogits."""
        n, S, c_aff, c_ln, c_gelu, c_drop0, c_bilstm, c_attn, c_dropc, fc_caches, c_out = cache
        p = self.params

        d, dW, db = affine_backward(dlogits, c_out)
        p["out.W"].grad += dW
        p["out.b"].grad += db

        for i in range(len(fc_caches) - 1, -1, -1):
            c_fc, c_bn, c_relu, c_drop = fc_caches[i]
            d = dropout_backward(d, c_drop)
            d = relu_backward(d, c_relu)
            d, dgain, dbias = batch_norm_backward(d, c_bn)
            p[f"fc{i}.bn_gain"].grad += dgain
            p[f"fc{i}.bn_bias"].grad += dbias
            d, dW, db = affine_backward(d, c_fc)
            p[f"fc{i}.W"].grad += dW
            p[f"fc{i}.b"].grad += db

        d = dropout_backward(d, c_dropc)
        dB, dW1, db1, dw2, db2 = attention_pool_backward(d, c_attn)
        p["attn.W1"].grad += dW1
        p["attn.b1"].grad += db1
        p["attn.w2"].grad += dw2
        p["attn.b2"].grad += db2

        dseq, lstm_grads = bilstm_backward(dB, c_bilstm)
        for layer, (gf, gb) in enumerate(lstm_grads):
            for direction, g in (("fwd", gf), ("bwd", gb)):
                prefix = f"lstm{layer}.{direction}"
                p[f"{prefix}.W_ih"].grad += g[0]
                p[f"{prefix}.W_hh"].grad += g[1]
                p[f"{prefix}.b_ih"].grad += g[2]
                p[f"{prefix}.b_hh"].grad += g[3]

        d = dropout_backward(dseq, c_drop0)
        d = d.reshape(n * S, self.config.embed_dim)
        d = gelu_backward(d, c_gelu)
        d, dgain, dbias = layer_norm_backward(d, c_ln)
        p["embed.ln_gain"].grad += dgain
        p["embed.ln_bias"].grad += dbias
        _, dW, db = affine_backward(d, c_aff)
        p["embed.W"].grad += dW
        p["embed.b"].grad += db

    # -- prediction ----------------------------------------------------------

    def predict_batch(self, sequences) -> list[Prediction]:
        """Eval-mode predictions for a list of entropy-value sequences.

        Sequences longer than max_seq_len are truncated to their first
        max_seq_len values, so the result is independent of any extra tail.
        """
        seqs = [
            np.asarray(s, dtype=np.float64)[: self.config.max_seq_len] for s in sequences
        ]
        values, mask = pad_sequences(seqs)
        logits, attn, _ = self.forward(values, mask, mode="eval")
        probs = softmax(logits, axis=1)
        out = []
        for i, s in enumerate(seqs):
            L = len(s)
            out.append(
                Prediction(
                    probs=probs[i],
                    predicted_class=int(np.argmax(probs[i])),
                    attention=attn[i, :L].copy(),
                )
            )
        return out

    def predict(self, sequence) -> Prediction:
        return self.predict_batch([sequence])[0]


# ---------------------------------------------------------------------------
# binary container format
#
# magic "SHED" | u32 version | u64 payload length | payload | u32 crc32(payload)
# payload: u32-length JSON config block, then two tensor sections (params,
# state), each a u32 count followed by records of
# (u32 name length, name utf-8, u32 ndim, u32 dims..., float64-LE data).


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    parts = [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, nbytes: int) -> bytes:
        if self.pos + nbytes > len(self.buf):
            raise TruncatedFileError("model payload ends mid-record")
        out = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _unpack_tensor(cur: _Cursor) -> tuple[str, np.ndarray]:
    name = cur.take(cur.u32()).decode("utf-8")
    ndim = cur.u32()
    dims = struct.unpack(f"<{ndim}I", cur.take(4 * ndim))
    count = int(np.prod(dims)) if ndim else 1
    data = np.frombuffer(cur.take(8 * count), dtype="<f8").reshape(dims)
    return name, data.astype(np.float64)


def write_container(path, config: dict, tensors, state) -> None:
    """Write named float64 arrays plus a JSON config block with a CRC-32."""
    payload = bytearray()
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload += struct.pack("<I", len(cfg)) + cfg
    for section in (tensors, state):
        payload += struct.pack("<I", len(section))
        for name, arr in section:
            payload += _pack_tensor(name, np.asarray(arr, dtype=np.float64))
    blob = (
        MODEL_MAGIC
        + struct.pack("<I", MODEL_FORMAT_VERSION)
        + struct.pack("<Q", len(payload))
        + bytes(payload)
        + struct.pack("<I", zlib.crc32(bytes(payload)))
    )
    Path(path).write_bytes(blob)


def read_container(path):
    """Inverse of write_container with distinct failure modes."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: too short to hold a header")
    if raw[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{path}: not a model file (bad magic {raw[:4]!r})")
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: header is incomplete")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {version}, this build reads {MODEL_FORMAT_VERSION}"
        )
    payload_len = struct.unpack("<Q", raw[8:16])[0]
    expected = 16 + payload_len + 4
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: holds {len(raw)} bytes, header declares {expected}"
        )
    if len(raw) > expected:
        raise ValidationError(f"{path}: {len(raw) - expected} trailing bytes")
    payload = raw[16 : 16 + payload_len]
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(payload) != stored_crc:
        raise ChecksumError(f"{path}: payload CRC-32 mismatch")

    cur = _Cursor(payload)
    config = json.loads(cur.take(cur.u32()).decode("utf-8"))
    sections = []
    for _ in range(2):
        count = cur.u32()
        sections.append([_unpack_tensor(cur) for _ in range(count)])
    if cur.pos != len(payload):
        raise ValidationError(f"{path}: {len(payload) - cur.pos} unread payload bytes")
    return config, sections[0], sections[1]


def save_model(model: EntropyClassifier, path) -> None:
    config = {"kind": MODEL_KIND, "config": model.config.to_dict()}
    tensors = [(t.name, t.data) for t in model.params]
    state = []
    for i, s in enumerate(model.bn_states):
        state.append((f"bn{i}.mean", s.mean))
        state.append((f"bn{i}.var", s.var))
    write_container(path, config, tensors, state)


def load_model(path) -> EntropyClassifier:
    config, tensors, state = read_container(path)
    if config.get("kind") != MODEL_KIND:
        raise ValidationError(
            f"{path}: holds a {config.get('kind')!r}, expected {MODEL_KIND!r}"
        )
    model = EntropyClassifier(ModelConfig.from_dict(config["config"]))
    loaded = dict(tensors)
    if set(loaded) != set(model.params.names()):
        raise ValidationError(f"{path}: tensor names do not match the architecture")
    for t in model.params:
        arr = loaded[t.name]
        if arr.shape != t.data.shape:
            raise DimensionError(
                f"{path}: tensor {t.name} has shape {arr.shape}, expected {t.data.shape}"
            )
        t.data[...] = arr
    stated = dict(state)
    for i, s in enumerate(model.bn_states):
        try:
            s.mean[...] = stated[f"bn{i}.mean"]
            s.var[...] = stated[f"bn{i}.var"]
        except KeyError as exc:
            raise ValidationError(f"{path}: missing running-stat tensor {exc}") from exc
    model.eval_mode()
    return model
