"""Class-query transformer over pose-frame sequences.

Each 54-joint frame flattens to a 108-value vector, gets a linear
projection plus a learned positional embedding, and runs through a stack
of standard post-norm encoder blocks (multi-head self-attention with 9
heads by default, then a feed-forward net, residuals around both).

The decoder consumes a single learned query vector instead of a token
sequence. Its "self-attention" therefore degenerates: with one element
there is nothing to attend over, so only the per-head value projections
survive, concatenated and mixed by the usual output linear layer. Cross
attention against the encoder output and the feed-forward net are
standard. The decoded query feeds a softmax classification head.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from sslr import tensor as T
from sslr.data import FRAME_DIM, SignSample
from sslr.tensor import Tensor

log = logging.getLogger("sslr.model")

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    input_dim: int = FRAME_DIM
    hidden_dim: int = FRAME_DIM
    num_heads: int = 9
    num_encoder_blocks: int = 6
    num_decoder_blocks: int = 6
    ffn_dim: int | None = None  # None -> 2 * hidden_dim
    max_sequence_len: int = 204

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.input_dim != FRAME_DIM:
            raise ValueError(f"input_dim is fixed at {FRAME_DIM} (54 joints x 2)")
        if self.hidden_dim < 2:
            raise ValueError("hidden_dim must be >= 2")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.ffn_dim is not None and self.ffn_dim < 1:
            raise ValueError("ffn_dim must be >= 1")
        if min(self.num_encoder_blocks, self.num_decoder_blocks, self.max_sequence_len) < 1:
            raise ValueError("block counts and max_sequence_len must be >= 1")

    @property
    def ffn(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 2 * self.hidden_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; the constructor asserts against it."""
    h, f, c = cfg.hidden_dim, cfg.ffn, cfg.num_classes
    linear = lambda n_in, n_out: n_in * n_out + n_out  # noqa: E731
    embed = linear(cfg.input_dim, h) + cfg.max_sequence_len * h + h  # proj + pos + query
    encoder = cfg.num_encoder_blocks * (
        4 * linear(h, h) + linear(h, f) + linear(f, h) + 2 * 2 * h
    )
    decoder = cfg.num_decoder_blocks * (
        2 * linear(h, h) + 4 * linear(h, h) + linear(h, f) + linear(f, h) + 3 * 2 * h
    )
    classifier = linear(h, c)
    return embed + encoder + decoder + classifier


def sample_to_input(sample: SignSample | np.ndarray) -> np.ndarray:
    """Flatten a pose sequence to the (T, 108) model input.

    Accepts a SignSample, a (T, 54, 2) array, or an already-flat (T, 108)
    array. Missing-joint sentinels become (0, 0), the conventional value
    for undetected keypoints, so raw un-normalized data remains usable.
    """
    if isinstance(sample, SignSample):
        frames = sample.frames
    else:
        frames = np.asarray(sample, dtype=np.float64)
        if frames.ndim == 2 and frames.shape[1] == FRAME_DIM:
            pass  # already flat
        elif frames.ndim == 3 and frames.shape[1:] == (FRAME_DIM // 2, 2):
            pass
        else:
            raise ValueError(
                f"cannot interpret input of shape {frames.shape} as a pose sequence"
            )
    flat = frames.reshape(frames.shape[0], FRAME_DIM)
    if np.isnan(flat).any():
        flat = np.where(np.isnan(flat), 0.0, flat)
    return flat


class SignClassifier:
    """Parameter store plus forward pass for the pose-sequence transformer.

    The model is immutable during inference; concurrent forward passes on
    shared parameters are safe. Training (which mutates parameters through
    the optimizer) must be exclusive.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._init_parameters(np.random.default_rng(seed))
        actual = sum(p.data.size for p in self.params.values())
        expected = expected_parameter_count(config)
        if actual != expected:
            raise AssertionError(
                f"parameter count {actual} != closed-form {expected}"
            )
        self._warned_truncation = False

    # -- construction -------------------------------------------------

    def _add(self, name: str, array: np.ndarray) -> None:
        self.params[name] = Tensor(array, requires_grad=True)

    def _add_linear(self, name: str, n_in: int, n_out: int, rng) -> None:
        bound = 1.0 / math.sqrt(n_in)
        self._add(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
        self._add(f"{name}.b", np.zeros(n_out))

    def _add_norm(self, name: str, n: int) -> None:
        self._add(f"{name}.gain", np.ones(n))
        self._add(f"{name}.bias", np.zeros(n))

    def _init_parameters(self, rng) -> None:
        cfg = self.config
        h = cfg.hidden_dim
        self._add_linear("embed", cfg.input_dim, h, rng)
        self._add("pos", rng.normal(scale=0.02, size=(cfg.max_sequence_len, h)))
        self._add("query", rng.normal(scale=0.02, size=(1, h)))
        for i in range(cfg.num_encoder_blocks):
            p = f"enc{i}"
            for proj in ("q", "k", "v", "o"):
                self._add_linear(f"{p}.attn.{proj}", h, h, rng)
            self._add_norm(f"{p}.norm1", h)
            self._add_linear(f"{p}.ffn1", h, cfg.ffn, rng)
            self._add_linear(f"{p}.ffn2", cfg.ffn, h, rng)
            self._add_norm(f"{p}.norm2", h)
        for i in range(cfg.num_decoder_blocks):
            p = f"dec{i}"
            self._add_linear(f"{p}.self.v", h, h, rng)
            self._add_linear(f"{p}.self.o", h, h, rng)
            self._add_norm(f"{p}.norm1", h)
            for proj in ("q", "k", "v", "o"):
                self._add_linear(f"{p}.cross.{proj}", h, h, rng)
            self._add_norm(f"{p}.norm2", h)
            self._add_linear(f"{p}.ffn1", h, cfg.ffn, rng)
            self._add_linear(f"{p}.ffn2", cfg.ffn, h, rng)
            self._add_norm(f"{p}.norm3", h)
        self._add_linear("cls", h, cfg.num_classes, rng)

    # -- parameter access ---------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            raise ValueError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, arr in state.items():
            if arr.shape != self.params[name].data.shape:
                raise ValueError(
                    f"parameter {name}: shape {arr.shape} != {self.params[name].data.shape}"
                )
            self.params[name].data = arr.astype(np.float64).copy()

    def parameter_hash(self) -> str:
        import hashlib

        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].data.tobytes())
        return digest.hexdigest()

    # -- forward pieces ------------------------------------------------

    def _linear(self, name: str, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.params[f"{name}.w"]), self.params[f"{name}.b"])

    def _norm(self, name: str, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.params[f"{name}.gain"], self.params[f"{name}.bias"])

    def _attention(self, prefix: str, query: Tensor, memory: Tensor,
                   record: list | None = None) -> Tensor:
        """Multi-head scaled dot-product attention of ``query`` over ``memory``."""
        cfg = self.config
        heads = cfg.num_heads
        dh = cfg.hidden_dim // heads
        tq = query.shape[0]
        tk = memory.shape[0]

        def split(x: Tensor, t: int) -> Tensor:
            return T.swapaxes(T.reshape(x, (t, heads, dh)), 0, 1)  # (heads, t, dh)

        q = split(self._linear(f"{prefix}.q", query), tq)
        k = split(self._linear(f"{prefix}.k", memory), tk)
        v = split(self._linear(f"{prefix}.v", memory), tk)
        scores = T.mul(T.matmul(q, T.swapaxes(k, 1, 2)), 1.0 / math.sqrt(dh))
        weights = T.softmax(scores, axis=-1)  # (heads, tq, tk)
        if record is not None:
            record.append(weights.data.copy())
        ctx = T.matmul(weights, v)
        merged = T.reshape(T.swapaxes(ctx, 0, 1), (tq, cfg.hidden_dim))
        return self._linear(f"{prefix}.o", merged)

    def embed_sequence(self, frames_2d: np.ndarray) -> Tensor:
        """(T, 108) input -> (T, hidden): linear projection + positional term.

        Sequences longer than ``max_sequence_len`` are truncated from the
        end with a one-time warning.
        """
        cfg = self.config
        if frames_2d.shape[0] > cfg.max_sequence_len:
            if not self._warned_truncation:
                log.warning(
                    "sequence of %d frames truncated to max_sequence_len=%d",
                    frames_2d.shape[0], cfg.max_sequence_len,
                )
                self._warned_truncation = True
            frames_2d = frames_2d[: cfg.max_sequence_len]
        x = self._linear("embed", Tensor(frames_2d))
        return T.add(x, T.first_rows(self.params["pos"], frames_2d.shape[0]))

    def encode(self, embedded: Tensor, record: list | None = None) -> Tensor:
        """Post-norm encoder stack: attention + FFN with residuals."""
        x = embedded
        for i in range(self.config.num_encoder_blocks):
            p = f"enc{i}"
            attn = self._attention(f"{p}.attn", x, x, record)
            x = self._norm(f"{p}.norm1", T.add(x, attn))
            ffn = self._linear(f"{p}.ffn2", T.relu(self._linear(f"{p}.ffn1", x)))
            x = self._norm(f"{p}.norm2", T.add(x, ffn))
        return x

    def decode_class_query(self, encoded: Tensor, record: list | None = None) -> Tensor:
        """Run the learned class query through the decoder stack; (hidden,) out."""
        q = self.params["query"]  # (1, hidden)
        for i in range(self.config.num_decoder_blocks):
            p = f"dec{i}"
            # Value-only module: per-head value projections of the single
            # query element, concatenated and mixed by the output layer.
            # With one element that is exactly v-projection then o-projection.
            pooled = self._linear(f"{p}.self.o", self._linear(f"{p}.self.v", q))
            q = self._norm(f"{p}.norm1", T.add(q, pooled))
            cross = self._attention(f"{p}.cross", q, encoded, record)
            q = self._norm(f"{p}.norm2", T.add(q, cross))
            ffn = self._linear(f"{p}.ffn2", T.relu(self._linear(f"{p}.ffn1", q)))
            q = self._norm(f"{p}.norm3", T.add(q, ffn))
        return T.reshape(q, (self.config.hidden_dim,))

    def forward_logits(self, sample: SignSample | np.ndarray,
                       record: dict | None = None) -> Tensor:
        """Unnormalized class scores (num_classes,) for one sequence."""
        x = sample_to_input(sample)
        enc_rec = [] if record is not None else None
        dec_rec = [] if record is not None else None
        encoded = self.encode(self.embed_sequence(x), enc_rec)
        decoded = self.decode_class_query(encoded, dec_rec)
        if record is not None:
            record["encoder_attention"] = enc_rec
            record["decoder_attention"] = dec_rec
        return T.matmul(decoded, self.params["cls.w"]) + self.params["cls.b"]

    def forward(self, sample: SignSample | np.ndarray) -> np.ndarray:
        """Class probability vector; sums to one, deterministic in parameters."""
        with T.no_grad():
            return T.softmax(self.forward_logits(sample)).data

    def predict_with_confidence(self, sample: SignSample | np.ndarray) -> tuple[int, float]:
        """Argmax class and its probability; ties break to the lowest index."""
        probs = self.forward(sample)
        idx = int(np.argmax(probs))  # first maximum = lowest class index
        return idx, float(probs[idx])

    # -- checkpointing --------------------------------------------------

    def save(self, path) -> None:
        """Self-describing .npz checkpoint: config + named parameter arrays."""
        meta = json.dumps({
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.config.to_dict(),
        })
        arrays = {name: p.data for name, p in self.params.items()}
        np.savez(path, __meta__=np.frombuffer(meta.encode("utf-8"), dtype=np.uint8),
                 **arrays)

    @classmethod
    def load(cls, path, expected_config: ModelConfig | None = None) -> "SignClassifier":
        with np.load(path) as bundle:
            if "__meta__" not in bundle:
                raise ValueError(f"{path} is not a model checkpoint (missing metadata)")
            meta = json.loads(bytes(bundle["__meta__"]).decode("utf-8"))
            if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise ValueError(
                    f"unsupported checkpoint format version {meta.get('format_version')}"
                )
            config = ModelConfig.from_dict(meta["config"])
            if expected_config is not None and config != expected_config:
                raise ValueError(
                    f"checkpoint config {config} does not match expected {expected_config}"
                )
            state = {name: bundle[name] for name in bundle.files if name != "__meta__"}
        model = cls(config, seed=0)
        model.load_state_arrays(state)
        return model
