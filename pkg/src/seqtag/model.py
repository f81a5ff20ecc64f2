"""Model assembly, parameter accounting and persistence.

Three architectures share one word-level pipeline (embedding lookup,
bidirectional LSTM, narrow tanh layer, output scores):

* ``word``       feeds word embeddings straight in
* ``concat``     appends the character-composed vector, doubling the
                 width of the word-level LSTM input
* ``attention``  gates the two vectors together, keeping the input
                 width unchanged, and adds the auxiliary cosine term
                 to the training loss

The output layer is either a per-token softmax or a linear-chain CRF.

Saved models are a single binary container: a short magic, a JSON
header (format version, configuration, vocabulary, tensor manifest)
and the raw parameter data as little-endian 32-bit floats.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    const_like,
    log_sum_exp,
    matmul,
    multiply,
    narrow,
    no_tape,
    reduce_sum,
)
from .charcomp import (
    AttentionParams,
    CharComposerParams,
    char_aux_loss,
    combine_attention,
    combine_concat,
    compose_word,
)
from .corpus import Sentence, Vocabulary, random_embeddings
from .crf import TagLattice, crf_nll, emission_scores, viterbi_decode
from .layers import (
    EmbeddingTable,
    LstmParams,
    bilstm_run,
    dense_tanh,
    embedding_lookup,
    glorot_uniform,
    init_lstm_params,
)

ARCHITECTURES = ("word", "concat", "attention")
OUTPUTS = ("softmax", "crf")

MODEL_MAGIC = b"SQTG"
MODEL_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    architecture: str = "word"
    output: str = "crf"
    word_dim: int = 300
    char_dim: int = 50
    word_lstm_hidden: int = 200
    char_lstm_hidden: int = 200
    d_size: int = 50
    batch_size: int = 64
    patience: int = 7
    learning_rate: float = 1.0
    rho: float = 0.95
    epsilon: float = 1e-6
    seed: int = 1
    max_epochs: int = 100
    shuffle: bool = False
    dev_metric: str = "acc"
    positive_label: str = ""
    dtype: str = "float32"

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.output not in OUTPUTS:
            raise ValueError(f"output must be one of {OUTPUTS}, got {self.output!r}")
        for name in ("word_dim", "char_dim", "word_lstm_hidden", "char_lstm_hidden",
                     "d_size", "batch_size", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.epsilon <= 0 or self.learning_rate <= 0:
            raise ValueError("epsilon and learning_rate must be positive")
        if self.dev_metric not in ("acc", "span-f1", "f0.5"):
            raise ValueError(f"dev_metric must be acc, span-f1 or f0.5, got {self.dev_metric!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return self

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()


class Model:
    """Named parameter collection plus per-sentence forward procedures."""

    def __init__(self, config, vocab, word_emb, word_fwd, word_bwd, w_d, w_o,
                 transitions=None, char=None, attn=None):
        self.config = config
        self.vocab = vocab
        self.word_emb: EmbeddingTable = word_emb
        self.word_fwd: LstmParams = word_fwd
        self.word_bwd: LstmParams = word_bwd
        self.w_d: Tensor = w_d
        self.w_o: Tensor = w_o
        self.transitions: Tensor | None = transitions
        self.char: CharComposerParams | None = char
        self.attn: AttentionParams | None = attn
        self._registry = self._build_registry()

    def _build_registry(self) -> dict:
        reg = {"word_embeddings": self.word_emb.matrix}
        for tag, p in (("fwd", self.word_fwd), ("bwd", self.word_bwd)):
            reg[f"word_lstm.{tag}.w_x"] = p.w_x
            reg[f"word_lstm.{tag}.w_h"] = p.w_h
            reg[f"word_lstm.{tag}.b"] = p.b
        reg["hidden.w_d"] = self.w_d
        reg["output.w_o"] = self.w_o
        if self.transitions is not None:
            reg["crf.transitions"] = self.transitions
        if self.char is not None:
            reg["char_embeddings"] = self.char.char_embeddings.matrix
            for tag, p in (("fwd", self.char.fwd), ("bwd", self.char.bwd)):
                reg[f"char_lstm.{tag}.w_x"] = p.w_x
                reg[f"char_lstm.{tag}.w_h"] = p.w_h
                reg[f"char_lstm.{tag}.b"] = p.b
            reg["char_proj.w_m"] = self.char.w_m
        if self.attn is not None:
            reg["attn.w_z1"] = self.attn.w_z1
            reg["attn.w_z2"] = self.attn.w_z2
            reg["attn.w_z3"] = self.attn.w_z3
        return reg

    # -- parameter access ---------------------------------------------------

    def all_tensors(self) -> dict:
        return dict(self._registry)

    def named_parameters(self) -> dict:
        """Trainable tensors only, in stable registry order."""
        return {n: t for n, t in self._registry.items() if not t.constant}

    def zero_grad(self):
        for t in self._registry.values():
            t.grad = None

    def state_arrays(self) -> dict:
        return {n: t.values.copy() for n, t in self._registry.items()}

    def load_state_arrays(self, state: dict):
        for name, values in state.items():
            self._registry[name].values[...] = values

    # -- forward ------------------------------------------------------------

    def _require_encoded(self, sent: Sentence, need_gold: bool):
        if sent.word_ids is None or sent.char_ids is None:
            raise ValueError("sentence has not been encoded against the vocabulary")
        if need_gold and sent.gold is None:
            raise ValueError("sentence has no gold label ids")

    def oov_flags(self, sent: Sentence) -> list:
        return [wid == self.vocab.oov_word_id for wid in sent.word_ids]

    def _token_inputs(self, sent: Sentence):
        """Per-token inputs to the word-level LSTM, plus x/m/z sequences."""
        xs = [embedding_lookup(self.word_emb, wid) for wid in sent.word_ids]
        arch = self.config.architecture
        if arch == "word":
            return xs, xs, None, None
        ms = [compose_word(cids, self.char) for cids in sent.char_ids]
        if arch == "concat":
            return [combine_concat(x, m) for x, m in zip(xs, ms)], xs, ms, None
        combined = []
        zs = []
        for x, m in zip(xs, ms):
            xt, z = combine_attention(x, m, self.attn)
            combined.append(xt)
            zs.append(z)
        return combined, xs, ms, zs

    def _hidden_states(self, inputs):
        out = bilstm_run(inputs, self.word_fwd, self.word_bwd)
        return [dense_tanh(h, self.w_d) for h in out.per_step]

    def sentence_lattice(self, sent: Sentence) -> TagLattice:
        if self.config.output != "crf":
            raise ValueError("sentence_lattice: model does not use a CRF output")
        self._require_encoded(sent, need_gold=False)
        inputs, _, _, _ = self._token_inputs(sent)
        d_seq = self._hidden_states(inputs)
        return TagLattice(emission_scores(d_seq, self.w_o), self.transitions)

    def sentence_loss_parts(self, sent: Sentence):
        """(total loss, auxiliary term or None) for one sentence."""
        self._require_encoded(sent, need_gold=True)
        inputs, xs, ms, _ = self._token_inputs(sent)
        d_seq = self._hidden_states(inputs)
        if self.config.output == "crf":
            lat = TagLattice(emission_scores(d_seq, self.w_o), self.transitions)
            main = crf_nll(lat, sent.gold)
        else:
            logits = [matmul(self.w_o, d) for d in d_seq]
            lse_total = reduce_sum(concat([log_sum_exp(l) for l in logits]))
            gold_total = reduce_sum(
                concat([narrow(l, y, y + 1) for l, y in zip(logits, sent.gold)])
            )
            main = add(lse_total, multiply(gold_total, const_like(-1.0, gold_total)))
        if self.config.architecture != "attention":
            return main, None
        aux = char_aux_loss(ms, xs, self.oov_flags(sent))
        return add(main, aux), aux

    def sentence_loss(self, sent: Sentence) -> Tensor:
        total, _ = self.sentence_loss_parts(sent)
        return total

    def predict(self, sent: Sentence) -> list:
        """Label ids for one sentence; never records on a tape."""
        self._require_encoded(sent, need_gold=False)
        with no_tape():
            if self.config.output == "crf":
                path, _ = viterbi_decode(self.sentence_lattice(sent))
                return path
            inputs, _, _, _ = self._token_inputs(sent)
            d_seq = self._hidden_states(inputs)
            return [int(np.argmax(matmul(self.w_o, d).values)) for d in d_seq]

    def predict_labels(self, sent: Sentence) -> list:
        return [self.vocab.label_set.label(i) for i in self.predict(sent)]

    def gates(self, sent: Sentence) -> list:
        """Per-token gate vectors z; attention models only."""
        if self.config.architecture != "attention":
            raise ValueError(
                f"gates: model architecture is {self.config.architecture!r}, "
                "gate inspection needs an attention model"
            )
        self._require_encoded(sent, need_gold=False)
        with no_tape():
            _, _, _, zs = self._token_inputs(sent)
        return [z.values.copy() for z in zs]


def assemble_model(config: ModelConfig, vocab: Vocabulary,
                   pretrained: EmbeddingTable | None = None) -> Model:
    """Instantiate all parameters for the configured architecture.

    Creation order is fixed, so a given seed always produces the same
    initialization. A supplied pretrained table replaces the random
    word embeddings and must match word_dim.
    """
    config.validate()
    dtype = config.np_dtype()
    rng = np.random.default_rng(config.seed)
    n_labels = len(vocab.label_set)

    if pretrained is not None:
        if pretrained.dim != config.word_dim:
            raise ValueError(
                f"pretrained embedding dim {pretrained.dim} != word_dim {config.word_dim}"
            )
        if pretrained.vocab_size != vocab.n_words:
            raise ValueError(
                f"pretrained table has {pretrained.vocab_size} rows, vocabulary has {vocab.n_words}"
            )
        word_emb = EmbeddingTable(
            Tensor(pretrained.matrix.values.astype(dtype)),
            oov_row=pretrained.oov_row,
            trainable=pretrained.trainable,
        )
    else:
        word_emb = random_embeddings(vocab.n_words, config.word_dim, rng, dtype)

    word_input = 2 * config.word_dim if config.architecture == "concat" else config.word_dim
    word_fwd = init_lstm_params(rng, word_input, config.word_lstm_hidden, dtype)
    word_bwd = init_lstm_params(rng, word_input, config.word_lstm_hidden, dtype)
    w_d = Tensor(glorot_uniform(rng, config.d_size, 2 * config.word_lstm_hidden, dtype))
    w_o = Tensor(glorot_uniform(rng, n_labels, config.d_size, dtype))
    transitions = None
    if config.output == "crf":
        transitions = Tensor(np.zeros((n_labels + 2, n_labels + 2), dtype=dtype))

    char = None
    attn = None
    if config.architecture in ("concat", "attention"):
        char_emb = random_embeddings(vocab.n_chars, config.char_dim, rng, dtype)
        char_fwd = init_lstm_params(rng, config.char_dim, config.char_lstm_hidden, dtype)
        char_bwd = init_lstm_params(rng, config.char_dim, config.char_lstm_hidden, dtype)
        w_m = Tensor(glorot_uniform(rng, config.word_dim, 2 * config.char_lstm_hidden, dtype))
        char = CharComposerParams(char_emb, char_fwd, char_bwd, w_m)
    if config.architecture == "attention":
        attn = AttentionParams(
            Tensor(glorot_uniform(rng, config.word_dim, config.word_dim, dtype)),
            Tensor(glorot_uniform(rng, config.word_dim, config.word_dim, dtype)),
            Tensor(glorot_uniform(rng, config.word_dim, config.word_dim, dtype)),
        )

    return Model(config, vocab, word_emb, word_fwd, word_bwd, w_d, w_o,
                 transitions=transitions, char=char, attn=attn)


def count_parameters(model: Model):
    """(total trainable scalars, total excluding the word-embedding table)."""
    total = sum(t.size for t in model.named_parameters().values())
    emb = model.word_emb.matrix
    noemb = total - (emb.size if not emb.constant else 0)
    return total, noemb


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

class ModelFormatError(ValueError):
    pass


def save_model(model: Model, path):
    header = {
        "format": "seqtag-model",
        "format_version": MODEL_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_dict(),
        "tensors": [
            {"name": name, "shape": list(t.shape)}
            for name, t in model.all_tensors().items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, t in model.all_tensors().items():
            fh.write(np.ascontiguousarray(t.values, dtype="<f4").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: not a seqtag model file (bad magic)")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise ModelFormatError(f"{path}: truncated model file (missing header length)")
        (header_len,) = struct.unpack("<Q", raw_len)
        blob = fh.read(header_len)
        if len(blob) != header_len:
            raise ModelFormatError(f"{path}: truncated model file (incomplete header)")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelFormatError(f"{path}: corrupt header ({exc})") from None
        version = header.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"{path}: unsupported format version {version!r}, "
                f"expected {MODEL_FORMAT_VERSION}"
            )
        config = ModelConfig.from_dict(header["config"])
        vocab = Vocabulary.from_dict(header["vocab"])
        model = assemble_model(config, vocab)
        registry = model.all_tensors()
        manifest = header["tensors"]
        if {e["name"] for e in manifest} != set(registry):
            raise ModelFormatError(f"{path}: tensor names do not match the configuration")
        dtype = config.np_dtype()
        for entry in manifest:
            name, shape = entry["name"], tuple(entry["shape"])
            target = registry[name]
            if target.shape != shape:
                raise ModelFormatError(
                    f"{path}: shape mismatch for {name}: file {shape}, model {target.shape}"
                )
            nbytes = int(np.prod(shape, dtype=np.int64)) * 4
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise ModelFormatError(f"{path}: truncated model file (tensor {name})")
            target.values[...] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(dtype)
        if fh.read(1):
            raise ModelFormatError(f"{path}: trailing data after last tensor")
    return model
