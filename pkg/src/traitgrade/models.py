"""Scoring models: the single-task stack and the multi-task network.

One "stack" maps an essay to a representation vector: per sentence,
embedding -> word CNN -> word-level attention pooling; the sentence vectors
then run through an LSTM or BiLSTM whose outputs are pooled by sentence-
level attention. A sigmoid head turns the representation into a normalised
score.

Single-task models own one stack and one head. The multi-task model shares
one embedding table across a stack per trait plus one for the overall score;
the overall head sees the overall representation concatenated with the
predicted trait scores, which is how trait knowledge reaches the holistic
score (and how its gradient reaches the trait stacks).
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .dataset import OVERALL, PromptSpec, denormalize_score
from .tensor import Tensor, concat, parameter, stack_rows, stack_scalars
from .textpipe import PAD_ID, Vocabulary

MODES = ("stl", "mtl")
RECURRENT_KINDS = ("lstm", "bilstm")

CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """A model or run configuration is inconsistent."""


@dataclass(frozen=True)
class Hyperparams:
    """Layer dimensions; defaults are the published full-scale settings."""

    embed_dim: int = 50
    window: int = 5
    filters: int = 100
    hidden: int = 100
    dropout: float = 0.5


@dataclass(frozen=True)
class ModelConfig:
    mode: str
    recurrent: str
    prompt: PromptSpec
    stl_target: str = OVERALL
    hp: Hyperparams = field(default_factory=Hyperparams)
    seed: int = 0
    dtype: str = "float64"
    ablate_trait: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.recurrent not in RECURRENT_KINDS:
            raise ConfigError(
                f"recurrent must be one of {RECURRENT_KINDS}, got {self.recurrent!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.mode == "stl" and self.stl_target not in self.prompt.heads:
            raise ConfigError(
                f"stl_target {self.stl_target!r} not among prompt "
                f"{self.prompt.prompt_id} heads {self.prompt.heads}")
        if self.ablate_trait is not None:
            if self.mode != "mtl":
                raise ConfigError("ablate_trait only applies to mtl models")
            if self.ablate_trait not in self.prompt.traits:
                raise ConfigError(
                    f"unknown trait {self.ablate_trait!r} for prompt "
                    f"{self.prompt.prompt_id}")

    @property
    def name(self) -> str:
        base = f"{self.mode}-{self.recurrent}"
        if self.mode == "stl" and self.stl_target != OVERALL:
            base += f"-{self.stl_target}"
        if self.ablate_trait:
            base += f"-ablate-{self.ablate_trait}"
        return base

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prompt"] = {"prompt_id": self.prompt.prompt_id,
                       "overall_range": list(self.prompt.overall_range),
                       "trait_range": list(self.prompt.trait_range),
                       "traits": list(self.prompt.traits),
                       "essay_type": self.prompt.essay_type}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        p = d["prompt"]
        prompt = PromptSpec(p["prompt_id"], tuple(p["overall_range"]),
                            tuple(p["trait_range"]), tuple(p["traits"]),
                            p["essay_type"])
        return cls(mode=d["mode"], recurrent=d["recurrent"], prompt=prompt,
                   stl_target=d["stl_target"], hp=Hyperparams(**d["hp"]),
                   seed=d["seed"], dtype=d["dtype"],
                   ablate_trait=d.get("ablate_trait"))


class Model:
    """A built network: parameter registry plus the forward recipes."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary,
                 params: dict[str, Tensor]):
        self.config = config
        self.vocab = vocab
        self.params = params

    @property
    def traits(self) -> tuple[str, ...]:
        if self.config.mode == "stl":
            return ()
        ts = self.config.prompt.traits
        if self.config.ablate_trait:
            ts = tuple(t for t in ts if t != self.config.ablate_trait)
        return ts

    @property
    def heads(self) -> tuple[str, ...]:
        if self.config.mode == "stl":
            return (self.config.stl_target,)
        return self.traits + (OVERALL,)

    @property
    def repr_dim(self) -> int:
        mult = 2 if self.config.recurrent == "bilstm" else 1
        return mult * self.config.hp.hidden

    # -- forward -----------------------------------------------------------

    def _sentence_vector(self, stack: str, ids, tok_mask, train, rng):
        hp = self.config.hp
        p = self.params
        emb = L.embed(ids, p["embedding"], pad_id=PAD_ID)
        conv = L.conv1d(emb, p[f"{stack}.conv.w"], p[f"{stack}.conv.b"], hp.window)
        return L.attention_pool(conv, p[f"{stack}.wattn.w"], p[f"{stack}.wattn.b"],
                                p[f"{stack}.wattn.v"], mask=tok_mask)

    def _essay_repr(self, stack: str, sentences, tok_masks, sent_mask, train, rng):
        hp = self.config.hp
        p = self.params
        dt = p["embedding"].data.dtype
        vecs = []
        for s, ids in enumerate(sentences):
            if sent_mask is not None and not sent_mask[s]:
                vecs.append(Tensor(np.zeros(hp.filters, dtype=dt)))
                continue
            tm = None if tok_masks is None else tok_masks[s]
            vecs.append(self._sentence_vector(stack, ids, tm, train, rng))
        x = stack_rows(vecs)
        x = L.dropout(x, hp.dropout, rng, train)
        if self.config.recurrent == "bilstm":
            h = L.bilstm_layer(
                x,
                (p[f"{stack}.lstm.f.wx"], p[f"{stack}.lstm.f.wh"], p[f"{stack}.lstm.f.b"]),
                (p[f"{stack}.lstm.b.wx"], p[f"{stack}.lstm.b.wh"], p[f"{stack}.lstm.b.b"]),
                mask=sent_mask)
        else:
            h = L.lstm_layer(x, p[f"{stack}.lstm.f.wx"], p[f"{stack}.lstm.f.wh"],
                             p[f"{stack}.lstm.f.b"], mask=sent_mask)
        rep = L.attention_pool(h, p[f"{stack}.sattn.w"], p[f"{stack}.sattn.b"],
                               p[f"{stack}.sattn.v"], mask=sent_mask)
        return L.dropout(rep, hp.dropout, rng, train)

    def forward(self, sentences, train=False, rng=None, tok_masks=None,
                sent_mask=None) -> dict[str, Tensor]:
        """Score one essay; returns a scalar tensor in (0,1) per head.

        ``sentences`` is a list of 1-d token-id arrays (one per sentence), or
        the rows of a padded (S, T) id matrix together with ``tok_masks``
        (S, T) and ``sent_mask`` (S,) marking the real tokens and sentences.
        """
        if len(sentences) == 0 or (sent_mask is not None
                                   and not np.any(sent_mask)):
            raise ValueError("cannot score an essay with no sentences")
        if train and rng is None:
            raise ValueError("training-mode forward needs the dropout rng")
        p = self.params
        if self.config.mode == "stl":
            stack = self.config.stl_target
            rep = self._essay_repr(stack, sentences, tok_masks, sent_mask, train, rng)
            score = L.dense_sigmoid(rep, p[f"{stack}.head.w"], p[f"{stack}.head.b"])
            return {stack: score}
        outs: dict[str, Tensor] = {}
        trait_scores = []
        for trait in self.traits:
            rep = self._essay_repr(trait, sentences, tok_masks, sent_mask, train, rng)
            score = L.dense_sigmoid(rep, p[f"{trait}.head.w"], p[f"{trait}.head.b"])
            outs[trait] = score
            trait_scores.append(score)
        rep = self._essay_repr(OVERALL, sentences, tok_masks, sent_mask, train, rng)
        if trait_scores:
            head_in = concat([rep, stack_scalars(trait_scores)])
        else:
            head_in = rep
        outs[OVERALL] = L.dense_sigmoid(
            head_in, p[f"{OVERALL}.head.w"], p[f"{OVERALL}.head.b"])
        return outs

    def predict_scores(self, sentences, **kw) -> dict[str, int]:
        """Eval-mode integer scores per head, denormalised to prompt ranges."""
        outs = self.forward(sentences, train=False, **kw)
        return {head: denormalize_score(float(t.data),
                                        self.config.prompt.range_for(head))
                for head, t in outs.items()}

    # -- parameter bookkeeping ----------------------------------------------

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_snapshot(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ConfigError("snapshot parameter names do not match the model")
        for name, arr in arrays.items():
            self.params[name].data = arr.copy()


def multi_head_loss(preds: dict[str, Tensor], golds: dict[str, float],
                    heads) -> Tensor:
    """Uniformly weighted mean over heads of squared error, as one scalar."""
    heads = list(heads)
    if set(preds) != set(heads) or not set(heads) <= set(golds):
        raise ValueError(f"head mismatch: preds {sorted(preds)} vs heads {heads}")
    pred_vec = stack_scalars([preds[h] for h in heads])
    gold_vec = Tensor(np.array([golds[h] for h in heads],
                               dtype=pred_vec.data.dtype))
    return L.mse_loss(pred_vec, gold_vec)


# ---------------------------------------------------------------------------
# construction


def _init_stack(rng, name: str, hp: Hyperparams, bidirectional: bool,
                head_in: int, dt) -> dict[str, np.ndarray]:
    w, f, h = hp.window, hp.filters, hp.hidden
    r = 2 * h if bidirectional else h
    arrays = {
        f"{name}.conv.w": L.glorot_uniform(rng, (w * hp.embed_dim, f), dt),
        f"{name}.conv.b": np.zeros(f, dtype=dt),
        f"{name}.wattn.w": L.glorot_uniform(rng, (f, f), dt),
        f"{name}.wattn.b": np.zeros(f, dtype=dt),
        f"{name}.wattn.v": L.glorot_uniform(rng, (f,), dt),
    }
    directions = ["f", "b"] if bidirectional else ["f"]
    for d in directions:
        b = np.zeros(4 * h, dtype=dt)
        b[h:2 * h] = 1.0  # forget gate starts open
        arrays[f"{name}.lstm.{d}.wx"] = L.glorot_uniform(rng, (f, 4 * h), dt)
        arrays[f"{name}.lstm.{d}.wh"] = L.glorot_uniform(rng, (h, 4 * h), dt)
        arrays[f"{name}.lstm.{d}.b"] = b
    arrays[f"{name}.sattn.w"] = L.glorot_uniform(rng, (r, r), dt)
    arrays[f"{name}.sattn.b"] = np.zeros(r, dtype=dt)
    arrays[f"{name}.sattn.v"] = L.glorot_uniform(rng, (r,), dt)
    arrays[f"{name}.head.w"] = L.glorot_uniform(rng, (head_in,), dt)
    arrays[f"{name}.head.b"] = np.zeros((), dtype=dt)
    return arrays


def build_model(config: ModelConfig, vocab: Vocabulary,
                glove: dict[str, np.ndarray] | None = None) -> Model:
    """Initialise all parameters (seeded) and copy in pretrained embeddings.

    GloVe vectors, when given, must match the configured embedding width;
    vocabulary tokens absent from GloVe keep their random rows. The padding
    row is zero and stays zero (it is excluded from gradient updates), which
    is what makes padded batches score exactly like unpadded essays.
    """
    hp = config.hp
    dt = np.dtype(config.dtype)
    rng = np.random.default_rng(config.seed)
    V = vocab.size
    emb = rng.uniform(-0.05, 0.05, size=(V, hp.embed_dim)).astype(dt)
    emb[PAD_ID] = 0.0
    if glove is not None:
        widths = {len(v) for v in glove.values()}
        if widths and widths != {hp.embed_dim}:
            raise ConfigError(
                f"pretrained embeddings have width {sorted(widths)}, "
                f"model expects {hp.embed_dim}")
        for token, token_id in vocab.token_to_id.items():
            vec = glove.get(token)
            if vec is not None:
                emb[token_id] = np.asarray(vec, dtype=dt)
    arrays: dict[str, np.ndarray] = {"embedding": emb}
    bidirectional = config.recurrent == "bilstm"
    r = 2 * hp.hidden if bidirectional else hp.hidden
    if config.mode == "stl":
        arrays.update(_init_stack(rng, config.stl_target, hp, bidirectional, r, dt))
    else:
        traits = tuple(t for t in config.prompt.traits
                       if t != config.ablate_trait)
        for trait in traits:
            arrays.update(_init_stack(rng, trait, hp, bidirectional, r, dt))
        arrays.update(_init_stack(rng, OVERALL, hp, bidirectional,
                                  r + len(traits), dt))
    params = {name: parameter(arr) for name, arr in arrays.items()}
    return Model(config, vocab, params)


# ---------------------------------------------------------------------------
# parameter accounting


def count_params(model: Model) -> tuple[int, dict[str, int]]:
    """Exact trainable-parameter total and a per-component breakdown.

    Components: "embedding" plus, per stack, conv / wattn / lstm / sattn /
    head. The total always equals the sum of the breakdown.
    """
    breakdown: dict[str, int] = {}
    for name, t in model.params.items():
        if name == "embedding":
            key = "embedding"
        else:
            stack, component = name.split(".", 1)
            key = f"{stack}.{component.split('.')[0]}"
        breakdown[key] = breakdown.get(key, 0) + t.data.size
    return sum(breakdown.values()), breakdown


# ---------------------------------------------------------------------------
# pipelined trait-then-holistic scoring


def pipeline_holistic(trait_scores: dict[str, int], aggregation: dict,
                      overall_range: tuple[int, int]) -> int:
    """Combine predicted trait scores into a holistic score.

    ``aggregation`` holds per-trait coefficients and an optional intercept;
    the weighted sum is clamped to the overall range and rounded half away
    from zero. The aggregation function is configuration, not learned.
    """
    coeffs = aggregation.get("coefficients", {})
    if not coeffs:
        raise ConfigError("pipeline aggregation needs a coefficients table")
    unknown = set(coeffs) - set(trait_scores)
    if unknown:
        raise ConfigError(f"aggregation references unknown traits: {sorted(unknown)}")
    raw = float(aggregation.get("intercept", 0.0))
    raw += sum(float(c) * trait_scores[t] for t, c in coeffs.items())
    lo, hi = overall_range
    raw = min(max(raw, lo), hi)
    rounded = math.floor(raw + 0.5) if raw >= 0 else math.ceil(raw - 0.5)
    return int(min(max(rounded, lo), hi))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Model) -> None:
    """Write config, vocabulary and every parameter array; bit-exact on load.

    The container is a plain npz zip written with a fixed member timestamp,
    so identical models produce byte-identical checkpoint files.
    """
    meta = {"version": CHECKPOINT_VERSION,
            "config": model.config.to_dict(),
            "vocab": model.vocab.to_dict()}
    entries = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True)
                                         .encode("utf-8"), dtype=np.uint8)}
    for name, t in sorted(model.params.items()):
        entries[f"param::{name}"] = t.data
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in entries.items():
            buf = io.BytesIO()
            np.save(buf, arr)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path) -> Model:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(
                f"checkpoint version {meta.get('version')} unsupported "
                f"(expected {CHECKPOINT_VERSION})")
        config = ModelConfig.from_dict(meta["config"])
        vocab = Vocabulary.from_dict(meta["vocab"])
        params = {}
        for key in data.files:
            if key.startswith("param::"):
                params[key[len("param::"):]] = parameter(data[key])
    return Model(config, vocab, params)
