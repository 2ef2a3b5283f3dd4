"""RMSProp training with mini-batches, padding masks and best-on-dev selection.

A batch pads its essays to a common sentence count and sentence length and
carries boolean masks for the real tokens and sentences; the masked forward
of a padded essay equals the plain forward of the unpadded one, so batching
is purely an optimisation-scheduling choice. Gradients accumulate essay by
essay (backward is additive), then one optimizer step fires per batch.

After every epoch the dev split is scored and the parameter snapshot with
the best dev QWK on the selection head is retained; training always runs the
full epoch budget and picks the winner afterwards.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import OVERALL, normalize_score
from .evaluation import qwk
from .models import Model, ModelConfig, build_model, multi_head_loss, \
    save_checkpoint
from .tensor import ShapeError, scale
from .textpipe import PAD_ID, build_vocab, encode_essay


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation knobs; defaults are the published full-scale settings.

    The 0.9 momentum figure is read as the RMSProp squared-gradient decay.
    Set ``use_momentum`` to also apply a classical velocity term on top (a
    sensitivity option, off by default).
    """

    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 0.001
    rms_decay: float = 0.9
    epsilon: float = 1e-7
    seed: int = 0
    selection_metric: str = "qwk"  # or "mse" on dev
    use_momentum: bool = False
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        # lr = 0 is allowed: a zero-rate step is the optimizer's identity
        if self.learning_rate < 0 or self.epsilon <= 0 or not 0 < self.rms_decay < 1:
            raise ValueError("learning_rate must be >= 0, epsilon positive, "
                             "rms_decay inside (0, 1)")
        if self.selection_metric not in ("qwk", "mse"):
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")


class RMSPropState:
    """Per-parameter running squared-gradient averages (plus velocities)."""

    def __init__(self):
        self.square_avg: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}


def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: RMSPropState, config: TrainConfig) -> RMSPropState:
    """s <- rho*s + (1-rho)*g^2 ; p <- p - lr * g / sqrt(s + eps), in place."""
    rho = config.rms_decay
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(
                f"rmsprop: gradient shape {g.shape} != parameter {p.shape} "
                f"for {name!r}")
        s = state.square_avg.get(name)
        if s is None:
            s = state.square_avg[name] = np.zeros_like(p)
        s *= rho
        s += (1.0 - rho) * g * g
        update = config.learning_rate * g / np.sqrt(s + config.epsilon)
        if config.use_momentum:
            v = state.velocity.get(name)
            if v is None:
                v = state.velocity[name] = np.zeros_like(p)
            v *= config.momentum
            v += update
            update = v
        p -= update
    return state


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    essay_ids: list[int]
    token_ids: np.ndarray   # (B, S, T) int64, PAD_ID in the slack
    tok_mask: np.ndarray    # (B, S, T) bool
    sent_mask: np.ndarray   # (B, S) bool
    golds: dict[str, np.ndarray]  # head -> (B,) normalised scores

    def __len__(self):
        return len(self.essay_ids)


def pad_essays(essays: list[list[list[int]]]):
    """Pad ragged essays to (B, S, T) with token and sentence masks."""
    B = len(essays)
    S = max(len(e) for e in essays)
    T = max(len(s) for e in essays for s in e)
    token_ids = np.full((B, S, T), PAD_ID, dtype=np.int64)
    tok_mask = np.zeros((B, S, T), dtype=bool)
    sent_mask = np.zeros((B, S), dtype=bool)
    for b, essay in enumerate(essays):
        for s, sent in enumerate(essay):
            token_ids[b, s, :len(sent)] = sent
            tok_mask[b, s, :len(sent)] = True
            sent_mask[b, s] = True
    return token_ids, tok_mask, sent_mask


def make_batches(essay_ids, encoded, golds, batch_size: int,
                 rng: np.random.Generator | None) -> list[Batch]:
    """Shuffle (when an rng is given) and chunk into padded batches.

    ``encoded`` maps essay id to per-sentence token-id lists and ``golds``
    maps head -> essay id -> normalised score.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    ids = list(essay_ids)
    if rng is not None:
        ids = [ids[i] for i in rng.permutation(len(ids))]
    batches = []
    for start in range(0, len(ids), batch_size):
        chunk = ids[start:start + batch_size]
        token_ids, tok_mask, sent_mask = pad_essays([encoded[i] for i in chunk])
        batch_golds = {head: np.array([by_id[i] for i in chunk])
                       for head, by_id in golds.items()}
        batches.append(Batch(chunk, token_ids, tok_mask, sent_mask, batch_golds))
    return batches


def forward_batch(model: Model, batch: Batch, train=False, rng=None):
    """Per-essay head outputs for a padded batch, as a list of dicts."""
    outs = []
    for b in range(len(batch)):
        outs.append(model.forward(batch.token_ids[b], train=train, rng=rng,
                                  tok_masks=batch.tok_mask[b],
                                  sent_mask=batch.sent_mask[b]))
    return outs


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainResult:
    best_epoch: int
    best_dev_metric: float
    history: list[dict] = field(default_factory=list)
    train_seconds: float = 0.0
    dev_qwk: dict[str, float] = field(default_factory=dict)


def _dev_evaluation(model, dev_ids, encoded, gold_ints):
    preds = {head: [] for head in model.heads}
    for essay_id in dev_ids:
        scores = model.predict_scores(encoded[essay_id])
        for head, value in scores.items():
            preds[head].append(value)
    out = {}
    for head in model.heads:
        score_range = model.config.prompt.range_for(head)
        out[head] = qwk(preds[head], [gold_ints[head][i] for i in dev_ids],
                        score_range)
    return out


def train(model: Model, records_by_id, fold, config: TrainConfig,
          dev_metric_fn=None) -> TrainResult:
    """Optimise in place; finish with the best-on-dev parameters loaded.

    The selection metric is dev QWK on the overall head (or negative dev MSE
    when configured); ``dev_metric_fn(model, epoch)`` overrides it entirely,
    which is how the selection logic is tested. Raises
    :class:`TrainingDiverged` the moment a batch loss leaves the reals.
    """
    prompt = model.config.prompt
    heads = list(model.heads)
    selection_head = OVERALL if OVERALL in heads else heads[0]
    train_ids = sorted(fold.train_ids)
    dev_ids = sorted(fold.dev_ids)
    encoded = {i: encode_essay(records_by_id[i], model.vocab)
               for i in train_ids + dev_ids}
    golds_norm = {head: {i: normalize_score(records_by_id[i].score_for(head),
                                            prompt.range_for(head))
                         for i in train_ids}
                  for head in heads}
    gold_ints = {head: {i: records_by_id[i].score_for(head) for i in dev_ids}
                 for head in heads}

    seed_seq = np.random.SeedSequence(config.seed)
    shuffle_rng, dropout_rng = [np.random.default_rng(s)
                                for s in seed_seq.spawn(2)]
    param_arrays = {name: t.data for name, t in model.params.items()}
    state = RMSPropState()
    result = TrainResult(best_epoch=-1, best_dev_metric=-math.inf)
    best_snapshot = None
    started = time.monotonic()

    for epoch in range(config.epochs):
        batches = make_batches(train_ids, encoded, golds_norm,
                               config.batch_size, shuffle_rng)
        epoch_loss = 0.0
        for batch_index, batch in enumerate(batches):
            model.zero_grads()
            batch_loss = 0.0
            for b in range(len(batch)):
                preds = model.forward(batch.token_ids[b], train=True,
                                      rng=dropout_rng,
                                      tok_masks=batch.tok_mask[b],
                                      sent_mask=batch.sent_mask[b])
                golds = {head: batch.golds[head][b] for head in heads}
                loss = multi_head_loss(preds, golds, heads)
                scale(loss, 1.0 / len(batch)).backward()
                batch_loss += float(loss.data)
            batch_loss /= len(batch)
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(epoch, batch_index, batch_loss)
            grads = {name: t.grad for name, t in model.params.items()}
            rmsprop_step(param_arrays, grads, state, config)
            epoch_loss += batch_loss * len(batch)
        train_loss = epoch_loss / len(train_ids)

        if dev_metric_fn is not None:
            metric = float(dev_metric_fn(model, epoch))
            dev_qwk = {}
        elif dev_ids:
            dev_qwk = _dev_evaluation(model, dev_ids, encoded, gold_ints)
            if config.selection_metric == "qwk":
                metric = dev_qwk[selection_head]
            else:
                mse = np.mean([
                    (normalize_score(gold_ints[selection_head][i],
                                     prompt.range_for(selection_head))
                     - float(model.forward(encoded[i])[selection_head].data)) ** 2
                    for i in dev_ids])
                metric = -float(mse)
        else:
            dev_qwk = {}
            metric = -train_loss

        row = {"epoch": epoch, "train_loss": train_loss}
        for head in heads:
            row[f"dev_qwk_{head}"] = dev_qwk.get(head, float("nan"))
        result.history.append(row)
        if metric > result.best_dev_metric:
            result.best_dev_metric = metric
            result.best_epoch = epoch
            best_snapshot = model.snapshot()
            result.dev_qwk = dict(dev_qwk)

    result.train_seconds = time.monotonic() - started
    if best_snapshot is not None:
        model.load_snapshot(best_snapshot)
    return result


# ---------------------------------------------------------------------------
# one grid cell: build, train, evaluate on test, persist artifacts


def evaluate_test_fold(model: Model, records_by_id, test_ids):
    """Per-head QWK of the (already trained) model on the test split."""
    test_ids = sorted(test_ids)
    preds = {head: [] for head in model.heads}
    golds = {head: [] for head in model.heads}
    for essay_id in test_ids:
        record = records_by_id[essay_id]
        scores = model.predict_scores(encode_essay(record, model.vocab))
        for head in model.heads:
            preds[head].append(scores[head])
            golds[head].append(record.score_for(head))
    return {head: qwk(preds[head], golds[head],
                      model.config.prompt.range_for(head))
            for head in model.heads}


def write_history_csv(path, history) -> None:
    if not history:
        return
    keys = list(history[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for row in history:
            fh.write(",".join(_fmt(row[k]) for k in keys) + "\n")


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def run_training_cell(records, fold, model_config: ModelConfig,
                      train_config: TrainConfig, run_dir=None, glove=None,
                      overwrite=False) -> dict:
    """Train one (prompt, config, fold) cell and evaluate its test split.

    With ``run_dir`` the cell persists checkpoint.npz, history.csv,
    timing.csv, result.json and manifest.json, and a completed cell is
    skipped on rerun unless ``overwrite`` is set. Returns the result payload.
    """
    records_by_id = {r.essay_id: r for r in records}
    if run_dir is not None:
        run_dir = Path(run_dir)
        result_path = run_dir / "result.json"
        if result_path.exists() and not overwrite:
            payload = json.loads(result_path.read_text())
            payload["skipped"] = True
            return payload
        run_dir.mkdir(parents=True, exist_ok=True)

    train_records = [records_by_id[i] for i in sorted(fold.train_ids)]
    vocab = build_vocab(train_records)
    model = build_model(model_config, vocab, glove=glove)
    outcome = train(model, records_by_id, fold, train_config)
    test_qwk = evaluate_test_fold(model, records_by_id, fold.test_ids)

    payload = {
        "prompt": model_config.prompt.prompt_id,
        "config": model_config.name,
        "fold": fold.fold_id,
        "best_epoch": outcome.best_epoch,
        "best_dev_metric": outcome.best_dev_metric,
        "dev_qwk": outcome.dev_qwk,
        "test_qwk": test_qwk,
        "train_seconds": outcome.train_seconds,
        "heads": list(model.heads),
    }
    if run_dir is not None:
        save_checkpoint(run_dir / "checkpoint.npz", model)
        write_history_csv(run_dir / "history.csv", outcome.history)
        with open(run_dir / "timing.csv", "w", encoding="utf-8") as fh:
            fh.write("prompt,config,fold,seconds\n")
            fh.write(f"{payload['prompt']},{payload['config']},"
                     f"{payload['fold']},{outcome.train_seconds:.6f}\n")
        manifest = {
            "tool_version": __version__,
            "model_config": model_config.to_dict(),
            "train_config": asdict(train_config),
            "fold": fold.fold_id,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
        (run_dir / "result.json").write_text(json.dumps(payload, indent=2))
    return payload


def speedup_ratio(stl_seconds, mtl_seconds: float) -> float:
    """Cost of scoring overall + every trait with single-task models,
    relative to one multi-task run: sum(stl) / mtl."""
    total = float(np.sum(list(stl_seconds)))
    if mtl_seconds <= 0:
        raise ValueError("mtl_seconds must be positive")
    return total / float(mtl_seconds)
