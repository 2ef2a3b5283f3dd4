"""Quadratic weighted kappa, paired significance tests, ablation and reports.

Kappa is computed over the full declared score range, never just the
observed values: the (N-1)^2 penalty denominator must not drift with the
data or cross-fold numbers stop being comparable. Expected counts follow the
standard convention of scaling the marginal outer product to the observed
total.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import stdtr

from .dataset import OVERALL


def _prepare_ratings(pred, gold, score_range):
    lo, hi = score_range
    pred = np.asarray(pred, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} vs {gold.shape[0]}")
    if pred.size < 2:
        raise ValueError("need at least 2 rating pairs")
    for name, arr in (("pred", pred), ("gold", gold)):
        if arr.min() < lo or arr.max() > hi:
            raise ValueError(f"{name} values escape range {lo}-{hi}")
    return pred - lo, gold - lo, hi - lo + 1


def qwk(pred, gold, score_range) -> float:
    """Cohen's kappa with quadratic weights over N = max-min+1 categories.

    Constant predictions against varied gold give exactly 0 (observed and
    expected disagreement coincide). If both raters are constant and equal,
    the expected-disagreement mass is zero and the score is 1 by convention.
    """
    p, g, N = _prepare_ratings(pred, gold, score_range)
    observed = np.zeros((N, N))
    np.add.at(observed, (p, g), 1.0)
    idx = np.arange(N, dtype=np.float64)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (N - 1) ** 2
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / observed.sum()
    denom = float((weights * expected).sum())
    if denom == 0.0:
        off_diagonal = observed.sum() - np.trace(observed)
        return 1.0 if off_diagonal == 0 else 0.0
    return float(1.0 - (weights * observed).sum() / denom)


def lwk(pred, gold, score_range) -> float:
    """Linear-weighted kappa, kept only as a comparison utility."""
    p, g, N = _prepare_ratings(pred, gold, score_range)
    observed = np.zeros((N, N))
    np.add.at(observed, (p, g), 1.0)
    idx = np.arange(N, dtype=np.float64)
    weights = np.abs(idx[:, None] - idx[None, :]) / (N - 1)
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / observed.sum()
    denom = float((weights * expected).sum())
    if denom == 0.0:
        off_diagonal = observed.sum() - np.trace(observed)
        return 1.0 if off_diagonal == 0 else 0.0
    return float(1.0 - (weights * observed).sum() / denom)


class TTestResult(NamedTuple):
    statistic: float
    pvalue: float
    degenerate: bool = False


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired t-test.

    All-zero differences give (0, 1). Zero variance with a nonzero mean
    difference is reported as p -> 0 with the ``degenerate`` flag raised,
    since the statistic is unbounded there.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length vectors, "
                         f"got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = a - b
    if np.all(d == 0):
        return TTestResult(0.0, 1.0)
    mean_d = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        return TTestResult(math.copysign(math.inf, mean_d), 0.0, True)
    t = mean_d / (sd / math.sqrt(n))
    p = 2.0 * float(stdtr(n - 1, -abs(t)))
    return TTestResult(float(t), p)


def squared_error_pairs(pred_a, pred_b, gold):
    """Per-essay squared errors of two systems, the alternative pairing unit."""
    pa = np.asarray(pred_a, dtype=np.float64)
    pb = np.asarray(pred_b, dtype=np.float64)
    g = np.asarray(gold, dtype=np.float64)
    if not (pa.shape == pb.shape == g.shape):
        raise ValueError("prediction and gold vectors must align")
    return (pa - g) ** 2, (pb - g) ** 2


# ---------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class ReportRow:
    prompt: int
    config: str
    head: str
    fold: int
    qwk: float


@dataclass
class EvalReport:
    """Everything the result tables are built from, in long format."""

    rows: list[ReportRow] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def configs(self):
        return sorted({r.config for r in self.rows})

    def prompts(self):
        return sorted({r.prompt for r in self.rows})

    def fold_qwks(self, prompt, config, head=OVERALL):
        rows = [r for r in self.rows
                if (r.prompt, r.config, r.head) == (prompt, config, head)]
        return [r.qwk for r in sorted(rows, key=lambda r: r.fold)]

    def prompt_qwk(self, prompt, config, head=OVERALL):
        folds = self.fold_qwks(prompt, config, head)
        return float(np.mean(folds)) if folds else float("nan")

    def mean_qwk(self, config, head=OVERALL):
        """Unweighted arithmetic mean over prompts of the per-prompt QWK."""
        values = [self.prompt_qwk(p, config, head) for p in self.prompts()
                  if self.fold_qwks(p, config, head)]
        return float(np.mean(values)) if values else float("nan")

    def significance(self, config_a, config_b, head=OVERALL, alpha=0.05):
        """Per-prompt paired t over fold QWKs: is config_a ahead of config_b?"""
        marks = {}
        for prompt in self.prompts():
            fa = self.fold_qwks(prompt, config_a, head)
            fb = self.fold_qwks(prompt, config_b, head)
            if len(fa) < 2 or len(fa) != len(fb):
                continue
            result = paired_t_test(fa, fb)
            marks[prompt] = (result.pvalue < alpha
                             and float(np.mean(fa)) > float(np.mean(fb)), result)
        return marks

    def trait_means(self):
        """Per-trait mean QWK per config, the bar-summary data."""
        out: dict[str, dict[str, float]] = {}
        traits = sorted({r.head for r in self.rows if r.head != OVERALL})
        for config in self.configs():
            out[config] = {}
            for trait in traits:
                per_prompt = [self.prompt_qwk(p, config, trait)
                              for p in self.prompts()
                              if self.fold_qwks(p, config, trait)]
                if per_prompt:
                    out[config][trait] = float(np.mean(per_prompt))
        return out

    # -- serialisation ------------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["prompt", "config", "head", "fold", "qwk"])
            for r in sorted(self.rows, key=lambda r: (r.prompt, r.config,
                                                      r.head, r.fold)):
                # repr round-trips float64 exactly
                writer.writerow([r.prompt, r.config, r.head, r.fold, repr(r.qwk)])

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                rows.append(ReportRow(int(rec["prompt"]), rec["config"],
                                      rec["head"], int(rec["fold"]),
                                      float(rec["qwk"])))
        return cls(rows=rows)

    def to_markdown(self, baseline: str | None = None) -> str:
        configs = self.configs()
        lines = ["| Essay Set | " + " | ".join(configs) + " |",
                 "|---" * (len(configs) + 1) + "|"]
        sig = {}
        if baseline in configs:
            for config in configs:
                if config != baseline:
                    sig[config] = self.significance(config, baseline)
        for prompt in self.prompts():
            cells = []
            for config in configs:
                value = self.prompt_qwk(prompt, config)
                star = ""
                if config in sig and sig[config].get(prompt, (False,))[0]:
                    star = "*"
                cells.append("" if math.isnan(value) else f"{value:.3f}{star}")
            lines.append(f"| Prompt {prompt} | " + " | ".join(cells) + " |")
        means = [f"{self.mean_qwk(c):.3f}" for c in configs]
        lines.append("| **Mean QWK** | " + " | ".join(means) + " |")
        if baseline in configs:
            lines.append("")
            lines.append(f"`*` marks p < 0.05 on a per-fold paired t-test "
                         f"against {baseline}.")
        if self.missing:
            lines.append("")
            lines.append("Missing cells: " + ", ".join(self.missing))
        return "\n".join(lines) + "\n"


def assemble_report(runs_dir) -> EvalReport:
    """Collect result.json files from runs/<prompt>/<config>/<fold>/.

    Cells that trained but did not finish evaluating are listed in
    ``missing`` so a partial grid still produces a (flagged) report.
    """
    runs_dir = Path(runs_dir)
    report = EvalReport()
    for prompt_dir in sorted(runs_dir.glob("prompt*")):
        try:
            prompt = int(prompt_dir.name.replace("prompt", ""))
        except ValueError:
            continue
        for config_dir in sorted(p for p in prompt_dir.iterdir() if p.is_dir()):
            for fold_dir in sorted(config_dir.glob("fold*")):
                result_path = fold_dir / "result.json"
                if not result_path.exists():
                    report.missing.append(
                        f"prompt {prompt} / {config_dir.name} / {fold_dir.name}")
                    continue
                payload = json.loads(result_path.read_text())
                for head, value in payload["test_qwk"].items():
                    report.rows.append(ReportRow(
                        prompt, config_dir.name, head, payload["fold"], value))
                seconds = payload.get("train_seconds")
                if seconds is not None:
                    key = config_dir.name
                    report.timings[key] = report.timings.get(key, 0.0) + seconds
    return report


def write_trait_summary(report: EvalReport, path) -> None:
    means = report.trait_means()
    traits = sorted({t for by_trait in means.values() for t in by_trait})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config"] + traits)
        for config, by_trait in sorted(means.items()):
            writer.writerow([config] + [
                f"{by_trait[t]:.10f}" if t in by_trait else "" for t in traits])


def render_trait_chart(report: EvalReport, path) -> None:
    """Optional bar chart of per-trait mean QWK; needs matplotlib."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    means = report.trait_means()
    traits = sorted({t for by_trait in means.values() for t in by_trait})
    configs = sorted(means)
    x = np.arange(len(traits))
    width = 0.8 / max(len(configs), 1)
    fig, ax = plt.subplots(figsize=(10, 4))
    for i, config in enumerate(configs):
        values = [means[config].get(t, np.nan) for t in traits]
        ax.bar(x + i * width, values, width, label=config)
    ax.set_xticks(x + width * (len(configs) - 1) / 2)
    ax.set_xticklabels(traits, rotation=30, ha="right")
    ax.set_ylabel("mean QWK")
    ax.set_ylim(bottom=0.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationResult:
    prompt: int
    trait: str
    base_qwk: float
    ablated_qwk: float

    @property
    def delta(self) -> float:
        return self.base_qwk - self.ablated_qwk


def ablate(records, folds, base_config, train_config, trait,
           base_qwk: float | None = None, runs_dir=None,
           glove=None) -> AblationResult:
    """Retrain the multi-task model without one trait and report the drop.

    ``base_qwk`` short-circuits retraining the unablated model when its runs
    already exist. Deltas are mean test QWK (overall head) over the folds.
    """
    from dataclasses import replace

    from .training import run_training_cell

    if trait not in base_config.prompt.traits:
        raise ValueError(f"prompt {base_config.prompt.prompt_id} has no trait "
                         f"{trait!r}")
    ablated_cfg = replace(base_config, ablate_trait=trait)

    def mean_test_qwk(cfg):
        values = []
        for fold in folds:
            cell_dir = None
            if runs_dir is not None:
                cell_dir = (Path(runs_dir) / f"prompt{cfg.prompt.prompt_id}"
                            / cfg.name / f"fold{fold.fold_id}")
            outcome = run_training_cell(records, fold, cfg, train_config,
                                        run_dir=cell_dir, glove=glove)
            values.append(outcome["test_qwk"][OVERALL])
        return float(np.mean(values))

    if base_qwk is None:
        base_qwk = mean_test_qwk(base_config)
    ablated_qwk = mean_test_qwk(ablated_cfg)
    return AblationResult(base_config.prompt.prompt_id, trait, base_qwk,
                          ablated_qwk)
