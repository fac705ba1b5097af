"""Alternating minimize/maximize training and held-out evaluation.

Each round fits the model on the current dataset, then generates one batch
of adversarial samples per ORIGINAL sample and appends them; the original
samples are never re-perturbed and never mutated.  After the last round
the model trains for a final stretch of epochs on the fully expanded
dataset.  Evaluation reports macro-F1 per held-out domain.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .adversarial import AdvConfig, AdvSample, maximize_one
from .model import Classifier, forward, loss_ce
from .signal import TimeSeries
from .tensor import Tape, Tensor

__all__ = ["Dataset", "TrainReport", "minimize_phase", "maximize_phase", "run",
           "predict", "macro_f1", "evaluate", "export_features"]


@dataclass
class Dataset:
    """A list of equally shaped labeled series."""

    samples: list[TimeSeries]
    n_classes: int

    def __post_init__(self):
        if not self.samples:
            raise ValueError("dataset has no samples")
        c, n = self.samples[0].channels, self.samples[0].length
        for i, s in enumerate(self.samples):
            if (s.channels, s.length) != (c, n):
                raise ValueError(f"sample {i} has shape ({s.channels},{s.length}), "
                                 f"expected ({c},{n})")
            if not 0 <= s.label < self.n_classes:
                raise ValueError(f"sample {i} label {s.label} out of range "
                                 f"[0,{self.n_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def channels(self) -> int:
        return self.samples[0].channels

    @property
    def length(self) -> int:
        return self.samples[0].length

    def extended(self, extra: list[TimeSeries]) -> "Dataset":
        return Dataset(self.samples + list(extra), self.n_classes)


@dataclass
class TrainReport:
    """Everything needed to reproduce and compare a training run.

    ``wall_clock`` is the only field expected to differ between identical
    runs; ``identity()`` drops it for equality checks.
    """

    seed: int
    config: dict
    dataset_sizes: list[int] = field(default_factory=list)
    round_losses: list[list[float]] = field(default_factory=list)
    final_losses: list[float] = field(default_factory=list)
    f1_by_domain: dict[str, float] = field(default_factory=dict)
    wall_clock: float = 0.0

    def identity(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "dataset_sizes": list(self.dataset_sizes),
            "round_losses": [list(r) for r in self.round_losses],
            "final_losses": list(self.final_losses),
            "f1_by_domain": dict(self.f1_by_domain),
        }

    def to_text(self) -> str:
        lines = ["WARPADA-REPORT v1", f"seed: {self.seed}"]
        for key in sorted(self.config):
            lines.append(f"config.{key}: {self.config[key]}")
        lines.append("dataset_sizes: " + " ".join(str(s) for s in self.dataset_sizes))
        for k, losses in enumerate(self.round_losses, start=1):
            lines.append(f"round{k}_mean_loss: "
                         + " ".join(f"{v:.12g}" for v in losses))
        lines.append("final_mean_loss: " + " ".join(f"{v:.12g}" for v in self.final_losses))
        if self.f1_by_domain:
            lines.append("domain\tmacro_f1")
            for tag in sorted(self.f1_by_domain):
                lines.append(f"{tag}\t{self.f1_by_domain[tag]:.6f}")
        lines.append(f"wall_clock_s: {self.wall_clock:.3f}")
        return "\n".join(lines) + "\n"


def _sgd_step(model: Classifier, batch: list[TimeSeries], lr: float) -> float:
    params = model.tensors(requires_grad=True)
    with Tape() as tape:
        total = None
        for sample in batch:
            _, logits = forward(model, sample, params)
            ce = loss_ce(logits, sample.label)
            total = ce if total is None else total + ce
        mean = total * (1.0 / len(batch))
        tape.backward(mean)
    model.apply_gradients(params, lr)
    return float(mean.data)


def minimize_phase(model: Classifier, dataset: Dataset, t_min: int, lr: float,
                   batch: int, rng: np.random.Generator) -> tuple[Classifier, list[float]]:
    """t_min SGD steps on uniformly drawn minibatches; mutates the model
    in place and returns it with the per-step mean losses."""
    if len(dataset) == 0:
        raise ValueError("cannot minimize on an empty dataset")
    losses = []
    for _ in range(t_min):
        idx = rng.integers(0, len(dataset), size=min(batch, len(dataset)))
        losses.append(_sgd_step(model, [dataset.samples[i] for i in idx], lr))
    return model, losses


def maximize_phase(model: Classifier, d0: Dataset, cfg: AdvConfig) -> list[AdvSample]:
    """One batch of adversarial samples per element of the ORIGINAL dataset,
    against a frozen weight snapshot, merged in origin order.

    Fan-out across threads is safe: tapes are thread-local, the snapshot is
    read-only, and per-sample seeds make results order-independent.
    """
    frozen = model.frozen_copy()
    jobs = [(i, x) for i, x in enumerate(d0.samples)]
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            per_origin = list(pool.map(
                lambda job: maximize_one(frozen, job[1], cfg, origin_id=job[0]), jobs))
    else:
        per_origin = [maximize_one(frozen, x, cfg, origin_id=i) for i, x in jobs]
    return [sample for group in per_origin for sample in group]


def run(d0: Dataset, cfg: AdvConfig,
        model_init: Classifier | None = None) -> tuple[Classifier, TrainReport]:
    """The full alternating procedure.

    K rounds of (fit on current data, expand with adversarial samples),
    then t_final epochs on the expanded dataset.  mode="erm" skips the
    rounds entirely.  Identical (data, cfg) reproduce the report exactly,
    wall clock aside.
    """
    start = time.perf_counter()
    model = model_init if model_init is not None else Classifier(
        d0.channels, d0.n_classes, seed=cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, 0x5D]))
    report = TrainReport(seed=cfg.seed, config=asdict(cfg), dataset_sizes=[len(d0)])

    current = d0
    rounds = 0 if cfg.mode == "erm" else cfg.k_rounds
    for _ in range(rounds):
        _, losses = minimize_phase(model, current, cfg.t_min, cfg.lr, cfg.batch, rng)
        report.round_losses.append(losses)
        adv = maximize_phase(model, d0, cfg)
        current = current.extended([a.series for a in adv])
        report.dataset_sizes.append(len(current))

    steps_per_epoch = max(1, (len(current) + cfg.batch - 1) // cfg.batch)
    for _ in range(cfg.t_final):
        _, losses = minimize_phase(model, current, steps_per_epoch, cfg.lr, cfg.batch, rng)
        report.final_losses.append(float(np.mean(losses)))

    report.wall_clock = time.perf_counter() - start
    return model, report


def predict(model: Classifier, x: TimeSeries) -> int:
    _, logits = forward(model, x)
    return int(np.argmax(logits.data))


def macro_f1(preds, truth, n_classes: int) -> float:
    """Unweighted mean of per-class F1.

    A class absent from both vectors is skipped; a class present in exactly
    one scores 0.  Perfect agreement gives 1.0.
    """
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise ValueError(f"shape mismatch: preds {preds.shape} vs truth {truth.shape}")
    if preds.size and not (0 <= preds.min() and preds.max() < n_classes
                           and 0 <= truth.min() and truth.max() < n_classes):
        raise ValueError(f"labels out of range [0,{n_classes})")
    scores = []
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (truth == c)))
        fp = int(np.sum((preds == c) & (truth != c)))
        fn = int(np.sum((preds != c) & (truth == c)))
        if tp + fp + fn == 0:
            continue
        scores.append(2.0 * tp / (2.0 * tp + fp + fn))
    return float(np.mean(scores)) if scores else 0.0


def evaluate(model: Classifier, domains: list[Dataset]) -> tuple[dict[str, float], float]:
    """Macro-F1 per domain (keyed by the domain's tag) and their mean."""
    if not domains:
        raise ValueError("no domains to evaluate")
    per_domain: dict[str, float] = {}
    for i, domain in enumerate(domains):
        preds = [predict(model, x) for x in domain.samples]
        truth = [x.label for x in domain.samples]
        tag = domain.samples[0].domain_tag or f"domain{i}"
        key = tag if tag not in per_domain else f"{tag}#{i}"
        per_domain[key] = macro_f1(preds, truth, domain.n_classes)
    return per_domain, float(np.mean(list(per_domain.values())))


def export_features(model: Classifier, dataset: Dataset, path) -> None:
    """CSV of pooled features: origin_id, domain_tag, label, then 64 values."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("origin_id,domain_tag,label,"
                 + ",".join(f"f{i}" for i in range(64)) + "\n")
        for i, sample in enumerate(dataset.samples):
            z, _ = forward(model, sample)
            feats = ",".join(f"{v:.12g}" for v in z.data)
            fh.write(f"{i},{sample.domain_tag},{sample.label},{feats}\n")
