"""Training loop: correction loss minus weighted RCL, SGD/AdamW with linear
warmup and decay, checkpointing, and the alpha sweep driver."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Batch, SentencePair, make_batches
from .errors import NumericalError
from .evaluation import EvalReport, evaluate, write_metrics_csv
from .lexicon import Lexicon
from .model import BackboneConfig, TransformerBackbone, cross_entropy, predict_ids
from .rcl import LossBreakdown, RclConfig, mine_pairs, rcl_objective

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    warmup_fraction: float = 0.0
    optimizer: str = "sgd"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    rcl: RclConfig = field(default_factory=RclConfig)
    seed: int = 0
    eval_every: int = 0          # steps; 0 = at the end of every epoch
    granularity: str = "sentence"

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "rcl" in d and isinstance(d["rcl"], dict):
            d["rcl"] = RclConfig(**d["rcl"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def scheduled_lr(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear ramp 0 -> base_lr over the warmup steps, then linear decay to 0."""
    warm = int(warmup_fraction * total_steps)
    if step < warm:
        return base_lr * step / warm
    return base_lr * max(0.0, (total_steps - step) / (total_steps - warm))


class SGD:
    def __init__(self) -> None:
        pass

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            params[name] -= lr * g

    def state_dict(self) -> dict[str, dict[str, np.ndarray]]:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0) -> None:
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * params[name]
            params[name] -= lr * update

    def state_dict(self) -> dict[str, dict[str, np.ndarray]]:
        return {"m": dict(self.m), "v": dict(self.v), "t": {"t": np.array(self.t)}}

    def load_state_dict(self, state: dict) -> None:
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state.get("m", {}).items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state.get("v", {}).items()}
        self.t = int(state.get("t", {}).get("t", 0))


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD()
    return AdamW(cfg.betas, cfg.eps, cfg.weight_decay)


def loss_and_grads(model: TransformerBackbone, batch: Batch, lex: Lexicon, rcl_cfg: RclConfig
                   ) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Forward, total loss and reverse-mode gradients for one batch.

    RCL reaches the parameters only through the tapped hidden states; the
    correction head is trained by the cross-entropy term alone.
    """
    state = model.forward(batch)
    l_correct, d_logits = cross_entropy(state.logits, batch.target_ids)
    sets = mine_pairs(batch, lex, rcl_cfg)
    breakdown, d_tap = rcl_objective(l_correct, state.tap, sets, rcl_cfg)
    grads = model.backward(state, d_logits, d_tap if rcl_cfg.alpha > 0 else None)
    return breakdown, grads


@dataclass
class RunRecord:
    config: dict
    losses: list[tuple[int, float, float, float]] = field(default_factory=list)
    evals: list[tuple[int, EvalReport]] = field(default_factory=list)
    best_step: int | None = None
    best_report: EvalReport | None = None
    best_params: dict[str, np.ndarray] | None = field(default=None, repr=False)
    checkpoint: str | None = None


def _epoch_seed(seed: int, epoch: int) -> int:
    return seed * 100_003 + epoch


def _write_losses(path: Path, rows, append: bool) -> None:
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(["step", "l_correct", "l_rcl", "total"])
        for step, lc, lr_, tot in rows:
            w.writerow([step, repr(lc), repr(lr_), repr(tot)])


def train(corpus: Sequence[SentencePair], lex: Lexicon, model: TransformerBackbone,
          cfg: TrainConfig, *, dev: Sequence[SentencePair] | None = None,
          run_dir: str | Path | None = None, resume_from: str | Path | None = None,
          max_steps: int | None = None) -> RunRecord:
    """Train ``model`` in place. Deterministic given ``cfg.seed`` and the model init.

    With ``dev`` the model is scored every ``eval_every`` steps (or once per
    epoch) and the best parameters by correction F1 are kept. ``max_steps``
    stops early (used to test resumption).
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    opt = make_optimizer(cfg)
    start_step = 0
    append = False
    if resume_from is not None:
        loaded, opt_state, meta = load_checkpoint(resume_from, lex.fingerprint())
        model.params = loaded.params
        opt.load_state_dict(opt_state)
        start_step = int(meta["step"])
        append = True

    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        (run_path / "checkpoints").mkdir(parents=True, exist_ok=True)
        with open(run_path / "config.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"train": cfg.to_dict(), "model": model.config.to_dict(),
                       "lexicon_fingerprint": lex.fingerprint()}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    record = RunRecord(config={"train": cfg.to_dict(), "model": model.config.to_dict()})
    steps_per_epoch = math.ceil(len(corpus) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    fp = lex.fingerprint()

    def run_eval(step: int) -> None:
        if not dev:
            return
        report = evaluate(dev, predict_ids(model, dev), cfg.granularity)
        record.evals.append((step, report))
        if record.best_report is None or report.c_f > record.best_report.c_f:
            record.best_step, record.best_report = step, report
            record.best_params = copy.deepcopy(model.params)
            if run_path is not None:
                save_checkpoint(run_path / "checkpoints" / "best.npz", model, fp,
                                meta={"step": step, "c_f": report.c_f})
                record.checkpoint = str(run_path / "checkpoints" / "best.npz")

    def flush() -> None:
        if run_path is None:
            return
        _write_losses(run_path / "losses.csv", record.losses, append)
        if record.evals:
            write_metrics_csv(run_path / "metrics.csv", [r for _, r in record.evals])

    step = start_step
    try:
        for epoch in range(start_step // steps_per_epoch, cfg.epochs):
            batches = make_batches(corpus, cfg.batch_size, _epoch_seed(cfg.seed, epoch))
            for i, batch in enumerate(batches):
                if epoch * steps_per_epoch + i < start_step:
                    continue
                if max_steps is not None and step >= max_steps:
                    break
                lr = scheduled_lr(step, total_steps, cfg.lr, cfg.warmup_fraction)
                breakdown, grads = loss_and_grads(model, batch, lex, cfg.rcl)
                if not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise NumericalError(f"non-finite gradient at step {step}")
                opt.step(model.params, grads, lr)
                record.losses.append((step, breakdown.l_correct, breakdown.l_rcl, breakdown.total))
                step += 1
                if cfg.eval_every and step % cfg.eval_every == 0:
                    run_eval(step)
            else:
                if not cfg.eval_every:
                    run_eval(step)
                if run_path is not None:
                    save_checkpoint(run_path / "checkpoints" / "last.npz", model, fp,
                                    optimizer_state=opt.state_dict(), meta={"step": step})
                    record.checkpoint = record.checkpoint or str(run_path / "checkpoints" / "last.npz")
                continue
            break
    except NumericalError as exc:
        if run_path is not None:
            save_checkpoint(run_path / "checkpoints" / "last_good.npz", model, fp,
                            optimizer_state=opt.state_dict(), meta={"step": step})
            record.checkpoint = str(run_path / "checkpoints" / "last_good.npz")
        flush()
        raise NumericalError(f"{exc}; last good state saved to {record.checkpoint}") from exc

    if max_steps is not None and run_path is not None:
        save_checkpoint(run_path / "checkpoints" / "last.npz", model, fp,
                        optimizer_state=opt.state_dict(), meta={"step": step})
    flush()
    return record


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    report: EvalReport
    best_step: int | None


def _sweep_one(args) -> SweepRow:
    alpha, train_pairs, dev, test, lex, model_cfg, cfg, run_dir = args
    rcl_cfg = replace(cfg.rcl, alpha=alpha)
    if alpha > 0 and not (rcl_cfg.use_pinyin or rcl_cfg.use_confusion):
        raise ValueError("alpha > 0 needs an active RCL channel")
    run_cfg = replace(cfg, rcl=rcl_cfg)
    model = TransformerBackbone(model_cfg)
    rec = train(train_pairs, lex, model, run_cfg, dev=dev, run_dir=run_dir)
    if rec.best_params is not None:
        model.params = rec.best_params
    if test:
        report = evaluate(test, predict_ids(model, test), cfg.granularity)
    elif rec.best_report is not None:
        report = rec.best_report
    else:
        report = evaluate(train_pairs, predict_ids(model, train_pairs), cfg.granularity)
    return SweepRow(alpha, report, rec.best_step)


def sweep_alpha(train_pairs: Sequence[SentencePair], lex: Lexicon, model_cfg: BackboneConfig,
                cfg: TrainConfig, alphas: Sequence[float], *,
                dev: Sequence[SentencePair] | None = None,
                test: Sequence[SentencePair] | None = None,
                out_dir: str | Path | None = None, jobs: int = 1) -> list[SweepRow]:
    """One full train + evaluation per alpha on shared data and seeds, sorted by alpha.

    The reported metrics come from ``test`` when given, otherwise from the
    best dev evaluation.
    """
    if not alphas:
        raise ValueError("alphas must be non-empty")
    out = Path(out_dir) if out_dir is not None else None
    jobs_args = [
        (a, list(train_pairs), dev, test, lex, model_cfg, cfg,
         None if out is None else out / f"alpha_{a:g}")
        for a in sorted(set(alphas))
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs_args))
    else:
        rows = [_sweep_one(a) for a in jobs_args]
    if out is not None:
        write_sweep_csv(out / "sweep.csv", rows)
    return rows


SWEEP_COLUMNS = ("alpha", "D-P", "D-R", "D-F", "C-P", "C-R", "C-F")


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            rep = r.report
            w.writerow([f"{r.alpha:g}"] + [f"{v:.1f}" for v in
                        (rep.d_p, rep.d_r, rep.d_f, rep.c_p, rep.c_r, rep.c_f)])
