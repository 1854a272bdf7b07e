"""Training loop, evaluation and sweeps.

Each step runs, in order: forward on both paths, grouping from the
pre-update codes, loss, backward, AdamW, EMA codebook update, code expiration.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import rvq as rvq_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, parse_config
from .core import DivergenceError, adamw_step, sigmoid
from .data import (InteractionDataset, batch_iter, load_csv, make_batch, stratified_split,
                   synthesize)
from .grouping import build_partitions
from .losses import baseline_loss, total_loss
from .metrics import MetricsReport, evaluate, stratify_cohorts
from .model import EmbeddingTable, RankingModel

log = logging.getLogger(__name__)

STEP_ORDER = "forward -> group -> loss -> backward -> adamw -> ema_update -> expire_codes"
LOG_SIGMA = "uncertainty.log_sigma"


def build_model(ds: InteractionDataset, cfg: RunConfig) -> RankingModel:
    return RankingModel(
        [EmbeddingTable(n, c) for n, c in ds.user_schema],
        [EmbeddingTable(n, c) for n, c in ds.item_schema],
        cfg.tower,
    )


def load_dataset(cfg: RunConfig) -> InteractionDataset:
    if cfg.data.csv:
        return load_csv(cfg.data.csv)
    return synthesize(cfg.gen)


@dataclass
class SplitData:
    full: InteractionDataset
    train: InteractionDataset
    valid: InteractionDataset
    test: InteractionDataset
    rows: tuple
    flagged: list


def prepare_splits(cfg: RunConfig, ds: InteractionDataset = None) -> SplitData:
    ds = ds if ds is not None else load_dataset(cfg)
    tr, va, te, flagged = stratified_split(ds, cfg.split)
    return SplitData(ds, ds.subset(tr), ds.subset(va), ds.subset(te), (tr, va, te), flagged)


@dataclass
class CodebookHealth:
    checks: int = 0
    expired_total: int = 0
    repeat_after_warmup: int = 0  # codes below threshold at two consecutive checks after warmup
    per_level_usage: List[int] = field(default_factory=list)


class Trainer:
    def __init__(self, cfg: RunConfig, train: InteractionDataset, valid: InteractionDataset = None):
        self.cfg = cfg
        self.train_ds = train
        self.valid_ds = valid
        self.model = build_model(train, cfg)
        seed = cfg.train.seed
        self.params = self.model.init_params(seed)
        self.uses_rvq = cfg.loss.objective == "groupce"
        self.rng = np.random.default_rng([seed, 17])
        self.epoch = 0
        self._batches = self._stream()
        self.rvq: Optional[rvq_mod.RvqState] = None
        self.health = CodebookHealth()
        self._last_expired = None
        if self.uses_rvq:
            self.params.add(LOG_SIGMA, np.zeros(cfg.rvq.L))
            first = next(self._batches)
            e_u = self.model.user_forward(first.x_u, self.params)
            r = cfg.rvq
            self.rvq = rvq_mod.init_codebooks(e_u, r.K, r.L, seed=[seed, 29], decay=r.decay,
                                              expire_threshold=r.expire_threshold,
                                              smoothing_eps=r.smoothing_eps)
            self._pending = first
        else:
            self._pending = None

    def _stream(self):
        while True:
            yield from batch_iter(self.train_ds, self.cfg.train.batch_size, True,
                                  seed=[self.cfg.train.seed, self.epoch])
            self.epoch += 1

    def next_batch(self):
        if self._pending is not None:
            b, self._pending = self._pending, None
            return b
        return next(self._batches)

    def step(self, step_no: int = 0):
        cfg = self.cfg
        b = self.next_batch()
        if self.uses_rvq:
            trace = self.model.dual_path_forward(b.x_u, b.x_i, self.params, self.rvq)
            parts = build_partitions(trace.quant.codes)
            lb, grads = total_loss(trace, b.labels, parts, self.params[LOG_SIGMA],
                                   cfg.loss.lambda_, cfg.loss.listce_eps, cfg.loss.use_hierarchical)
        else:
            trace = self.model.forward(b.x_u, b.x_i, self.params)
            lb, grads = baseline_loss(cfg.loss.objective, trace.s, b.labels, cfg.loss.lambda_,
                                      cfg.loss.listce_eps)
        if not math.isfinite(lb.total):
            raise DivergenceError(f"non-finite loss at step {step_no}")
        self.model.backward(self.params, trace, grads.ds, grads.ds_q)
        if grads.d_log_sigma is not None:
            self.params.grad(LOG_SIGMA)[:] += grads.d_log_sigma
        adamw_step(self.params, cfg.optim)
        if self.uses_rvq:
            rvq_mod.ema_update(self.rvq, trace.quant.residual_trail, trace.quant.codes)
            _, expired = rvq_mod.expire_codes(self.rvq, trace.e_u, self.rng)
            self._track_health(expired, step_no)
        return lb

    def _track_health(self, expired, step_no):
        h = self.health
        h.checks += 1
        h.expired_total += sum(len(e) for e in expired)
        warmup = int(0.1 * self.cfg.train.max_steps)
        if self._last_expired is not None and step_no > warmup:
            for prev, cur in zip(self._last_expired, expired):
                h.repeat_after_warmup += len(np.intersect1d(prev, cur))
        self._last_expired = [np.array(e) for e in expired]

    def predict(self, ds: InteractionDataset, params=None) -> np.ndarray:
        params = params or self.params
        s = self.model.main_forward(self.model.user_forward(ds.user_features, params),
                                    self.model.item_forward(ds.item_features, params), params)
        return sigmoid(s)

    def evaluate(self, ds: InteractionDataset, cohorts=None) -> MetricsReport:
        return evaluate(ds.user_index, self.predict(ds), ds.labels, cohorts)

    def fit(self, history_path=None, on_eval=None) -> "FitResult":
        cfg = self.cfg.train
        history = []
        best = None
        best_gauc = -math.inf
        bad_evals = 0
        running = []
        hist_fh = Path(history_path).open("w") if history_path else None
        try:
            for step in range(1, cfg.max_steps + 1):
                lb = self.step(step)
                running.append(lb.as_dict())
                if step % cfg.eval_every == 0 or step == cfg.max_steps:
                    rep = self.evaluate(self.valid_ds) if self.valid_ds is not None else None
                    rec = {"step": step, "loss": _mean_breakdown(running),
                           "valid": rep.as_dict() if rep else None}
                    if self.uses_rvq:
                        rec["log_sigma"] = self.params[LOG_SIGMA].tolist()
                    running = []
                    history.append(rec)
                    if hist_fh:
                        hist_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    g = rep.gauc if rep is not None and not math.isnan(rep.gauc) else -math.inf
                    if g > best_gauc or best is None:
                        best_gauc, best = g, (step, self.params.copy(), self.rvq.copy() if self.rvq else None)
                        bad_evals = 0
                    else:
                        bad_evals += 1
                    if on_eval:
                        on_eval(rec)
                    if cfg.early_stop_patience and bad_evals >= cfg.early_stop_patience:
                        log.info("early stop at step %d (best step %d)", step, best[0])
                        break
        finally:
            if hist_fh:
                hist_fh.close()
        if best is not None:
            best_step, self.params, self.rvq = best
        else:
            best_step = 0
        return FitResult(best_step, history, self.health)


def _mean_breakdown(records: List[dict]) -> dict:
    out = {}
    for k in records[0]:
        vals = [r[k] for r in records]
        if isinstance(vals[0], list):
            out[k] = np.mean(np.array(vals), axis=0).tolist() if vals[0] else []
        else:
            out[k] = float(np.mean(vals))
    return out


@dataclass
class FitResult:
    best_step: int
    history: List[dict]
    health: CodebookHealth


@dataclass
class RunResult:
    run_dir: Optional[Path]
    fit: FitResult
    valid: MetricsReport
    test: MetricsReport
    train: MetricsReport
    trainer: Trainer


def checkpoint_meta(cfg: RunConfig, ds: InteractionDataset) -> dict:
    return {
        "config": dump_config(cfg),
        "user_schema": ds.user_schema,
        "item_schema": ds.item_schema,
        "step_order": STEP_ORDER,
    }


def run_training(cfg: RunConfig, out_dir=None, splits: SplitData = None) -> RunResult:
    """Train on the configured dataset; if ``out_dir`` is given, write the run directory.

    Layout: ``config.txt``, ``split_{train,valid,test}.txt`` row manifests,
    ``metrics_history.jsonl``, ``checkpoint.bin`` (best validation GAUC),
    ``report.json``.
    """
    splits = splits or prepare_splits(cfg)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(f"# step order: {STEP_ORDER}\n" + dump_config(cfg))
        for name, rows in zip(("train", "valid", "test"), splits.rows):
            (out / f"split_{name}.txt").write_text("\n".join(map(str, rows.tolist())) + "\n")
    trainer = Trainer(cfg, splits.train, splits.valid)
    fit = trainer.fit(out / "metrics_history.jsonl" if out else None)
    cohorts = stratify_cohorts(splits.train.impression_counts())
    valid = trainer.evaluate(splits.valid)
    test = trainer.evaluate(splits.test, cohorts)
    train = trainer.evaluate(splits.train)
    if out:
        save_checkpoint(out / "checkpoint.bin", trainer.params, trainer.rvq, checkpoint_meta(cfg, splits.full))
        report = {
            "best_step": fit.best_step,
            "valid": valid.as_dict(),
            "test": test.as_dict(),
            "train": train.as_dict(),
            "flagged_users": len(splits.flagged),
            "codebook_health": vars(fit.health),
        }
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return RunResult(out, fit, valid, test, train, trainer)


def checkpoint_config(path) -> RunConfig:
    return parse_config(load_checkpoint(path)[2]["config"], str(path))


def trainer_from_checkpoint(path, ds: InteractionDataset) -> Trainer:
    params, rvq, meta = load_checkpoint(path)
    cfg = parse_config(meta["config"])
    if [tuple(x) for x in meta["user_schema"]] != [tuple(x) for x in ds.user_schema] or \
            [tuple(x) for x in meta["item_schema"]] != [tuple(x) for x in ds.item_schema]:
        raise ValueError("dataset schema does not match the checkpoint")
    t = Trainer.__new__(Trainer)
    t.cfg = cfg
    t.train_ds = ds
    t.valid_ds = None
    t.model = build_model(ds, cfg)
    t.params = params
    t.rvq = rvq
    t.uses_rvq = rvq is not None
    return t


def sweep(base: RunConfig, Ks=(4, 8, 16, 32), Ls=(1, 2, 3, 4), splits: SplitData = None,
          out_csv=None) -> List[dict]:
    """Train and evaluate every (K, L) cell; failures are recorded, not raised."""
    splits = splits or prepare_splits(base)
    rows = []
    for K in Ks:
        for L in Ls:
            try:
                cfg = base.replace(**{"rvq.K": K, "rvq.L": L})
                res = run_training(cfg, None, splits)
                rows.append({"K": K, "L": L, "logloss": res.valid.logloss, "auc": res.valid.auc,
                             "gauc": res.valid.gauc, "error": ""})
            except Exception as exc:  # one bad cell must not kill the sweep
                log.warning("sweep cell K=%d L=%d failed: %s", K, L, exc)
                rows.append({"K": K, "L": L, "logloss": math.nan, "auc": math.nan, "gauc": math.nan,
                             "error": str(exc)})
    if out_csv:
        with Path(out_csv).open("w") as fh:
            fh.write("K,L,logloss,auc,gauc\n")
            for r in rows:
                fh.write(f"{r['K']},{r['L']},{float(r['logloss'])!r},{float(r['auc'])!r},"
                         f"{float(r['gauc'])!r}\n")
    return rows
