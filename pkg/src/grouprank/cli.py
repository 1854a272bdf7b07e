"""Command-line entry point: ``grouprank {train,eval,sweep,gen-data,diagnose-sampling}``.

Every command prints its results as JSON (one record per line) or CSV on
stdout, exits 0 on success and prints ``error: ...`` to stderr with a nonzero
status otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .core import sigmoid
from .data import (DataError, GenConfig, batch_iter, load_csv, read_manifest, synthesize,
                   synthesize_with_truth, write_cluster_file, write_csv)
from .losses import DiagnosticError, sampling_variance
from .metrics import stratify_cohorts
from .train import checkpoint_config, run_training, sweep, trainer_from_checkpoint

log = logging.getLogger("grouprank")


class CliError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(**{"train.seed": args.seed})
    return cfg


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"expected comma-separated integers, got {text!r}") from None


def _emit(record: dict) -> None:
    print(json.dumps(_clean(record), sort_keys=True, allow_nan=False))


def _clean(o):
    """Replace NaN floats by None so records stay strict JSON."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, float) and o != o:
        return None
    return o


# ---------------------------------------------------------------------- train


def cmd_train(args) -> int:
    cfg = _config(args)
    res = run_training(cfg, args.out)
    _emit({"run_dir": str(res.run_dir), "best_step": res.fit.best_step,
           "valid": res.valid.as_dict(), "test": res.test.as_dict(),
           "train": res.train.as_dict()})
    return 0


# ----------------------------------------------------------------------- eval


def _dataset_for(ckpt, data_path: Optional[str]):
    if data_path:
        return load_csv(data_path)
    cfg = checkpoint_config(ckpt)
    return load_csv(cfg.data.csv) if cfg.data.csv else synthesize(cfg.gen)


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    ds = _dataset_for(ckpt, args.data)
    trainer = trainer_from_checkpoint(ckpt, ds)
    run_dir = ckpt.parent
    rows = None
    if args.rows:
        rows = read_manifest(args.rows)
    elif args.split != "all":
        manifest = run_dir / f"split_{args.split}.txt"
        if not manifest.exists():
            raise CliError(f"no split manifest {manifest}; pass --rows or --split all")
        rows = read_manifest(manifest)
    subset = ds if rows is None else ds.subset(rows)
    cohorts = None
    if args.cohorts:
        cold, warm = _ints(args.cohorts)
        train_manifest = run_dir / "split_train.txt"
        counts_ds = ds.subset(read_manifest(train_manifest)) if train_manifest.exists() else subset
        cohorts = stratify_cohorts(counts_ds.impression_counts(), cold, warm)
    report = trainer.evaluate(subset, cohorts)
    _emit({"split": args.rows or args.split, **report.as_dict()})
    return 0


# ---------------------------------------------------------------------- sweep


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "heatmap.csv"
    rows = sweep(cfg, _ints(args.K), _ints(args.L), out_csv=csv_path)
    sys.stdout.write(csv_path.read_text())
    failed = [r for r in rows if r["error"]]
    for r in failed:
        print(f"warning: cell K={r['K']} L={r['L']} failed: {r['error']}", file=sys.stderr)
    return 1 if len(failed) == len(rows) else 0


# ------------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    gen = _config(args).gen if args.config else GenConfig()
    if args.seed is not None:
        gen = GenConfig(**{**vars(gen), "seed": args.seed})
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        ds, _ = synthesize_with_truth(gen)
        write_csv(ds, out / "interactions.csv")
        write_cluster_file(ds, out / "clusters.csv")
        (out / "generator.json").write_text(gen.to_json() + "\n")
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc}") from None
    _emit({"out": str(out), "rows": len(ds), "users": gen.users, "items": gen.items,
           "positive_rate": float(ds.labels.mean())})
    return 0


# ---------------------------------------------------------- diagnose-sampling


def per_negative_gradients(trainer, batch, anchor: int) -> np.ndarray:
    """Flattened parameter gradient of log(1 + exp(-(s_pos - s_neg))) for each
    in-batch negative ``neg`` paired with the positive row ``anchor``."""
    model, params = trainer.model, trainer.params
    trace = model.forward(batch.x_u, batch.x_i, params)
    negs = np.flatnonzero(batch.labels <= 0.5)
    names = [n for n in params if not n.startswith("uncertainty.")]
    out = np.empty((negs.size, sum(params[n].size for n in names)))
    for j, neg in enumerate(negs):
        params.zero_grad()
        diff = trace.s[anchor] - trace.s[neg]
        coef = -sigmoid(-np.array([diff]))[0]  # d softplus(-diff) / d diff
        ds = np.zeros_like(trace.s)
        ds[anchor], ds[neg] = coef, -coef
        model.backward(params, trace, ds)
        out[j] = np.concatenate([params.grad(n).ravel() for n in names])
    params.zero_grad()
    return out


def diagnose_sampling(trainer, ds, batch_size: int, batch_seed: int, resolution: int = 1000):
    batch = next(batch_iter(ds, batch_size, True, seed=batch_seed))
    pos = np.flatnonzero(batch.labels > 0.5)
    if pos.size == 0:
        raise DiagnosticError("batch has no positive example")
    if pos.size == batch.labels.size:
        raise DiagnosticError("batch has no negative example")
    grads = per_negative_gradients(trainer, batch, int(pos[0]))
    return sampling_variance(grads, resolution=resolution), int(batch.rows[pos[0]])


def format_diagnostic(diag) -> str:
    lines = [f"{'distribution':<16} {'trace_variance':>16}"]
    for name in ("uniform", "prop_norm", "prop_norm_sq", "search_optimum"):
        lines.append(f"{name:<16} {diag.candidates[name][1]:>16.6e}")
    return "\n".join(lines)


def cmd_diagnose_sampling(args) -> int:
    ckpt = Path(args.checkpoint)
    ds = _dataset_for(ckpt, args.data)
    trainer = trainer_from_checkpoint(ckpt, ds)
    diag, anchor_row = diagnose_sampling(trainer, ds, args.batch_size, args.batch_seed, args.resolution)
    print(format_diagnostic(diag))
    _emit({"anchor_row": anchor_row, "negatives": int(diag.per_negative_grad_norms.size),
           "search": diag.search,
           "trace_variance": {k: v[1] for k, v in diag.candidates.items()},
           "grad_norms": diag.per_negative_grad_norms.tolist()})
    return 0


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grouprank", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default=None):
        sp.add_argument("--config", help="config file (section.key = value lines)")
        sp.add_argument("--seed", type=int, help="overrides the config's seed")
        sp.add_argument("--out", default=out_default, required=out_default is None,
                        help="output directory")

    t = sub.add_parser("train", help="train one model and write a run directory")
    common(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--data", help="CSV to evaluate on (default: the checkpoint's dataset)")
    e.add_argument("--split", default="test", choices=["train", "valid", "test", "all"],
                   help="split manifest from the checkpoint's run directory")
    e.add_argument("--rows", help="explicit row manifest (overrides --split)")
    e.add_argument("--cohorts", help="cold,warm impression thresholds, e.g. 20,50")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="K x L grid; writes heatmap.csv")
    common(s)
    s.add_argument("--K", default="4,8,16,32")
    s.add_argument("--L", default="1,2,3,4")
    s.set_defaults(fn=cmd_sweep)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(g)
    g.set_defaults(fn=cmd_gen_data)

    d = sub.add_parser("diagnose-sampling", help="negative-sampling variance report")
    d.add_argument("checkpoint")
    d.add_argument("--data", help="CSV (default: the checkpoint's dataset)")
    d.add_argument("--batch-size", type=int, default=16)
    d.add_argument("--batch-seed", type=int, default=0)
    d.add_argument("--resolution", type=int, default=1000,
                   help="simplex grid resolution for the exhaustive search")
    d.set_defaults(fn=cmd_diagnose_sampling)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (CliError, ConfigError, DataError, DiagnosticError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
