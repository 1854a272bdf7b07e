"""
A small training run
====================

Train the group-wise objective and the plain logloss baseline on a small
synthetic dataset and compare validation metrics. Takes a few seconds.
"""

from grouprank import RunConfig, run_training
from grouprank.train import prepare_splits

cfg = RunConfig().replace(**{
    "gen.users": 600, "gen.items": 100, "gen.impressions_per_user": 50,
    "train.batch_size": 1024, "train.max_steps": 300, "train.eval_every": 50,
    "train.early_stop_patience": 0, "optim.learning_rate": 0.003,
    "loss.lambda": 0.1, "rvq.K": 8, "rvq.L": 3,
})
splits = prepare_splits(cfg)
print(f"{len(splits.train)} train rows, {len(splits.flagged)} users flagged with < 3 positives")

for objective in ("logloss", "groupce"):
    res = run_training(cfg.replace(**{"loss.objective": objective}), splits=splits)
    v = res.valid
    print(f"{objective:8s} best step {res.fit.best_step:4d}  logloss {v.logloss:.4f}  "
          f"AUC {v.auc:.4f}  GAUC {v.gauc:.4f}")
    if objective == "groupce":
        last = res.fit.history[-1]
        print("  per-level ListCE", [round(x, 3) for x in last["loss"]["per_level_listce"]],
              " log sigma", [round(x, 3) for x in last["log_sigma"]])
