"""Hierarchical group-wise ranking: residual-quantized user codes, trie
grouping, uncertainty-weighted grouped ListCE and a dual-path calibration loss,
implemented with numpy."""

from .config import RunConfig, load_config, parse_config
from .core import DivergenceError, OptimizerConfig, ParamStore, ShapeError, adamw_step
from .data import GenConfig, InteractionDataset, SplitSpec, load_csv, stratified_split, synthesize
from .grouping import GroupPartition, build_partitions
from .losses import hierarchical_loss, listce_level, sampling_variance, total_loss
from .metrics import auc, evaluate, gauc, stratify_cohorts
from .model import RankingModel, TowerConfig
from .rvq import RvqState, ema_update, expire_codes, init_codebooks, quantize
from .train import Trainer, run_training, sweep

__version__ = "0.1.0"
