from .config import RunConfig, dump_config, load_config
from .runner import EvalResult, evaluate, load_pipeline, rollout, run_seed, run_sweep
from .training import train_single_view_ddpg, train_stage1, train_stage2

__all__ = [
    "EvalResult",
    "RunConfig",
    "dump_config",
    "evaluate",
    "load_config",
    "load_pipeline",
    "rollout",
    "run_seed",
    "run_sweep",
    "train_single_view_ddpg",
    "train_stage1",
    "train_stage2",
]
