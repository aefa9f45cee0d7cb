"""Energy-based GFlowNets: jointly fit an energy on binary data and a sampler for it."""

from .energy import IsingEnergy, MlpEnergy, algorithm2_step, ebm_update
from .gfn import ExplorationCfg, GFlowNet, estimate_log_pt, sample_backward, sample_forward, tb_loss
from .state_space import VOID, Backward, Forward, State
from .trainer import Trainer, TrainerCfg, k_schedule

__version__ = "0.1.0"

__all__ = [
    "VOID", "State", "Forward", "Backward",
    "GFlowNet", "ExplorationCfg", "sample_forward", "sample_backward", "tb_loss", "estimate_log_pt",
    "IsingEnergy", "MlpEnergy", "ebm_update", "algorithm2_step",
    "Trainer", "TrainerCfg", "k_schedule",
]
