from .checkpoint import ModelState, load_checkpoint, save_checkpoint
from .model import FabricNet, ModelConfig, minmax_over_time

__all__ = ["FabricNet", "ModelConfig", "ModelState", "load_checkpoint", "minmax_over_time", "save_checkpoint"]
