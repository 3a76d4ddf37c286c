"""Offline/online block protocol with slot recycling for prior inputs."""
from .linear import LinearOp
from .parties import BlockPlan, BlockSpec, ClientParty, ServerParty, plan_block
from .session import LayerShareState, Session, SessionConfig
from .model import (BuiltModel, LayerConfig, ModelConfig, QueueItem, build_model, builtin_config,
                    load_queue, model_summary, random_queue, run_model)

__all__ = ["LinearOp", "BlockPlan", "BlockSpec", "ClientParty", "ServerParty", "plan_block",
           "LayerShareState", "Session", "SessionConfig", "BuiltModel", "LayerConfig",
           "ModelConfig", "QueueItem", "build_model", "builtin_config", "load_queue",
           "model_summary", "random_queue", "run_model"]
