"""Risk-aware actor/multi-critic learners for constrained contextual bandits."""
from .agents import (AGENT_KINDS, Agent, AgentConfig, McNcbAgent, NcbAgent, OuNoise,
                     RancbAgent, ReplayBuffer, RiskProfile, ScDncbAgent, aggregate_reward,
                     make_agent, ncb_utility, spawn_streams)
from .constraints import Constraint
from .errors import CheckpointError, ConfigError, NumericError

__version__ = "0.1.0"
