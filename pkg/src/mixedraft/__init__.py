"""Mixed-fault consensus: TEE-assisted Raft with a collective-signature fallback."""

from .core import ClusterConfig, ConfigError, LogEntry, ReplicatedLog, Request, derive_params

__all__ = ["ClusterConfig", "ConfigError", "LogEntry", "ReplicatedLog", "Request", "derive_params"]
__version__ = "0.1.0"
