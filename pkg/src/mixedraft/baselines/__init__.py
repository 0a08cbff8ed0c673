"""Comparison baselines: crash-fault Raft and normal-case PBFT."""

from .pbft import PBFTOptions, PBFTReplica, pbft_cluster
from .raft import RaftOptions, RaftReplica, raft_cluster

__all__ = ["PBFTOptions", "PBFTReplica", "RaftOptions", "RaftReplica", "pbft_cluster", "raft_cluster"]
