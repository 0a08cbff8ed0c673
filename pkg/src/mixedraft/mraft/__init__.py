"""MRaft replica state machine and its message set."""

from .messages import *  # noqa: F401,F403
from .replica import CANDIDATE, FOLLOWER, LEADER, MRaftOptions, MRaftReplica

__all__ = ["CANDIDATE", "FOLLOWER", "LEADER", "MRaftOptions", "MRaftReplica"]
