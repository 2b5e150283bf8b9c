"""Concurrent interpreter: workers, gatherer, scheduler."""

from .engine import ConcurrentEngine, DeterministicEngine, RunConfig, RunResult, run_program
from .gatherer import Gatherer, ProtocolError
from .trace import Trace, read_trace
from .trie import TNode
from .worker import Snapshot, Worker

__all__ = [
    "ConcurrentEngine",
    "DeterministicEngine",
    "Gatherer",
    "ProtocolError",
    "RunConfig",
    "RunResult",
    "Snapshot",
    "TNode",
    "Trace",
    "Worker",
    "read_trace",
    "run_program",
]
