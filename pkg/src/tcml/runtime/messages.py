"""Messages exchanged between workers, the gatherer and the scheduler."""

from __future__ import annotations

from dataclasses import dataclass

from ..syntax import Expr, TxnName

# thread -> gatherer.  ``epoch`` lets the gatherer drop requests issued
# before a rollback or kill it has already applied.


@dataclass(frozen=True)
class Spawned:
    thread: int
    epoch: int
    thunk: Expr


@dataclass(frozen=True)
class TxnStarted:
    thread: int
    epoch: int
    name: TxnName


@dataclass(frozen=True)
class CoSpawned:
    thread: int
    epoch: int
    txn: int


@dataclass(frozen=True)
class BlockedOn:
    thread: int
    epoch: int
    channel: int
    direction: str
    value: Expr | None


@dataclass(frozen=True)
class Finished:
    thread: int
    epoch: int
    value: Expr


@dataclass(frozen=True)
class Ticked:
    thread: int
    epoch: int


@dataclass(frozen=True)
class Ack:
    thread: int
    directive: int


@dataclass(frozen=True)
class Crashed:
    thread: int
    error: BaseException


REQUESTS = (Spawned, TxnStarted, CoSpawned, BlockedOn, Finished, Ticked)


# scheduler -> gatherer


@dataclass(frozen=True)
class NoDirective:
    version: int


# gatherer -> thread


@dataclass(frozen=True)
class Reply:
    epoch: int
    payload: int | None = None


@dataclass(frozen=True)
class Deliver:
    epoch: int
    value: Expr


@dataclass(frozen=True)
class EmbedSig:
    directive: int
    txn: int
    after: int | None


@dataclass(frozen=True)
class DropSig:
    directive: int
    txn: int


@dataclass(frozen=True)
class AbortSig:
    directive: int
    txn: int


STOP = object()
