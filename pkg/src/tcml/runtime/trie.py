"""The transaction trie owned by the gatherer."""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass, field

from ..syntax import Expr


@dataclass
class TNode:
    """One transactional level.  The root has ``txn is None``.

    ``threads`` holds every live thread at this level, finished ones
    included.  ``frag_threads``/``frag_nodes`` record what was embedded into
    the transaction, as it was at embed time; an abort puts them back.
    """

    txn: int | None
    name: str | None = None
    parent: TNode | None = None
    threads: set[int] = field(default_factory=set)
    children: dict[int, TNode] = field(default_factory=dict)
    co_tokens: list[int] = field(default_factory=list)
    blocked: dict[int, tuple[int, str, Expr | None]] = field(default_factory=dict)
    finished: dict[int, Expr] = field(default_factory=dict)
    last_activity_ms: float = 0.0
    frag_threads: list[int] = field(default_factory=list)
    frag_nodes: list[TNode] = field(default_factory=list)

    def path(self) -> list[int]:
        """Transaction ids from the outermost level down to this node."""
        out = []
        n: TNode | None = self
        while n is not None and n.txn is not None:
            out.append(n.txn)
            n = n.parent
        out.reverse()
        return out

    def ancestors(self) -> Iterator[TNode]:
        n: TNode | None = self
        while n is not None:
            yield n
            n = n.parent

    def subtree(self) -> Iterator[TNode]:
        yield self
        for c in self.children.values():
            yield from c.subtree()

    def live_threads(self) -> Iterator[int]:
        for n in self.subtree():
            yield from n.threads

    def all_threads(self) -> set[int]:
        """Live threads under this node plus every thread named in its fragments."""
        out: set[int] = set()
        stack = [self]
        while stack:
            n = stack.pop()
            out.update(n.threads)
            out.update(n.frag_threads)
            stack.extend(n.children.values())
            stack.extend(n.frag_nodes)
        return out

    def copy(self) -> TNode:
        """Embed-time copy: structure, threads and co-tokens, not blocked/finished state."""
        new = TNode(
            self.txn,
            self.name,
            None,
            set(self.threads),
            {},
            list(self.co_tokens),
            last_activity_ms=self.last_activity_ms,
            frag_threads=list(self.frag_threads),
            frag_nodes=[f.copy() for f in self.frag_nodes],
        )
        for k, c in self.children.items():
            cc = c.copy()
            cc.parent = new
            new.children[k] = cc
        return new

    def describe(self) -> dict:
        return {
            "txn": self.txn,
            "name": self.name,
            "threads": sorted(self.threads),
            "co": sorted(self.co_tokens),
            "children": [self.children[k].describe() for k in sorted(self.children)],
        }
