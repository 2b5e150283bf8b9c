"""Searches over the reference semantics that only take communication-justified embeds.

Unrestricted embedding makes the one-shot benchmark programs far too large
to enumerate here.  Every step these searches take is still a step of
``enumerate_steps``, so a path they find is a genuine reduction sequence.
"""

from tcml import refsem
from tcml.syntax import Send


def node_at(root, path):
    n = root
    for k in path:
        n = next(t for t in n.txns if t.name == k).default
    return n


def blocked(node):
    """(channel, is_send) for every thread blocked anywhere under ``node``."""
    out = []
    for th in node.threads:
        c = refsem.classify(th)
        if isinstance(c, refsem.Blocked):
            out.append((c.redex.chan.id, isinstance(c.redex, Send)))
    for t in node.txns:
        out.extend(blocked(t.default))
    return out


def justified(state, label) -> bool:
    node = node_at(state.root, label.path)
    target = next(t for t in node.txns if t.name == label.txn)
    inside = blocked(target.default)
    kind, _, ref = label.detail.partition(":")
    if kind == "thread":
        moved = blocked(refsem.Node((node.threads[int(ref)],), (), ()))
    elif kind == "txn":
        moved = blocked(next(t for t in node.txns if t.name == int(ref)).default)
    else:
        return False
    return any(c == c2 and s != s2 for c, s in moved for c2, s2 in inside)


def successors(state, aborts: bool):
    for label, nxt in refsem.enumerate_steps(state):
        if label.kind == "abort" and not aborts:
            continue
        if label.kind == "embed" and not justified(state, label):
            continue
        yield label, nxt


def witness(start, goal, aborts=False, limit=100_000):
    """Depth-first search for a state satisfying ``goal``; returns the label path or None."""
    s0 = refsem.canonicalize(start)
    seen = {s0.key}
    stack = [(s0, ())]
    while stack and len(seen) < limit:
        s, path = stack.pop()
        if goal(s):
            return list(path)
        for label, t in successors(s, aborts):
            if t.key not in seen:
                seen.add(t.key)
                stack.append((t, path + (label,)))
    return None


def explore(start, aborts: bool, limit=200_000):
    """Every state reachable under justified embeds: (states, outcomes, complete)."""
    s0 = refsem.canonicalize(start)
    seen = {s0.key: s0}
    frontier = [s0]
    outs = set()
    while frontier and len(seen) < limit:
        nxt = []
        for s in frontier:
            if not s.root.txns and not refsem.enumerate_steps(s):
                outs.add(refsem.outcome_of(s))
            for _, t in successors(s, aborts):
                if t.key not in seen:
                    seen[t.key] = t
                    nxt.append(t)
        frontier = nxt
    return seen, outs, not frontier
