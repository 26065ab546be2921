"""Dependency extraction and logical ordering of sub-questions."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

from .core import ChainStep, LogicalChain, Question, SubQuestion, find_cycle, placeholders
from .errors import CycleError, StructuralError


@dataclass(frozen=True)
class DependencyGraph:
    """Nodes are sub-question indices; an edge ``(n, m)`` means m needs n's answer."""

    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]

    def predecessors(self, node: int) -> list[int]:
        return sorted(u for u, v in self.edges if v == node)

    def successors(self, node: int) -> list[int]:
        return sorted(v for u, v in self.edges if u == node)


def extract_dependencies(subs: Sequence[SubQuestion]) -> DependencyGraph:
    indices = [s.index for s in subs]
    if sorted(indices) != list(range(1, len(indices) + 1)):
        raise StructuralError(f"sub-question indices {indices} are not contiguous from 1")
    known = set(indices)
    edges = set()
    for s in subs:
        for n in sorted(placeholders(s.text)):
            if n not in known:
                raise StructuralError(f"sub-question {s.index} references #{n}, which does not exist")
            edges.add((n, s.index))
    return DependencyGraph(tuple(sorted(indices)), frozenset(edges))


def _question_for(subs: Sequence[SubQuestion]) -> Question:
    return Question.from_text(" ".join(s.text for s in subs))


def reorder(graph: DependencyGraph, subs: Sequence[SubQuestion], question: Question | None = None) -> LogicalChain:
    """Topologically order the sub-questions.

    Among nodes whose dependencies are all placed, the one with the lowest
    cognitive load goes first, ties broken by original index.
    """
    by_index = {s.index: s for s in subs}
    indegree = {n: 0 for n in graph.nodes}
    succ: dict[int, list[int]] = {n: [] for n in graph.nodes}
    for u, v in graph.edges:
        indegree[v] += 1
        succ[u].append(v)

    ready = [(by_index[n].load_total, n) for n in graph.nodes if indegree[n] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        _, n = heapq.heappop(ready)
        order.append(n)
        for v in succ[n]:
            indegree[v] -= 1
            if indegree[v] == 0:
                heapq.heappush(ready, (by_index[v].load_total, v))

    if len(order) != len(graph.nodes):
        stuck = [n for n in graph.nodes if n not in set(order)]
        cycle = find_cycle(stuck, [(u, v) for u, v in graph.edges if u in stuck and v in stuck])
        raise CycleError(cycle or stuck)

    return LogicalChain(
        question=question or _question_for(subs),
        steps=[ChainStep(by_index[n]) for n in order],
        order_proof=sorted(graph.edges),
    )


def emission_order(graph: DependencyGraph, subs: Sequence[SubQuestion], question: Question | None = None) -> LogicalChain:
    """Chain in the order the sub-questions were produced (reordering disabled)."""
    ordered = sorted(subs, key=lambda s: s.index)
    return LogicalChain(
        question=question or _question_for(subs),
        steps=[ChainStep(s) for s in ordered],
        order_proof=sorted(graph.edges),
    )
