"""Search tree storage (index-addressed node pool) and the PUCT machinery."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterator

import numpy as np

from .domain import (
    ContractViolation,
    PlannerConfig,
    RewardBreakdown,
    SequenceState,
    TokenId,
    WorldInstance,
    append_token,
)
from .models import ExpansionResult


@dataclass(slots=True)
class EdgeStats:
    prior: float
    child: int
    visits: int = 0
    total_value: float = 0.0

    @property
    def mean_value(self) -> float:
        return self.total_value / self.visits if self.visits else 0.0


@dataclass(slots=True)
class SearchNode:
    node_id: int
    state: SequenceState
    children: dict[TokenId, EdgeStats] = field(default_factory=dict)
    expanded: bool = False
    visit_total: int = 0  # sum of N(s, a) over outgoing edges
    reward: RewardBreakdown | None = None  # noiseless reward cache for terminal nodes


@dataclass
class SelectionPath:
    """Root-to-leaf walk as ``(node_id, chosen token)`` pairs; the leaf carries ``None``."""

    steps: list[tuple[int, TokenId | None]]

    @property
    def leaf(self) -> int:
        return self.steps[-1][0]

    @property
    def edges(self) -> list[tuple[int, TokenId]]:
        return [(n, a) for n, a in self.steps if a is not None]

    @property
    def depth(self) -> int:
        return len(self.steps) - 1


class SearchTree:
    def __init__(self, world: WorldInstance, root_state: SequenceState):
        self.world = world
        self.nodes: list[SearchNode] = []
        self.root_id = self.add_node(root_state)

    def add_node(self, state: SequenceState) -> int:
        node_id = len(self.nodes)
        self.nodes.append(SearchNode(node_id, state))
        return node_id

    def __getitem__(self, node_id: int) -> SearchNode:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def root_child_stats(self, root_id: int | None = None) -> dict[TokenId, dict[str, float]]:
        node = self.nodes[self.root_id if root_id is None else root_id]
        return {t: {"N": e.visits, "W": e.total_value, "P": e.prior} for t, e in node.children.items()}

    def iter_records(self) -> Iterator[dict]:
        for node in self.nodes:
            yield {
                "node_id": node.node_id,
                "tokens": list(node.state.tokens),
                "terminal": node.state.terminal,
                "expanded": node.expanded,
                "children": [
                    {"token": t, "N": e.visits, "W": e.total_value, "P": e.prior, "child": e.child}
                    for t, e in node.children.items()
                ],
            }

    def dump_jsonl(self, fh: IO[str]) -> None:
        for rec in self.iter_records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def uct_score(edge: EdgeStats, parent_visit_total: int, c_puct: float) -> float:
    """``Q + c_puct * P * sqrt(sum_b N) / (1 + N)``, with Q = 0 on unvisited edges."""
    n = edge.visits
    q = edge.total_value / n if n else 0.0
    return q + c_puct * edge.prior * math.sqrt(parent_visit_total) / (1 + n)


def best_child_by_uct(node: SearchNode, c_puct: float) -> tuple[TokenId, float]:
    """Argmax of the PUCT score. Exact ties go to the larger prior, then the lowest token."""
    sqrt_total = math.sqrt(node.visit_total)
    best_tok = -1
    best_s = -math.inf
    best_p = -1.0
    for tok, e in node.children.items():
        n = e.visits
        s = (e.total_value / n if n else 0.0) + c_puct * e.prior * sqrt_total / (1 + n)
        if s > best_s or (s == best_s and (e.prior > best_p or (e.prior == best_p and tok < best_tok))):
            best_tok, best_s, best_p = tok, s, e.prior
    return best_tok, best_s


def select_leaf(tree: SearchTree, root_id: int, config: PlannerConfig) -> SelectionPath:
    steps: list[tuple[int, TokenId | None]] = []
    node = tree.nodes[root_id]
    while node.expanded and not node.state.terminal:
        tok, _ = best_child_by_uct(node, config.c_puct)
        steps.append((node.node_id, tok))
        node = tree.nodes[node.children[tok].child]
    steps.append((node.node_id, None))
    return SelectionPath(steps)


def top_actions(prior: np.ndarray, m: int) -> list[TokenId]:
    """Indices of the ``m`` largest entries, ties by lowest index."""
    order = np.lexsort((np.arange(prior.size), -prior))
    return [int(t) for t in order[:m]]


def expand_node(
    tree: SearchTree, node_id: int, expansion: ExpansionResult, config: PlannerConfig
) -> int:
    node = tree.nodes[node_id]
    if node.expanded:
        raise ContractViolation(f"node {node_id} already expanded")
    if node.state.terminal:
        raise ContractViolation(f"node {node_id} is terminal and cannot be expanded")
    prior = expansion.merged_prior()
    chosen = sorted(top_actions(prior, config.top_m_actions))
    mass = float(sum(prior[t] for t in chosen))
    for t in chosen:
        child = tree.add_node(append_token(node.state, t, tree.world))
        node.children[t] = EdgeStats(prior=float(prior[t]) / mass, child=child)
    node.expanded = True
    return len(chosen)


def backpropagate(tree: SearchTree, path: SelectionPath, value: float, gamma: float) -> None:
    """Edge ``d`` levels above the leaf receives ``gamma**d * value``."""
    edges = path.edges
    m = len(edges)
    for i, (node_id, tok) in enumerate(edges):
        node = tree.nodes[node_id]
        e = node.children[tok]
        e.visits += 1
        e.total_value += value if gamma == 1.0 else gamma ** (m - 1 - i) * value
        node.visit_total += 1


def best_action_by_visits(tree: SearchTree, root_id: int) -> TokenId:
    node = tree.nodes[root_id]
    if not node.expanded or not node.children:
        raise ContractViolation(f"node {root_id} has no children to choose from")
    best_tok, best_n = -1, -1
    for tok, e in node.children.items():
        if e.visits > best_n or (e.visits == best_n and tok < best_tok):
            best_tok, best_n = tok, e.visits
    return best_tok
