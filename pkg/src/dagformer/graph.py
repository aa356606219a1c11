"""Causal DAGs with role-tagged nodes, compiled into attention masks.

The node order fixed at construction is authoritative: it defines row and
column order of the adjacency matrix, the attention mask, and every derived
model structure, and it is preserved by serialization.
"""

import json
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError


class NodeRole(str, Enum):
    TREATMENT = "treatment"
    OUTCOME = "outcome"
    CONFOUNDER = "confounder"
    UNMEASURED = "unmeasured"
    TREATMENT_PROXY = "treatment_proxy"
    OUTCOME_PROXY = "outcome_proxy"


class CausalDag:
    """Directed acyclic graph over named, role-tagged nodes.

    Immutable after construction; acyclicity, name uniqueness and role
    multiplicity (at most one treatment, at most one outcome) are verified
    up front. Edges may be given as name pairs or index pairs.
    """

    def __init__(self, nodes, edges):
        self.names: list[str] = []
        self.roles: list[NodeRole] = []
        for name, role in nodes:
            self.names.append(str(name))
            self.roles.append(NodeRole(role))
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"duplicate node names in {self.names}")
        for role in (NodeRole.TREATMENT, NodeRole.OUTCOME):
            if self.roles.count(role) > 1:
                raise ConfigError(f"more than one {role.value} node")
        self.index = {name: i for i, name in enumerate(self.names)}
        edge_idx = set()
        for parent, child in edges:
            p = self.index[parent] if isinstance(parent, str) else int(parent)
            c = self.index[child] if isinstance(child, str) else int(child)
            if not (0 <= p < len(self.names) and 0 <= c < len(self.names)):
                raise ConfigError(f"edge ({parent}, {child}) references unknown node")
            if p == c:
                raise ConfigError(f"self-loop on node {self.names[p]}")
            edge_idx.add((p, c))
        self.edges: tuple = tuple(sorted(edge_idx))
        self._check_acyclic()

    def _check_acyclic(self):
        d = len(self.names)
        indegree = [0] * d
        children = [[] for _ in range(d)]
        for p, c in self.edges:
            indegree[c] += 1
            children[p].append(c)
        queue = [i for i in range(d) if indegree[i] == 0]
        visited = 0
        while queue:
            node = queue.pop()
            visited += 1
            for c in children[node]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    queue.append(c)
        if visited != d:
            raise ConfigError("graph contains a directed cycle")

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    def role_of(self, name: str) -> NodeRole:
        return self.roles[self.index[name]]

    def nodes_with_role(self, role: NodeRole) -> list[str]:
        return [n for n, r in zip(self.names, self.roles) if r is role]

    def single_node(self, role: NodeRole) -> str:
        found = self.nodes_with_role(role)
        if len(found) != 1:
            raise ConfigError(f"graph needs exactly one {role.value} node, found {len(found)}")
        return found[0]

    def parents_of(self, name: str) -> list[str]:
        i = self.index[name]
        return [self.names[p] for p, c in self.edges if c == i]

    def ancestors_of(self, name: str) -> set[str]:
        result: set[str] = set()
        frontier = [name]
        while frontier:
            node = frontier.pop()
            for parent in self.parents_of(node):
                if parent not in result:
                    result.add(parent)
                    frontier.append(parent)
        return result

    def induced_subgraph(self, keep: list[str]) -> "CausalDag":
        """Subgraph over `keep` (in this graph's node order) with its edges."""
        keep_set = set(keep)
        nodes = [(n, r) for n, r in zip(self.names, self.roles) if n in keep_set]
        edges = [(self.names[p], self.names[c]) for p, c in self.edges
                 if self.names[p] in keep_set and self.names[c] in keep_set]
        return CausalDag(nodes, edges)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": [{"name": n, "role": r.value} for n, r in zip(self.names, self.roles)],
            "edges": [[self.names[p], self.names[c]] for p, c in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CausalDag":
        nodes = [(nd["name"], nd["role"]) for nd in d["nodes"]]
        return cls(nodes, [tuple(e) for e in d["edges"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CausalDag":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return (isinstance(other, CausalDag) and self.names == other.names
                and self.roles == other.roles and self.edges == other.edges)

    def __repr__(self):
        return f"CausalDag(nodes={self.names}, edges={len(self.edges)})"


def build_adjacency(dag: CausalDag) -> np.ndarray:
    """0/1 matrix with adj[i, j] = 1 iff there is an edge node_i -> node_j."""
    d = dag.n_nodes
    adj = np.zeros((d, d), dtype=np.int64)
    for p, c in dag.edges:
        adj[p, c] = 1
    return adj


def build_mask(adj: np.ndarray) -> np.ndarray:
    """Attention mask from an adjacency matrix: 1 = forbidden, 0 = allowed.

    Position (i, j) is allowed iff j is a parent of i (adj[j, i] = 1) or
    i == j, so attention flows only along causal edges plus self-attention.
    """
    adj = np.asarray(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    allowed = (adj.T == 1) | np.eye(adj.shape[0], dtype=bool)
    return np.where(allowed, 0, 1).astype(np.int64)


def mask_to_additive(mask: np.ndarray) -> np.ndarray:
    """Score-space form of the mask: 0 where allowed, -inf where forbidden."""
    return np.where(np.asarray(mask) == 0, 0.0, -np.inf)


VALID_METHODS = ("gformula", "ipw", "aipw", "proximal")


def input_nodes_for(method: str, dag: CausalDag) -> tuple[list[str], list[str]]:
    """Model input nodes and output-head nodes for an estimation method.

    Returns (input node names in DAG order, head node names). Unmeasured
    nodes are always excluded from the inputs.
    """
    if method not in VALID_METHODS:
        raise ConfigError(f"unknown method {method!r}, expected one of {VALID_METHODS}")
    treatment = dag.single_node(NodeRole.TREATMENT)
    outcome = dag.single_node(NodeRole.OUTCOME)
    confounders = dag.nodes_with_role(NodeRole.CONFOUNDER)

    if method == "gformula":
        keep = set(confounders) | {treatment, outcome}
        heads = [outcome]
    elif method == "ipw":
        keep = set(confounders) | {treatment}
        heads = [treatment]
    elif method == "aipw":
        keep = set(confounders) | {treatment, outcome}
        heads = [treatment, outcome]
    else:  # proximal
        t_proxies = dag.nodes_with_role(NodeRole.TREATMENT_PROXY)
        o_proxies = dag.nodes_with_role(NodeRole.OUTCOME_PROXY)
        if not t_proxies:
            raise ConfigError("proximal method requires a treatment_proxy node")
        if not o_proxies:
            raise ConfigError("proximal method requires an outcome_proxy node")
        keep = set(confounders) | set(t_proxies) | set(o_proxies) | {treatment, outcome}
        heads = [outcome]

    inputs = [n for n in dag.names if n in keep and dag.role_of(n) is not NodeRole.UNMEASURED]
    return inputs, heads


# -- stock graphs -----------------------------------------------------------

def backdoor_dag(confounders: list[str], treatment: str = "A", outcome: str = "Y") -> CausalDag:
    """Classic adjustment graph: every confounder points at both A and Y."""
    nodes = [(x, NodeRole.CONFOUNDER) for x in confounders]
    nodes += [(treatment, NodeRole.TREATMENT), (outcome, NodeRole.OUTCOME)]
    edges = [(x, treatment) for x in confounders] + [(x, outcome) for x in confounders]
    edges.append((treatment, outcome))
    return CausalDag(nodes, edges)


def demand_dag() -> CausalDag:
    """Price/sales graph with unmeasured demand and its two proxies."""
    nodes = [
        ("U", NodeRole.UNMEASURED),
        ("Z", NodeRole.TREATMENT_PROXY),
        ("W", NodeRole.OUTCOME_PROXY),
        ("A", NodeRole.TREATMENT),
        ("Y", NodeRole.OUTCOME),
    ]
    edges = [("A", "Y"), ("U", "A"), ("U", "Y"), ("U", "Z"), ("U", "W"), ("Z", "A"), ("W", "Y")]
    return CausalDag(nodes, edges)
