"""From a causal graph to an attention mask.

Builds the classic confounded triangle (X -> A, X -> Y, A -> Y) and the
price/sales proxy graph, compiles each into an adjacency matrix and an
attention mask, and shows that a model's attention weights honor the mask.
"""

import numpy as np

from dagformer import CausalDag, build_adjacency, build_mask, demand_dag
from dagformer.model import DagTransformer, ModelConfig

triangle = CausalDag(
    [("X", "confounder"), ("A", "treatment"), ("Y", "outcome")],
    [("X", "A"), ("X", "Y"), ("A", "Y")],
)

adj = build_adjacency(triangle)
mask = build_mask(adj)
print("confounded triangle, node order", triangle.names)
print("adjacency (row -> column is an edge):")
print(adj)
print("mask (1 = attention forbidden, 0 = allowed):")
print(mask)
print("reading row A:", ["forbidden" if m else "allowed" for m in mask[1]],
      "-> A attends to its parent X and to itself, never to Y")

print("\nprice/sales proxy graph:")
dag = demand_dag()
print("nodes:", dag.names, "(U is unmeasured and never becomes a model input)")
print(build_mask(build_adjacency(dag)))

# attention weights of an actual model are exactly zero on forbidden pairs
model = DagTransformer(
    ModelConfig(embedding_dim=8, num_heads=2, num_encoder_layers=1,
                feedforward_dim=16, mlp_width=8, mlp_depth=1, alpha=0.3, seed=0),
    triangle, "aipw", {"X": "continuous", "A": "binary", "Y": "continuous"})
batch = np.column_stack([np.random.default_rng(0).standard_normal(4),
                         np.array([0.0, 1.0, 1.0, 0.0]),
                         np.random.default_rng(1).standard_normal(4)])
weights = model.attention_maps(batch)[0]
print("\nper-head attention weights, first row of the batch:")
print(np.round(weights[0], 3))
print("forbidden entries are exactly zero:", bool(np.all(weights[:, :, mask == 1] == 0.0)))
print("rows sum to one:", bool(np.allclose(weights.sum(axis=-1), 1.0)))
