"""Graph-structured recurrent policies over signed synaptic operators."""

from ._core import (
    DataError,
    Env,
    Graph,
    Policy,
    StepResult,
    UsageError,
    __build__,
    __version__,
    graph_policy,
    kl_diag_gaussian,
    mlp_policy,
    parse_graph,
    signed_operator,
    similarity_matrix,
    spectral_order,
    synth_graph,
)

__all__ = [
    "DataError",
    "Env",
    "Graph",
    "Policy",
    "StepResult",
    "UsageError",
    "__build__",
    "__version__",
    "graph_policy",
    "kl_diag_gaussian",
    "mlp_policy",
    "parse_graph",
    "signed_operator",
    "similarity_matrix",
    "spectral_order",
    "synth_graph",
]
