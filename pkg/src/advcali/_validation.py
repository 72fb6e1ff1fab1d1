"""Input checks shared by the estimator wrappers."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError, ValidationError
from .graph import Graph


def check_logits(X, n_classes=None):
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if n_classes is not None and X.shape[1] != n_classes:
        raise ShapeError(f"expected {n_classes} logit columns, got {X.shape[1]}")
    return X


def check_node_labels(y, n_nodes):
    """Integer labels with ``-1`` marking unlabeled nodes; at least one label required."""
    y = np.asarray(y)
    if y.shape != (n_nodes,):
        raise ShapeError(f"labels must have shape ({n_nodes},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValidationError("labels must be integers")
        y = y.astype(np.int64)
    if np.any(y < -1):
        raise ValidationError("labels must be >= -1")
    if not np.any(y >= 0):
        raise ValidationError("no labeled nodes (all labels are -1)")
    return y.astype(np.int64)


def check_graph(graph, n_nodes):
    if not isinstance(graph, Graph):
        raise ValidationError(f"graph must be a Graph, got {type(graph).__name__}")
    if graph.num_nodes != n_nodes:
        raise ShapeError(f"graph has {graph.num_nodes} nodes, logits have {n_nodes} rows")
    return graph
