"""Codified decision trees for simulating how organized groups decide."""
from .adapt import AdaptReport, adapt_tree, classify_statement, transfer
from .construct import build_tree, build_tree_with_selection
from .estimator import CodifiedDecisionTree
from .exceptions import (
    CdtError,
    ConfigError,
    DegenerateEmbeddingError,
    MissingTranscriptError,
    OracleError,
    ProtocolError,
    ValidationError,
)
from .infer import predict, traverse
from .model import (
    Cdt,
    CdtNode,
    EvidenceLabel,
    Gate,
    GroundingMatrix,
    HyperParams,
    Observation,
    Statement,
    tree_from_dict,
    tree_to_dict,
    validate_tree,
)
from .oracle import Oracle, make_oracle

__version__ = "0.1.0"

__all__ = [
    "AdaptReport", "Cdt", "CdtError", "CdtNode", "CodifiedDecisionTree", "ConfigError",
    "DegenerateEmbeddingError", "EvidenceLabel", "Gate", "GroundingMatrix", "HyperParams",
    "MissingTranscriptError", "Observation", "Oracle", "OracleError", "ProtocolError", "Statement",
    "ValidationError", "adapt_tree", "build_tree", "build_tree_with_selection", "classify_statement",
    "make_oracle", "predict", "transfer", "traverse", "tree_from_dict", "tree_to_dict", "validate_tree",
]
