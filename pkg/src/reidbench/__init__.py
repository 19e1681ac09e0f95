"""Person re-identification retrieval evaluation and metric-learning kernels."""

__version__ = "0.1.0"

from .distances import DistanceMatrix, pairwise_distance
from .embedio import EmbeddingSet, load_embedding_set, save_embedding_set
from .metrics import EvalReport, QueryEval, evaluate, evaluate_embeddings, query_eval, rank_gallery
from .rerank import RerankParams, k_reciprocal_rerank

__all__ = [
    "DistanceMatrix",
    "EmbeddingSet",
    "EvalReport",
    "QueryEval",
    "RerankParams",
    "evaluate",
    "evaluate_embeddings",
    "k_reciprocal_rerank",
    "load_embedding_set",
    "pairwise_distance",
    "query_eval",
    "rank_gallery",
    "save_embedding_set",
]
