"""figqa: few-shot question answering over scientific figures.

Pipeline stages: corpus loading, embedding-based few-shot retrieval,
conditional prompt rendering, cached inference with confidence scoring,
ROUGE evaluation, and routing ensembles.
"""

__version__ = "0.1.0"

from .corpus import Corpus, Instance, figure_type_shares, load_corpus
from .embeddings import EmbeddingStore, cosine, fuse, normalize, rank
from .inference import Prediction, RunCache, RunConfig, confidence
from .metrics import rouge1, rougeL, tokenize
from .prompting import canonical_refusal, render_bundle, render_query
from .retrieval import FewShotSelection, RetrievalSpec, candidate_pool, select

__all__ = [
    "Corpus",
    "EmbeddingStore",
    "FewShotSelection",
    "Instance",
    "Prediction",
    "RetrievalSpec",
    "RunCache",
    "RunConfig",
    "candidate_pool",
    "canonical_refusal",
    "confidence",
    "cosine",
    "figure_type_shares",
    "fuse",
    "load_corpus",
    "normalize",
    "rank",
    "render_bundle",
    "render_query",
    "rouge1",
    "rougeL",
    "select",
    "tokenize",
]
