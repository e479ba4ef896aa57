"""Query-level retrieval reliability from quantization stability and neighborhood density."""

from .certainty import (
    CertaintyScore,
    Scorer,
    SigmaEstimate,
    assess_reliability,
    combine,
    density_score,
    estimate_sigma,
    normalize_density,
    recall_bound,
    stability_score,
)
from .errors import *  # noqa: F401,F403
from .evaluation import bootstrap_ci, correlate, paired_test, recall_at_k
from .gravity import GravityWell, SyntheticInstance, generate_instance, theorem2_probe, theorem3_probe
from .index import Index, NeighborList, build_index, search_adc, search_exact
from .kernels import BACKEND
from .monitor import MonitorConfig, MonitorEvent, QualityMonitor, drain_stats, process_query
from .pq import PQCodebook, PQConfig, default_config, quantize, reconstruct, reconstruction_mse, train_codebook
from .vectors import EmbeddingSet, read_embeddings, squared_euclidean, write_embeddings

__version__ = "0.1.0"
