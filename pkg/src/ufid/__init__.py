"""Inference-time backdoor-detection firewall for generative model services.

A query to a generative model is expanded into a perturbed batch, the batch
is generated in one backend call, and the diversity of the generations is
summarized by the density of their pairwise-similarity graph. Suspiciously
consistent batches are rejected; everything else gets back the generation
for the unmodified input.
"""

from .augmentation import (
    MagnitudeSet,
    PhrasePool,
    augment,
    augment_conditional,
    augment_unconditional,
)
from .backends import (
    BackendDescriptor,
    RemoteBackend,
    SyntheticBackend,
    SyntheticEncoder,
    SyntheticParams,
    make_backend,
)
from .calibration import Threshold, calibrate
from .errors import UfidError
from .evaluation import EvalScenario, MetricsReport, auc, build_datasets, precision_recall, run_scenario
from .firewall import Firewall, FirewallConfig, Verdict, create_app, serve
from .rng import RngSeed, derive_rng, root_seed_from_env
from .scoring import (
    ScoreRecord,
    SimilarityGraph,
    combined_score,
    corre_score,
    graph_density,
    score_batch,
)
from .similarity import (
    Embedding,
    EncoderDescriptor,
    RemoteEncoder,
    SimilarityMetric,
    SsimParams,
    cosine,
    embed,
    ssim,
)
from .theory import (
    BoundReport,
    verify_corollary1,
    verify_lemma1,
    verify_norm_bounds,
    verify_theorem1,
)
from .types import (
    GeneratedBatch,
    Image,
    ImageKind,
    Query,
    QueryMode,
    deserialize_image,
    serialize_image,
)

__version__ = "0.1.0"
