"""Website fingerprinting and uniqueness analysis of encrypted DNS traffic."""

__version__ = "0.1.0"

from .traces import Dataset, DatasetError, SynthProfile, Trace, generate_synthetic, load_dataset, prefix, save_dataset  # noqa: E402
from .features import NGramFeaturizer, NGramKey, bursts, build_space, extract, vectorize  # noqa: E402
from .forest import RandomForest, load_forest, save_forest, top_k_features  # noqa: E402
from .evaluation import (  # noqa: E402
    OpenWorldConfig,
    compute_metrics,
    cross_dataset,
    cross_validate,
    export_confusion,
    make_classifier,
    open_world,
)
from .defenses import PaddingPolicy, PaddingTransformer, apply_padding, apply_to_dataset, derive_constant  # noqa: E402
from .uniqueness import conditional_entropy, entropy_curve, fourth_record_domain_length  # noqa: E402
from .censorship import Blacklist, RankingList, analyze, blocking_decision, domain_length  # noqa: E402
