"""rankforge: listwise learning-to-rank with gradient-boosted trees."""

from .dataset import (
    Dataset,
    QueryGroup,
    dump_letor,
    filter_no_relevant,
    from_arrays,
    load_letor,
    parse_letor,
    save_letor,
    split,
    synth_dataset,
)
from .gbrt import Ensemble, GBRTRanker, TrainConfig, load_model, save_model, train
from .metrics import dcg, delta_ndcg, mean_ndcg, ndcg, ranks_from_scores

__version__ = "0.1.0"

__all__ = [
    "Dataset", "QueryGroup", "parse_letor", "load_letor", "dump_letor", "save_letor",
    "split", "filter_no_relevant", "from_arrays", "synth_dataset", "Ensemble", "GBRTRanker",
    "TrainConfig", "train", "load_model", "save_model", "dcg", "ndcg", "mean_ndcg",
    "delta_ndcg", "ranks_from_scores",
]
