"""Python access to the annotation cascade core."""

import json

from . import _core
from ._core import (
    ConfigError,
    DataError,
    MissingArtifactError,
    NumericError,
    ShapeError,
    UsageError,
    bleu_n,
    cluster_count,
    cluster_threshold,
    disease_key,
    gru_step,
    kmeans,
    lstm_step,
    modified_precision,
    pca_2d,
    split_terms,
    term_stats_tsv,
    tokenize,
    version,
)


def default_config():
    return json.loads(_core.default_config())


def config_hash(config=None):
    return _core.config_hash(json.dumps(config) if config else "")


def bleu_corpus(pairs, include_seed=True):
    """(candidate, reference) token-list pairs -> (scores, counts) for BLEU-1..4."""
    return _core.bleu_corpus([(list(c), list(r)) for c, r in pairs], include_seed)


class Pipeline:
    """Stage runner over one output directory; `config` is a dict of overrides."""

    def __init__(self, out, config=None, force=False):
        cfg = default_config()
        cfg.update(config or {})
        self._p = _core.Pipeline(str(out), json.dumps(cfg), force)

    def __getattr__(self, name):
        return getattr(self._p, name)

    def manifest(self):
        return json.loads(self._p.manifest())
