"""Speaker-sensitive response evaluation: metrics, training and experiments."""
import json

from ._core import *  # noqa: F401,F403
from ._core import synth_corpus as _synth_corpus
from ._core import train as _train


def synth_corpus(spec=None):
    """Returns (corpus, table, splits, responses) for a synthetic spec dict."""
    return _synth_corpus(json.dumps(spec or {}))


def train(train_corpus, valid_corpus, table, variant="ssrem", config=None, jobs=1):
    """Returns (params, epochs) where params is a ModelParams and epochs a list of dicts."""
    return _train(train_corpus, valid_corpus, table, variant, json.dumps(config or {}), jobs)
