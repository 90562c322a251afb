"""Math word problem corpora, artifact probes, models and challenge-set generation."""

import json as _json

from ._core import (
    Corpus,
    Expr,
    IngestError,
    Model,
    ParseError,
    Problem,
    TemplateError,
    corpus_from_native,
    generate as _generate,
    lexical_diversity,
    load_corpus,
    make_folds,
    parse_infix,
    parse_prefix,
    remove_questions,
    run_cli,
    validate_templates,
)
from . import _core

__all__ = [
    "Corpus",
    "Expr",
    "IngestError",
    "Model",
    "ParseError",
    "Problem",
    "TemplateError",
    "ablation_delta",
    "corpus_from_native",
    "cross_validate",
    "generate",
    "lexical_diversity",
    "load_corpus",
    "make_folds",
    "noq_probe",
    "parse_infix",
    "parse_prefix",
    "remove_questions",
    "run_cli",
    "template_stats",
    "train_model",
    "validate_templates",
]


def template_stats(corpus, canonicalize_commutative=False):
    return _json.loads(_core.template_stats_json(corpus, canonicalize_commutative))


def cross_validate(corpus, predictor="majority", folds="equal-five", jobs=1):
    """Execution-accuracy report; predictor is 'majority', 'gold' or a model snapshot path."""
    return _json.loads(_core.cross_validate_json(corpus, str(predictor), folds, jobs))


def noq_probe(corpus, predictor="majority", folds="equal-five", jobs=1):
    return _json.loads(_core.noq_probe_json(corpus, str(predictor), folds, jobs))


def ablation_delta(report, corpus, label):
    """report: an evaluation report dict as returned by cross_validate."""
    return _json.loads(_core.ablation_delta_json(_json.dumps(report), corpus, label))


def train_model(corpus, variant="constrained", validation_fraction=0.1, **hyperparameters):
    config = dict(hyperparameters, variant=variant)
    return Model.train(corpus, _json.dumps(config), validation_fraction)


def generate(templates, lexicon, per_template=50, seed=1, jobs=1, max_operators=2, name="generated"):
    """Returns (corpus, report dict)."""
    corpus, report = _generate(str(templates), str(lexicon), per_template, seed, jobs, max_operators, name)
    return corpus, _json.loads(report)
