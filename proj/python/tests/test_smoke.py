import json
import os
from pathlib import Path

import pytest

import mwp

ROOT = Path(os.environ.get("MWP_SOURCE_DIR", Path(__file__).resolve().parents[2]))
TEMPLATES = ROOT / "data" / "templates"
LEXICON = ROOT / "data" / "lexicon.json"


@pytest.fixture(scope="module")
def generated():
    corpus, report = mwp.generate(TEMPLATES, LEXICON, per_template=5)
    return corpus, report


def test_expression_round_trip():
    e = mwp.parse_infix("(N1 + 3) * N2")
    assert e.infix() == "( N1 + 3 ) * N2"
    assert e.prefix() == ["*", "+", "N1", "3", "N2"]
    assert e.template() == "* + # # #"
    assert e.evaluate(["2", "5"]) == "25"
    assert mwp.parse_prefix("/ 5 3").evaluate() == "5/3"
    assert mwp.parse_prefix(" ".join(e.prefix())) == e
    with pytest.raises(mwp.ParseError):
        mwp.parse_infix("4 * ")


def test_generation_and_native_round_trip(generated):
    corpus, report = generated
    assert len(corpus) == 100
    assert report["problems"] == 100
    assert len(report["templates"]) == 20
    p = corpus[0]
    assert p.id == corpus.find(p.id).id
    assert p.seed_id is not None
    assert p.equation.operator_count() <= 2
    back = mwp.corpus_from_native(corpus.to_native(), name=corpus.name)
    assert back.fingerprint() == corpus.fingerprint()
    again, _ = mwp.generate(TEMPLATES, LEXICON, per_template=5, jobs=3)
    assert again.to_native() == corpus.to_native()
    assert mwp.validate_templates(TEMPLATES, LEXICON) == []


def test_statistics_and_folds(generated):
    corpus, _ = generated
    stats = mwp.template_stats(corpus)
    assert stats["problems"] == 100
    assert sum(n for _, n in stats["frequencies"]) == 100
    assert 0.0 <= mwp.lexical_diversity(corpus) <= 1.0
    folds = mwp.make_folds(corpus, "seed-grouped")
    assert sorted(i for f in folds for i in f) == list(range(100))


def test_baseline_probe_and_delta(generated):
    corpus, _ = generated
    report = mwp.cross_validate(corpus, "majority", folds="seed-grouped", jobs=2)
    assert report["accuracy"]["total"] == 100
    probe = mwp.noq_probe(corpus, "majority", folds="seed-grouped")
    assert probe["identity_holds"] is True
    delta = mwp.ablation_delta(report, corpus, "Invert Operation")
    assert delta["removed"] > 0
    assert delta["acc_full"]["total"] == delta["acc_remaining"]["total"] + delta["removed"]
    noq = mwp.remove_questions(corpus)
    assert noq.name.endswith("-noq") and noq[0].question == ""


def test_model_train_save_and_attention(generated, tmp_path):
    corpus, _ = generated
    model = mwp.train_model(corpus, "constrained", epochs=1, embedding=8, hidden=8, seed=3)
    assert json.loads(model.config_json())["epochs"] == 1
    path = tmp_path / "m.mwps"
    model.save(str(path))
    loaded = mwp.Model.load(str(path))
    assert loaded.predict(corpus) == model.predict(corpus)
    attention = json.loads(loaded.attention_json(corpus, 3))
    assert len(attention) == 100
    for step in attention[0]["steps"]:
        assert abs(sum(w for _, w in step["attention"]) - 1.0) < 1e-6
    report = json.loads(loaded.evaluate_json(corpus))
    assert report["accuracy"]["total"] == 100


def test_cli_entry_point(generated, tmp_path):
    code, out, err = mwp.run_cli(["generate", "--templates", str(TEMPLATES), "--lexicon", str(LEXICON),
                                  "--per-template", "2", "--output", str(tmp_path / "g.jsonl")])
    assert code == 0, err
    assert json.loads(out)["problems"] == 40
    code, _, _ = mwp.run_cli(["stats"])
    assert code == 2
