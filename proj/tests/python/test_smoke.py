import json
import os
import tempfile

import pytest

import pmn

TINY = json.dumps(
    {
        "scene": {
            "categories": 3,
            "attributes": 3,
            "relations": 4,
            "max_entities": 4,
            "grid": 3,
            "cat_width": 8,
            "att_width": 6,
            "pos_width": 8,
        },
        "model": {
            "hidden": 12,
            "embed": 8,
            "penultimate": 10,
            "attn": 8,
            "count_hidden": 10,
            "count_bins": 4,
            "cap_steps": 4,
        },
    }
)


@pytest.fixture(scope="module")
def engine():
    return pmn.Engine(TINY)


def test_version():
    assert pmn.__version__


def test_config_normalization_is_idempotent():
    once = pmn.normalize_config(TINY)
    assert pmn.normalize_config(once) == once
    with pytest.raises(pmn.ValueError):
        pmn.normalize_config('{"nope": 1}')


def test_questions_agree_with_the_oracle(engine):
    qs = engine.generate_questions("cnt", 50, seed=3)
    assert len(qs) == 50
    for q in qs:
        assert engine.oracle(q) == q["answer"]


def test_answer_returns_a_parseable_trace(engine):
    [q] = engine.generate_questions("cnt", 1, seed=5)
    pred, trace = engine.answer(q, with_trace=True)
    assert 0 <= pred < engine.answer_space("cnt")
    doc = json.loads(trace)
    assert doc["module"] == "cnt"
    assert len(doc["steps"]) == 1
    for group in doc["steps"][0]["groups"]:
        assert abs(sum(group["weights"]) - 1.0) < 1e-9


def test_training_reduces_loss_and_checkpoints_round_trip(engine):
    qs = engine.generate_questions("obj", 80, seed=7)
    metrics = engine.train("obj", qs[:60], qs[60:], epochs=3, seed=7)
    assert metrics["total"] == 20
    assert len(metrics["loss_curve"]) == 3
    assert metrics["loss_curve"][-1] < metrics["loss_curve"][0]

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "obj.ckpt")
        engine.save("obj", path)
        assert os.path.getsize(path) > 0
        engine.load("obj", path)
        again = engine.evaluate("obj", qs[60:])
        assert again["accuracy"] == metrics["accuracy"]


def test_grad_check_is_tight(engine):
    assert engine.grad_check("rel", seed=2) < 1e-4
