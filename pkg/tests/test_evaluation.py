import math

import numpy as np
import pytest

from fedpeft import backbone as bb
from fedpeft.backbone import Backbone, Instance
from fedpeft.evaluation import (
    EvalError,
    compare_scenarios,
    evaluate,
    fingerprint,
    read_table_csv,
    table_csv,
    table_json,
)
from fedpeft.peft import AdapterSpec, attach


def _always(cfg, letter):
    """Backbone whose head makes ``letter`` the most likely next token everywhere."""
    m = Backbone.init(cfg, 0)
    m.params["ln_f.gain"].data[:] = 0.0
    bias = np.zeros(cfg.d_model, np.float32)
    bias[0] = 1.0
    m.params["ln_f.bias"].data[:] = bias
    head = np.zeros_like(m.params["head"].data)
    head[bb.tokenize(letter)[0], 0] = 20.0
    m.params["head"].data[:] = head
    return m


def _items(golds, k=4):
    letters = "ABCDEFGH"[:k]
    return [Instance.from_text(f"question {i}", list(letters), g) for i, g in enumerate(golds)]


def test_three_of_four(tiny_config):
    res = evaluate(_always(tiny_config, "A"), _items([0, 0, 0, 1]))
    assert (res.n, res.correct, res.accuracy) == (4, 3, 0.75)
    assert sum(map(sum, res.confusion)) == 4
    assert res.confusion[1][0] == 1


def test_all_wrong(tiny_config):
    assert evaluate(_always(tiny_config, "A"), _items([1, 2, 3, 1])).accuracy == 0.0


def test_forced_candidate_zero(tiny_config):
    m = attach(_always(tiny_config, "A"), AdapterSpec())  # zero-effect adapter keeps the forcing
    assert evaluate(m, _items([0] * 10)).accuracy == 1.0


def test_empty_list_is_an_error(tiny_backbone):
    with pytest.raises(EvalError):
        evaluate(tiny_backbone, [])


def test_permutation_invariant_and_repeatable(tiny_backbone, synth_instances):
    a = evaluate(tiny_backbone, synth_instances)
    b = evaluate(tiny_backbone, synth_instances[::-1])
    assert a.accuracy == b.accuracy and a.confusion == b.confusion
    assert evaluate(tiny_backbone, synth_instances) == a


def test_chunking_does_not_change_result(tiny_backbone, synth_instances):
    assert evaluate(tiny_backbone, synth_instances, chunk=3) == evaluate(tiny_backbone, synth_instances)


def test_uninformed_model_is_near_chance(tiny_backbone):
    # golds drawn independently of the model: accuracy follows Binomial(n, 1/K)
    k, n = 4, 400
    golds = np.random.default_rng(11).integers(0, k, size=n)
    acc = evaluate(tiny_backbone, _items(golds.tolist(), k)).accuracy
    assert abs(acc - 1 / k) <= 3 * math.sqrt((1 / k) * (1 - 1 / k) / n)


# ------------------------------------------------------------------ comparison

def _rep(acc, fp="x", **kw):
    return {"accuracy": acc, "eval_fingerprint": fp, **kw}


def test_compare_fabricated_accuracies():
    row = compare_scenarios({"centralized": _rep(0.9), "federated": _rep(0.85, peft="lora"),
                             "single": _rep(0.7)})
    assert row["fed_minus_central"] == pytest.approx(-0.05)
    assert row["fed_minus_single"] == pytest.approx(0.15)
    assert row["peft"] == "lora"


def test_compare_identical_reports_zero_deltas():
    row = compare_scenarios({s: _rep(0.6) for s in ("centralized", "federated", "single")})
    assert row["fed_minus_central"] == 0.0 and row["fed_minus_single"] == 0.0


def test_compare_errors():
    with pytest.raises(EvalError, match="different evaluation"):
        compare_scenarios({"centralized": _rep(0.9, "a"), "federated": _rep(0.8, "b"), "single": _rep(0.7, "a")})
    with pytest.raises(EvalError, match="missing"):
        compare_scenarios({"centralized": _rep(0.9)})


def test_fingerprint_tracks_content(synth_instances):
    assert fingerprint(synth_instances) == fingerprint(list(synth_instances))
    assert fingerprint(synth_instances) != fingerprint(synth_instances[1:])


def test_table_roundtrip():
    rows = [compare_scenarios({"centralized": _rep(0.9), "federated": _rep(0.85, peft="lora", trainable_bytes=10),
                               "single": _rep(0.7)})]
    back = read_table_csv(table_csv(rows))
    assert float(back[0]["federated"]) == 0.85 and back[0]["trainable_bytes"] == "10"
    assert table_json(rows) == table_json(rows)
