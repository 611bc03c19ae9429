import json
import math
from pathlib import Path

import pytest

import rncascade as rc

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def test_bleu_hand_examples():
    five = ["calcified", "granuloma", "right", "upper", "lobe"]
    assert all(rc.bleu_n(five, five, n) == 1.0 for n in range(1, 5))
    assert rc.modified_precision(["the"] * 7, "the cat is on the mat".split(), 1) == 2 / 7
    assert rc.bleu_n(["a", "b"], ["a", "c"], 1) == 0.5
    scores, counts = rc.bleu_corpus([(["x", "y", "z"], ["x", "y", "z"])])
    assert counts == [1, 1, 1, 0]
    assert scores[:3] == [100.0, 100.0, 100.0]


def test_text_helpers():
    assert rc.split_terms("Opacity/lung/base/left, Calcified Granuloma") == [
        "opacity", "lung", "base", "left", "calcified granuloma"]
    assert rc.tokenize("Calcified Granuloma/right") == ["calcified", "granuloma", "right"]
    assert rc.disease_key(["small", "nodule", "right"]) == "nodule"


def test_term_stats_matches_golden():
    anns = [json.loads(l)["annotation"] for l in (FIXTURES / "stats_corpus" / "index.jsonl").read_text().splitlines()]
    assert rc.term_stats_tsv(anns) == (FIXTURES / "stats_golden.tsv").read_text()


def test_zero_weight_cells():
    d = 3
    zeros = [[0.0] * d for _ in range(d)]
    zb = [0.0] * d
    x, h, m = [[0.3, -2.0, 5.0]], [[1.5, -0.7, 3.0]], [[0.0] * d]
    hl, ml = rc.lstm_step(x, h, m, [zeros] * 4, [zeros] * 4, [zb] * 4)
    assert hl == [0.5 * v for v in h[0]]
    assert ml == [0.5 * math.tanh(0.5 * v) for v in h[0]]
    assert rc.gru_step(x, h, [zeros] * 3, [zeros] * 3, [zb] * 3) == [0.5 * v for v in h[0]]
    with pytest.raises(ValueError):
        rc.gru_step(x, h, [zeros] * 2, [zeros] * 3, [zb] * 3)


def test_clustering_and_projection():
    assert rc.cluster_count(414, 50) == 8
    assert rc.cluster_count(207, 50) == 4
    sizes = [414, 207, 79, 79, 79, 79, 60, 60, 60, 60, 60, 60, 60, 55, 41, 41, 41, 41, 18]
    assert round(rc.cluster_threshold(sizes)) == 170
    pts = [[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]]
    _, assignment, objective, converged = rc.kmeans(pts, 2, seed=3)
    assert converged
    assert assignment[0] == assignment[1] != assignment[2] == assignment[3]
    assert all(b <= a for a, b in zip(objective, objective[1:]))
    assert len(rc.pca_2d(pts)) == 4


def test_config_roundtrip_and_validation():
    cfg = rc.default_config()
    assert cfg["rnn_batch"] == 50 and cfg["rnn_layers"] == 2 and cfg["max_len"] == 5
    assert rc.config_hash(cfg) == rc.config_hash()
    with pytest.raises(ValueError):
        rc.config_hash({"no_such_key": 1})


def test_pipeline_stages_are_idempotent(tmp_path):
    cfg = {"synth_count": 300, "split_min_eval": 1, "mine_min_support": 5}
    p = rc.Pipeline(tmp_path, cfg)
    with pytest.raises(FileNotFoundError, match="run generate first"):
        p.eval(0)
    p.synth()
    p.split()
    p.mine()
    p.stats()
    assert p.executed == ["synth", "split", "mine", "stats"]
    again = rc.Pipeline(tmp_path, cfg)
    again.synth()
    again.mine()
    assert again.executed == []
    assert again.manifest()["config_hash"] == rc.config_hash(dict(rc.default_config(), **cfg))
    with pytest.raises(ValueError):
        rc.Pipeline(tmp_path, {"synth_count": 301})
    labels = json.loads((tmp_path / "iter0" / "labels.json").read_text())
    assert labels["iteration"] == 0 and "normal" in labels["labels"]
