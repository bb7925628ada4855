import json
import math
import random

import pytest

import drselect


def test_rrf_fuse_matches_hand_values():
    fused = drselect.rrf_fuse([["a", "b"], ["b", "c"]], k=60)
    assert [d for d, _ in fused] == ["b", "a", "c"]
    assert fused[0][1] == pytest.approx(1 / 62 + 1 / 61)
    assert fused[1][1] == pytest.approx(1 / 61)


def test_metrics():
    assert drselect.rbo(["a", "b", "c"], ["a", "b", "c"], p=0.9) == pytest.approx(1.0)
    assert drselect.ndcg_at_k(["x", "a"], {"a": 1}, k=10) == pytest.approx(1 / math.log2(3))
    assert drselect.kendall_tau({"a": 3, "b": 2, "c": 1}, {"a": 1, "b": 2, "c": 3}) == -1.0
    assert drselect.delta_e({"a": 0.5, "b": 0.4}, {"a": 0.0, "b": 1.0}) == pytest.approx(0.1)
    assert drselect.rank_scores({"b": 1.0, "a": 1.0, "c": 2.0}) == ["c", "a", "b"]


def test_predictors():
    assert drselect.wig([3, 2, 1], top_k=2) == pytest.approx(2.5)
    assert drselect.nqc([3, 1], top_k=2) == pytest.approx(1.0)
    assert drselect.sigma_max([10, 6, 4, 1]) == pytest.approx(0.25)
    assert drselect.binary_entropy([2, 1]) == pytest.approx(0.5822, abs=1e-4)
    assert drselect.smv([-1, 2], top_k=2) is None


def test_invalid_config_raises():
    with pytest.raises(ValueError):
        drselect.wig([1, 2], top_k=0)


def test_setwise_sort_with_python_comparator():
    hidden = [f"d{i}" for i in range(30)]
    items = hidden[:]
    random.Random(3).shuffle(items)
    calls = []

    def pick(group):
        calls.append(len(group))
        return min(range(len(group)), key=lambda i: hidden.index(group[i]))

    assert drselect.setwise_sort(items, 3, pick) == hidden
    assert len(calls) <= 2 * 30 * math.log2(30)


def test_parse_run():
    tag, run = drselect.parse_run("q1 Q0 d1 1 2.5 tagx\nq1 Q0 d2 2 1.5 tagx\n")
    assert tag == "tagx"
    assert run == {"q1": [("d1", 2.5), ("d2", 1.5)]}
    with pytest.raises(ValueError):
        drselect.parse_run("q1 Q0 d1\n")


def write_fixture(tmp_path):
    rng = random.Random(11)
    topics = [[f"t{t}w{i}" for i in range(12)] for t in range(6)]
    background = [f"bg{i}" for i in range(60)]
    with open(tmp_path / "corpus.jsonl", "w") as f:
        for d in range(80):
            words = [rng.choice(topics[d % 6]) if rng.random() < 0.5 else rng.choice(background) for _ in range(30)]
            f.write(json.dumps({"_id": f"d{d:03d}", "title": "", "text": " ".join(words)}) + "\n")
    pool = [{"dr_id": name, "backend": "lexical", "noise_sigma": s, "noise_seed": i + 1}
            for i, (name, s) in enumerate([("clean", 0.0), ("noisy", 2.0)])]
    (tmp_path / "pool.json").write_text(json.dumps(pool))


def test_select_larmor_end_to_end(tmp_path):
    write_fixture(tmp_path)
    ranking = drselect.select(tmp_path / "corpus.jsonl", tmp_path / "pool.json", tmp_path / "out",
                              seed=5, k=10, l=3, m=10)
    assert ranking[0][0] == "clean"
    again = drselect.select(tmp_path / "corpus.jsonl", tmp_path / "pool.json", tmp_path / "out2",
                            seed=5, k=10, l=3, m=10)
    assert again == ranking


def test_run_cli_usage_error():
    code, _, _ = drselect.run_cli(["select", "--method", "wig"])
    assert code == 2
