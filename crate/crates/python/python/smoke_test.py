"""Smoke test for the xdoge_py extension.

Build and install first, e.g.

    pip install --no-build-isolation -e crates/python
    python crates/python/python/smoke_test.py
"""

import math

import xdoge_py as xd

SYNTH = """
vocab_size = 16
[generators.shared]
kind = "bigram"
seed = 5
[[source]]
language = "aa"
domain = "web"
documents = 50
doc_length = 50
generator = "shared"
[[source]]
language = "bb"
domain = "web"
documents = 50
doc_length = 50
generator = "shared"
[[source]]
language = "cc"
domain = "web"
documents = 50
doc_length = 50
noise = 1.0
"""


def main():
    p = xd.project_floor([0.05, 0.45, 0.50], 0.1)
    assert [round(x, 6) for x in p] == [0.1, 0.426316, 0.473684], p
    assert abs(xd.lr_at(5e-4, 500, 10_000, 500) - 5e-4) < 1e-18
    assert xd.kl_x100([0.5, 0.5], [0.5, 0.5]) == 0.0

    langs = xd.aggregate_languages({"en/oscar": 0.3, "en/wiki": 0.2, "eu/oscar": 0.5})
    assert math.isclose(langs["en"], 0.5) and math.isclose(langs["eu"], 0.5)
    avg = xd.average_sets([{"a": 0.7, "b": 0.3}, {"a": 0.3, "b": 0.7}])
    assert math.isclose(avg["a"], 0.5)

    rows = xd.plan({"gl": 0.15, "rest": 0.85}, {"gl": 210_000_000, "rest": 10**12}, 600 * 10**9)
    gl = next(r for r in rows if r["language"] == "gl")
    assert abs(gl["repetition"] - 428.6) < 0.1
    assert sum(r["demanded"] for r in rows) == 600 * 10**9

    corpus = xd.Corpus.synthetic(SYNTH, 1)
    assert corpus.k == 3 and corpus.document_count == 150
    cleaned, removed = corpus.dedup()
    assert cleaned.document_count + sum(removed.values()) == 150

    config = xd.XdogeConfig(steps=50, batch_instances=16, context_length=16, lr_peak=0.2, seed=3)
    traj = xd.run_xdoge(corpus, config)
    assert len(traj) == 51 and traj.steps()[-1] == 50
    assert all(abs(sum(traj.alpha(i).values()) - 1.0) < 1e-12 for i in range(len(traj)))
    smoothed = traj.smooth(25)
    assert min(smoothed.values()) >= 0.02 - 1e-12
    again = xd.run_xdoge(corpus, config)
    assert again.to_tsv() == traj.to_tsv()

    draws = corpus.sample({"aa": 0.5, "bb": 0.3, "cc": 0.2}, 100, 7)
    assert len(draws) == 100

    try:
        xd.project_floor([0.5, 0.5], 0.6)
    except ValueError:
        pass
    else:
        raise AssertionError("infeasible floor accepted")
    try:
        xd.XdogeConfig(stepz=3)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown field accepted")

    print("smoke test passed:", {k: round(v, 4) for k, v in smoothed.items()})


if __name__ == "__main__":
    main()
