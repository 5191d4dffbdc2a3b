"""Smoke test for the hirope_py extension.

Build and run from the repository root:

    cargo build --release -p hirope-py --features extension-module
    cp target/release/libhirope_py.so python/hirope_py.so
    python3 python/smoke_test.py
"""

import math
import os
import random
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import hirope_py as hp  # noqa: E402

SOURCE = '''import math


def area(r):
    return math.pi * r * r


class Shape:
    def scale(self, k):
        return k * 2
'''


def rope_oracle(q, k, delta, base):
    # Re(sum_j q_j conj(k_j) e^{i delta theta_j}) over interleaved pairs.
    d = len(q)
    total = 0.0
    for j in range(d // 2):
        theta = base ** (-2.0 * j / d)
        qc = complex(q[2 * j], q[2 * j + 1])
        kc = complex(k[2 * j], k[2 * j + 1])
        total += (qc * kc.conjugate() * complex(math.cos(delta * theta), math.sin(delta * theta))).real
    return total


def check(name, cond):
    print(f"{'ok  ' if cond else 'FAIL'} {name}")
    return cond


def main():
    rng = random.Random(0)
    cfg = hp.RotaryConfig(8)
    q = [rng.uniform(-1, 1) for _ in range(8)]
    k = [rng.uniform(-1, 1) for _ in range(8)]
    results = []

    s = hp.rope_score(q, k, 37, 5, cfg)
    results.append(check("rope score matches the complex oracle", abs(s - rope_oracle(q, k, 32, 10000.0)) < 1e-9))
    results.append(check("rope depends only on the offset", abs(s - hp.rope_score(q, k, 132, 100, cfg)) < 1e-9))

    strat = hp.Strategy.hirope([2, 2], 4)
    near = hp.pair_score(strat, q, k, hp.HierPos([0, 3], 3), hp.HierPos([0, 1], 1), cfg)
    results.append(check("inside the window hirope equals rope", abs(near - hp.rope_score(q, k, 3, 1, cfg)) < 1e-9))
    dists = hp.windowed_pair_distances(hp.HierPos([9, 2], 200), hp.HierPos([1, 6], 20), [2, 2], 4)
    # Pair order: the token level owns the lowest pairs; the coarse level sees (9 - 1) + (4 - 1).
    results.append(check("windowed distances", dists == [-4, -4, 11, 11]))

    rows = hp.attention_scores([q] * 3, [k] * 3, [hp.HierPos.flat(i) for i in range(3)], hp.Strategy.origin(), cfg)
    results.append(check("score matrix is lower triangular", [len(r) for r in rows] == [1, 2, 3]))

    rep = hp.reliable_split(4096, hp.RotaryConfig(128))
    results.append(check("reliable split fraction", abs(rep["fraction"] - math.log(4096 / (2 * math.pi)) / math.log(10000)) < 1e-12))

    seg = hp.segment(SOURCE)
    kinds = [x["kind"] for x in seg["segments"]]
    results.append(check("function-level segments", kinds == ["preamble", "function", "class"]))
    pos = hp.positions(SOURCE)
    results.append(check("positions are dense in global order", [p.global_index for p in pos] == list(range(len(pos)))))
    results.append(check("symbols", hp.extract_symbols(SOURCE) == ["area", "Shape", "scale"]))
    results.append(check("recall", hp.recall(["area"], ["area", "scale"]) == 0.5))
    results.append(check("edit similarity", abs(hp.edit_similarity("kitten", "sitting") - (1 - 3 / 7)) < 1e-12))

    lm = hp.TinyLM('{"layers": 1, "heads": 2, "head_dim": 8, "vocab": 20, "ff_dim": 16}', hp.Strategy.hirope([2, 2], 4))
    toks = list(range(10))
    nll, correct = lm.score(toks, [hp.HierPos([i // 4, i % 4], i) for i in range(10)])
    results.append(check("untrained model is near uniform", abs(sum(nll) / len(nll) - math.log(20)) < 0.1))
    task = '{"key_vocab": 2, "ident_vocab": 2, "body_vocab": 14, "segment_len_min": 8, "segment_len_max": 8, "sequences": 32}'
    losses = lm.train(0, '{"steps": 30, "batch_size": 4, "train_len": 32, "warmup": 3, "log_every": 0}', task)
    results.append(check("training lowers the loss", losses[-1] < losses[0]))
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ckpt.json")
        lm.save(path)
        again = hp.TinyLM.load(path)
        results.append(check("checkpoint round trip", again.forward(toks[:4], [hp.HierPos([0, i], i) for i in range(4)])
                             == lm.forward(toks[:4], [hp.HierPos([0, i], i) for i in range(4)])))
    flat = hp.TinyLM('{"layers": 1, "heads": 2, "head_dim": 8, "vocab": 20, "ff_dim": 16}')
    results.append(check("flat positions by default", len(flat.forward(toks)) == len(toks)))

    try:
        hp.RotaryConfig(7)
        results.append(check("odd head_dim rejected", False))
    except ValueError:
        results.append(check("odd head_dim rejected", True))

    print(f"{sum(results)}/{len(results)} checks passed")
    sys.exit(0 if all(results) else 1)


if __name__ == "__main__":
    main()
