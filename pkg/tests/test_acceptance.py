"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the pytest terminal summary (see
conftest.py).  Run standalone with ``python3 tests/test_acceptance.py``.
The training criteria (8-11) take roughly 20 minutes on one CPU core.
"""

import json
import math
import statistics
import time

import numpy as np
import pytest

from nrces import losses
from nrces.cli import main as cli_main
from nrces.data import (
    Sentence,
    SpanSample,
    ToyCorpusSpec,
    enumerate_spans,
    generate_toy_corpus,
    mask_entities,
    sample_negatives,
    span_count,
)
from nrces.evaluator import Prediction, score
from nrces.losses import LossVariant
from nrces.model import ModelParams, SpanBatch, backward, forward_batch
from nrces.trainer import TrainConfig, run_ablation_matrix, run_w_sweep, unseen_masked_probes

from oracles import brute_score, brute_spans, central_diff, rel_error

RESULTS: list[str] = []


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def random_case(rng):
    c = int(rng.choice([2, 3, 5]))
    return rng.uniform(-5, 5, c), int(rng.integers(c))


# -- toy experiment shared by criteria 8, 9 and 11 ------------------------------

TOY = ToyCorpusSpec(n_sentences=2500, vocab_size=200, n_types=2, entity_vocab_per_type=60, seed=0)
SEEDS = [1, 2, 3]


@pytest.fixture(scope="module")
def toy():
    corpus = generate_toy_corpus(TOY)
    assert len({t for s in corpus for t in s.tokens}) <= 200
    return corpus[:2000], corpus[2000:]


@pytest.fixture(scope="module")
def masked08(toy):
    train_c, dev = toy
    noisy, manifest = mask_entities(train_c, 0.8, seed=1)
    return noisy, manifest, dev


@pytest.fixture(scope="module")
def ablation(masked08):
    noisy, manifest, dev = masked08
    probe = unseen_masked_probes(noisy, manifest)[0]
    base = TrainConfig(w=5.0, epochs=30, probes=(probe,))
    start = time.perf_counter()
    out = run_ablation_matrix(noisy, dev, base, ["nrces", "wo_sigmoid"], SEEDS, keep_curves=True)
    out["elapsed"] = time.perf_counter() - start
    out["probe"] = probe
    return out


def _row(out, variant):
    return next(r for r in out["rows"] if r["variant"] == variant)


# -- criteria ------------------------------------------------------------------


def test_criterion_01_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        z, t = random_case(rng)
        b = float(rng.uniform(0.05, 1.0))
        kernels = [
            lambda x: losses.ce_loss_grad(x, t),
            lambda x: losses.sigmoid_term_grad(x, t),
            lambda x: losses.cs_loss_grad(x, t, b),
        ]
        kernels += [lambda x, v=v, pos=pos: losses.nrces_loss_grad(x, t if pos else 0, pos, b, v) for v in LossVariant for pos in (t != 0,)]
        for k in kernels:
            worst = max(worst, rel_error(k(z).grad, central_diff(lambda x: k(x).loss, z)))

    params = ModelParams.init(20, 3, dim=4, width_dim=3, hidden=8, max_width=10, seed=5)
    batch = SpanBatch(rng.integers(0, 20, 5), rng.integers(0, 20, 5), rng.integers(1, 11, 5))
    targets = np.array([0, 1, 2, 0, 1])
    for variant in LossVariant:
        cache = forward_batch(params, batch)
        grads = backward(params, batch, cache, losses.batch_loss_grad(cache.logits, targets, 0.6, variant)[1])
        for name, g in grads.items():
            base = getattr(params, name)

            def f(x, name=name, base=base):
                trial = params.copy()
                getattr(trial, name)[...] = x.reshape(base.shape)
                return losses.batch_loss_grad(forward_batch(trial, batch).logits, targets, 0.6, variant)[0].mean()

            worst = max(worst, rel_error(g, central_diff(f, base.ravel()).reshape(base.shape)))
    elapsed = time.perf_counter() - start
    report(1, worst < 1e-4 and elapsed < 10, f"max rel error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 10s)")


def test_criterion_02_ce_closed_form():
    rng = np.random.default_rng(202)
    mismatches = 0
    for _ in range(1000):
        z, t = random_case(rng)
        p = losses.softmax(z)
        expected = p - np.eye(p.size)[t]
        mismatches += not np.array_equal(losses.ce_loss_grad(z, t).grad, expected)
    report(2, mismatches == 0, f"{mismatches}/1000 draws differ from p - onehot")


def test_criterion_03_reductions():
    rng = np.random.default_rng(303)
    bad = {"cs(beta=1)==ce": 0, "nrces(pos)==ce": 0, "nrces(epoch 0)==ce": 0}

    def same(a, b):
        return a.loss == b.loss and np.array_equal(a.grad, b.grad)

    for _ in range(1000):
        z, t = random_case(rng)
        ce = losses.ce_loss_grad(z, t)
        bad["cs(beta=1)==ce"] += not same(losses.cs_loss_grad(z, t, 1.0), ce)
        tp = max(t, 1)
        bad["nrces(pos)==ce"] += not same(losses.nrces_loss_grad(z, tp, True, float(rng.uniform(1e-3, 1))), losses.ce_loss_grad(z, tp))
        b0 = losses.beta(0, float(rng.choice([2, 5, 10])))
        bad["nrces(epoch 0)==ce"] += not same(losses.nrces_loss_grad(z, t, t != 0, b0), ce)
    report(3, not any(bad.values()), ", ".join(f"{k}: {v} mismatches" for k, v in bad.items()))


def test_criterion_04_beta_schedule():
    ok_start = all(losses.beta(0, w) == 1.0 for w in (2, 5, 10))
    err = abs(losses.beta(5, 5) - math.exp(-1))
    dec = all(all(losses.beta(e + 1, w) < losses.beta(e, w) for e in range(200)) for w in (2, 5, 10))
    report(4, ok_start and err <= 1e-12 and dec, f"beta(0,w)=1: {ok_start}, |beta(5,5)-1/e|={err:.1e}, strictly decreasing: {dec}")


def test_criterion_05_span_enumeration():
    labels = ["NONE", "PER"]
    bad = 0
    for n in range(1, 13):
        s = Sentence([f"t{i}" for i in range(n)])
        for L in range(1, 13):
            got = [(x.begin, x.end) for x in enumerate_spans(s, L, labels)]
            bad += sorted(got) != sorted(brute_spans(n, L)) or len(got) != span_count(n, L)
    report(5, bad == 0, f"{bad}/144 (n, L) pairs disagree with the double loop")


def test_criterion_06_scorer():
    rng = np.random.default_rng(606)
    types = ["PER", "LOC"]
    bad = 0
    for _ in range(1000):
        n_sent = int(rng.integers(1, 4))
        gold = [sorted({(int(b), int(b + rng.integers(0, 2)), types[rng.integers(2)]) for b in rng.integers(1, 6, rng.integers(0, 4))}) for _ in range(n_sent)]
        preds = {(int(rng.integers(n_sent)), int(b), int(b + rng.integers(0, 2)), types[rng.integers(2)]) for b in rng.integers(1, 6, rng.integers(0, 10))}
        r = score(gold, [Prediction(*p, 1.0) for p in sorted(preds)])
        bad += (r.tp, r.fp, r.fn) != brute_score(gold, sorted(preds))
    report(6, bad == 0, f"{bad}/1000 instances disagree with the brute-force oracle")


def test_criterion_07_masking_and_sampling():
    sents = [Sentence(["a", "x"] * 10, [(2 * k + 1, 2 * k + 1, "PER") for k in range(10)]) for _ in range(100)]
    kept = sum(len(s.entities) for s in mask_entities(sents, 0.8, seed=7)[0])
    n_neg, n_pos = 10000, 50
    xs = [SpanSample(0, 1, 1, 0, False)] * n_neg + [SpanSample(1, 1, 1, 1, True)] * n_pos
    out = sample_negatives(xs, 0.5, seed=7)
    pos = sum(x.is_positive for x in out)
    neg = len(out) - pos
    sigma = math.sqrt(n_neg * 0.25)
    ok = abs(kept - 200) <= 38 and pos == n_pos and abs(neg - n_neg / 2) <= 3 * sigma
    report(7, ok, f"survivors {kept} (200 +/- 38); positives kept {pos}/{n_pos}; negatives kept {neg} (5000 +/- {3 * sigma:.0f})")


def test_criterion_08_nrces_beats_ce(ablation):
    nr, ce = _row(ablation, "nrces"), _row(ablation, "wo_sigmoid")
    gap = nr["median_f1"] - ce["median_f1"]
    minutes = ablation["elapsed"] / 60
    ok = gap >= 10 and minutes < 10
    report(8, ok, f"median F1 nrces {nr['median_f1']:.2f} vs CE {ce['median_f1']:.2f} (gap {gap:.2f} >= 10), {minutes:.1f} min (< 10)")


def test_criterion_09_nrces_more_stable(ablation):
    nr, ce = _row(ablation, "nrces"), _row(ablation, "wo_sigmoid")
    report(9, nr["std_f1"] < ce["std_f1"], f"std F1 nrces {nr['std_f1']:.2f} < CE {ce['std_f1']:.2f}")


def test_criterion_10_w_sensitivity(toy):
    train_c, dev = toy
    grid = run_w_sweep(train_c, dev, TrainConfig(epochs=30, mask_seed=1), [2, 5, 10], [0.3, 0.9], seeds=SEEDS)
    med = {(c["mask_prob"], c["w"]): c["median_f1"] for c in grid["cells"]}
    high = med[(0.9, 2.0)] >= med[(0.9, 10.0)]
    low = [med[(0.3, w)] for w in (2.0, 5.0, 10.0)]
    spread = max(low) - min(low)
    detail = (
        f"mask 0.9: w=2 {med[(0.9, 2.0)]:.2f} >= w=10 {med[(0.9, 10.0)]:.2f} (w=5 {med[(0.9, 5.0)]:.2f}); "
        f"mask 0.3: F1 {', '.join(f'{v:.2f}' for v in low)} spread {spread:.2f} < 5"
    )
    report(10, high and spread < 5, detail)


def test_criterion_11_probe_dynamics(ablation):
    key = ablation["probe"].key

    def drops(variant):
        out = []
        for curve in _row(ablation, variant)["curves"]:
            trace = [pt["probes"][key] for pt in curve]
            out.append(max(trace) - trace[-1])
        return out

    ce, nr = statistics.median(drops("wo_sigmoid")), statistics.median(drops("nrces"))
    report(11, ce >= 0.2 and nr <= 0.1, f"probe {key}: median max-final drop CE {ce:.3f} (>= 0.2), nrces {nr:.3f} (<= 0.1)")


def test_criterion_12_determinism(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    tiny = ["--epochs", "2", "--dim", "8", "--hidden", "8", "--max-width", "4"]
    commands = [
        ["gen", "--sentences", "80", "--min-len", "4", "--max-len", "8", "--seed", "1", "--out", "d"],
        ["mask", "--prob", "0.8", "--seed", "7", "d/train.jsonl", "d/noisy.jsonl"],
        ["train", "--train", "d/noisy.jsonl", "--dev", "d/dev.jsonl", "--probe", "0:1:1", "--out", "run", *tiny],
        ["eval", "--checkpoint", "run/checkpoint.json", "--corpus", "d/test.jsonl", "--threshold", "0.5", "--out", "rep.json"],
        ["ablate", "--train", "d/noisy.jsonl", "--dev", "d/dev.jsonl", "--variants", "nrces,wo_sigmoid", "--seeds", "1,2", "--out", "ab.json", *tiny],
        ["sweep", "--train", "d/train.jsonl", "--dev", "d/dev.jsonl", "--w", "2,10", "--mask", "0.3:0.9:0.6", "--out", "sw.json", *tiny],
    ]
    manifests = ["d/manifest.json", "d/noisy.jsonl.manifest.json", "run/manifest.json", "rep.json.manifest.json", "ab.json.manifest.json", "sw.json.manifest.json"]
    codes = [cli_main(c) for c in commands]

    def outputs():
        data = {}
        for m in manifests:
            for p in json.loads((tmp_path / m).read_text())["outputs"]:
                data[p] = (tmp_path / p).read_bytes()
        return data

    before = outputs()
    replay_codes = [cli_main(["replay", m]) for m in manifests]
    after = outputs()
    differ = sorted(p for p in before if before[p] != after[p])
    ok = codes == [0] * 6 and replay_codes == [0] * 6 and not differ
    report(12, ok, f"{len(before)} artifacts from 6 commands replayed; byte differences: {differ or 'none'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-q"]))
