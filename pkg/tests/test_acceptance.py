"""Acceptance criteria, one test (and one PASS/FAIL summary line) each.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed in the "acceptance criteria" section at the end of the session.
"""

import time

import numpy as np
import pytest

from engage.bench import run_bench
from engage.cli import FILES, main
from engage.config import load_config
from engage.features.assemble import Assembler, FeatureBatch, FeatureLayout, labels_of
from engage.features.similarity import cluster_members, jaccard
from engage.features.store import StoreConfig, build_store
from engage.metrics import average_precision, rce
from engage.model import EngageNet, InferenceNet, ModelConfig, gradient_check, train
from engage.partition import plan_pipeline
from engage.pipeline import featurize_plan, inference_store, stage_parts
from engage.sketch import SketchParams, encode_batch, fit_codec, raw_counts
from engage.synth import GeneratorConfig, generate_synthetic

from oracles import brute_average_precision, brute_rce, random_fixture, recount
from test_model import LAYOUT, separable, small_config

pytestmark = pytest.mark.slow


def test_latency_budget(acceptance):
    cfg = load_config(profile="bench")
    t0 = time.perf_counter()
    data = generate_synthetic(cfg.generator_config(), cfg.generator.seed)
    codec = fit_codec(data.token_embeddings,
                      SketchParams(cfg.sketch.depth, cfg.sketch.width, data.token_embeddings.shape[1],
                                   cfg.sketch.seed))
    p = cfg.partition
    plan = plan_pipeline(data.log, p.validation_days, p.k, p.eval_fraction, p.seed)
    store = inference_store(data.log, data.followers, plan, cfg.store_config())
    asm = Assembler(store, codec, FeatureLayout.for_codec(codec, cfg.store.language_vocab))

    # weights come from a short training run; latency does not depend on their values
    rng = np.random.default_rng(0)
    rows = rng.choice(plan.stage_rows(plan.stage2), size=2048, replace=False)
    recs = [data.log[i] for i in rows]
    mc = cfg.model_config()
    mc.epochs_stage1, mc.epochs_stage2 = 1, 0
    net, _ = train([(asm.assemble_many(recs), labels_of(recs))], [], mc, asm.layout)
    setup_s = time.perf_counter() - t0

    replay = [data.log[i] for i in plan.holdout_rows()]
    b = cfg.bench
    start = time.perf_counter()
    res = run_bench(InferenceNet(net), asm, replay, b.predictions, b.warmup, cpu=b.cpu)
    bench_s = time.perf_counter() - start

    ok = (
        res.n >= 10_000
        and res.p95 <= 6.0
        and res.p50 <= 4.0
        and bench_s < 300
        and len(store.similar_user_clusters) == 100_000
        and mc.hidden_width == 1500 and mc.hidden_layers == 3
        and codec.params.size == 16 * 64
    )
    acceptance(
        "latency budget", ok,
        f"n={res.n} p50={res.p50:.3f}ms (<=4) p95={res.p95:.3f}ms (<=6) max={res.max:.3f}ms "
        f"bench={bench_s:.1f}s (<300) setup={setup_s:.0f}s users={len(store.similar_user_clusters)} "
        f"alloc_growth={res.alloc_growth_bytes}B",
    )
    assert ok


def test_metric_oracles(acceptance):
    rng = np.random.default_rng(2021)
    worst_ap = worst_rce = 0.0
    for _ in range(1000):
        s, y = random_fixture(rng)
        worst_ap = max(worst_ap, abs(average_precision(s, y) - brute_average_precision(list(s), list(y))))
        worst_rce = max(worst_rce, abs(rce(s, y) - brute_rce(list(s), list(y))))
    worst_prior = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 500))
        y = (rng.random(n) < rng.uniform(0.01, 0.99)).astype(float)
        y[0], y[1] = 1, 0
        worst_prior = max(worst_prior, abs(rce(np.full(n, y.mean()), y)))
    ok = worst_ap <= 1e-12 and worst_rce <= 1e-12 and worst_prior < 1e-6
    acceptance("metric oracles", ok,
               f"1000 fixtures, max |AP err|={worst_ap:.1e}, max |RCE err|={worst_rce:.1e} (<=1e-12), "
               f"max |RCE(prior)|={worst_prior:.1e} (<1e-6)")
    assert ok


def test_count_feature_oracle(acceptance):
    data = generate_synthetic(GeneratorConfig(), seed=11)
    assert len(data.log) == 10_000
    t0 = time.perf_counter()
    store = build_store(data.log, data.followers)
    ref = recount(data.log)
    mismatches = 0
    checked = 0
    for name, table in ref.items():
        got = {k: tuple(v) for k, v in getattr(store, name).items()}
        checked += len(table)
        mismatches += sum(got.get(k) != v for k, v in table.items()) + len(set(got) - set(table))

    # similar-user clusters: every pair over the threshold joined, nothing else
    users = sorted(data.followers)
    members = cluster_members(store.similar_user_clusters)
    for cid, group in members.items():
        checked += 1
        if cid != min(group):
            mismatches += 1
    fol = data.followers
    for i, a in enumerate(users):
        fa = fol[a]
        if not fa:
            continue
        for b in users[i + 1:]:
            if jaccard(fa, fol[b]) >= 0.5:
                checked += 1
                mismatches += store.similar_user_clusters[a] != store.similar_user_clusters[b]

    # similar-user counts, per engagement pair, by looping over cluster members
    pair = ref["pair_counts"]
    for a, b in {(r.engaged_user, r.engaging_user) for r in data.log}:
        expected = [0, 0, 0, 0]
        for m in members[store.similar_user_clusters[a]]:
            if m != a:
                for r, c in enumerate(pair.get((m, b), (0, 0, 0, 0))):
                    expected[r] += c
        checked += 1
        mismatches += tuple(store.similar_counts(a, b)) != tuple(expected)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60
    acceptance("count-feature oracle", ok,
               f"{checked} entries on {len(data.log)} rows, {mismatches} mismatches, {elapsed:.1f}s (<60s)")
    assert ok


def test_sketch_properties(acceptance):
    rng = np.random.default_rng(3)
    emb = rng.standard_normal((2000, 16))
    codec = fit_codec(emb, SketchParams(16, 64, 16, seed=0))
    seqs = [rng.integers(0, 2000, size=int(rng.integers(0, 40))).tolist() for _ in range(10_000)]
    additive = all(
        np.array_equal(raw_counts(codec, a + b), raw_counts(codec, a) + raw_counts(codec, b))
        for a, b in zip(seqs[::2], seqs[1::2])
    )
    normed = encode_batch(codec, seqs, dtype=np.float64)
    shuffled = encode_batch(codec, [rng.permutation(s).tolist() for s in seqs], dtype=np.float64)
    permutation = np.array_equal(normed, shuffled)
    norms = np.linalg.norm(normed.reshape(len(seqs), 16, 64), axis=2)
    unit = np.all(np.isclose(norms, 0.0, atol=1e-12) | np.isclose(norms, 1.0, atol=1e-12))
    empty_ok = all(np.all(norms[i] == 0) == (len(s) == 0) for i, s in enumerate(seqs))

    # topic coherence on a three-topic vocabulary
    data = generate_synthetic(GeneratorConfig(n_topics=3, n_users=200, n_rows=400, n_tweets=200), seed=0)
    topic_codec = fit_codec(data.token_embeddings, SketchParams(16, 64, 16, seed=0))
    a = topic_codec.assignments
    i = rng.integers(0, len(a), 50_000)
    j = rng.integers(0, len(a), 50_000)
    keep = i != j
    collide = (a[i[keep]] == a[j[keep]]).mean(axis=1)
    same = data.token_topics[i[keep]] == data.token_topics[j[keep]]
    margin = collide[same].mean() - collide[~same].mean()

    ok = additive and permutation and unit and empty_ok and margin >= 0.05
    acceptance("sketch properties", ok,
               f"10000 sequences: additive={additive} permutation-invariant={permutation} "
               f"row norms in {{0,1}}={bool(unit and empty_ok)}; topic collision same={collide[same].mean():.3f} "
               f"cross={collide[~same].mean():.3f} margin={margin:.3f} (>=0.05)")
    assert ok


def _zero_sketch(b: FeatureBatch) -> FeatureBatch:
    return FeatureBatch(np.zeros_like(b.sketch), b.numeric, b.categorical, b.community_strengths)


def test_learning_lift_and_partitions(acceptance):
    # partition counts on the default (22-day) generator
    default = generate_synthetic(GeneratorConfig(), seed=1)
    plan = plan_pipeline(default.log, validation_days=1, k=10, eval_fraction=0.1, seed=0)
    n_days, n_parts = len(plan.stage1), len(plan.stage2)

    # labels depend on tweet topic through the generator's topic effect
    g = GeneratorConfig(n_users=1000, n_tweets=20_000, n_rows=30_000, n_days=8)
    data = generate_synthetic(g, seed=7)
    codec = fit_codec(data.token_embeddings, SketchParams(16, 64, g.embedding_dim, seed=0))
    lp = plan_pipeline(data.log, validation_days=2, k=10, eval_fraction=0.5, seed=0)
    chunks = featurize_plan(data.log, data.followers, codec, lp, StoreConfig())
    store = inference_store(data.log, data.followers, lp, StoreConfig())
    held = [data.log[i] for i in lp.holdout_rows()]
    asm = Assembler(store, codec)
    eval_batch, eval_y = asm.assemble_many(held), labels_of(held)
    mc = ModelConfig(hidden_width=256, lr=1e-4, epochs_stage1=3, epochs_stage2=3, seed=0)

    aps = {}
    for name, f in (("with", lambda b: b), ("without", _zero_sketch)):
        s1 = [(f(b), y) for b, y in stage_parts(chunks, lp.stage1)]
        s2 = [(f(b), y) for b, y in stage_parts(chunks, lp.stage2)]
        net, _ = train(s1, s2, mc, asm.layout)
        p = net.predict(f(eval_batch))
        aps[name] = [average_precision(p[:, r], eval_y[:, r]) for r in range(4)]
    lift = [w - o for w, o in zip(aps["with"], aps["without"])]
    ok = min(lift) >= 0.03 and n_days == 21 and n_parts == 10
    acceptance("learning lift", ok,
               f"AP with sketch {[round(v, 4) for v in aps['with']]} vs zeroed "
               f"{[round(v, 4) for v in aps['without']]}, lift {[round(v, 4) for v in lift]} (>=0.03 each, "
               f"{len(held)} held-out rows); day parts={n_days} (21), random parts={n_parts} (10)")
    assert ok


def test_gradient_check(acceptance):
    net = EngageNet(LAYOUT, small_config())
    batch, y = separable(24, seed=1)
    err = gradient_check(net, batch, y, n_checks=500)
    ok = err < 1e-4
    acceptance("gradient check", ok, f"max relative error {err:.2e} over 500 entries (<1e-4)")
    assert ok


def test_determinism(acceptance, tmp_path):
    stages = ("gen", "fit-sketch", "partition", "build-store", "featurize", "train", "predict", "eval")
    runs = [tmp_path / "first", tmp_path / "second"]
    for wd in runs:
        for stage in stages:
            assert main([stage, "-w", str(wd)]) == 0, stage
    outputs = ("predictions", "report", "report_text", "report_fine", "model")
    same = {k: (runs[0] / FILES[k]).read_bytes() == (runs[1] / FILES[k]).read_bytes() for k in outputs}
    ok = all(same.values())
    acceptance("determinism", ok,
               "desk profile gen->eval twice, byte-identical: " + ", ".join(f"{FILES[k]}={v}" for k, v in same.items()))
    assert ok
