"""End-to-end acceptance checks, one test per criterion.

Each test records a ``CRITERION k: PASS|FAIL ...`` line that is printed in the
pytest terminal summary, then asserts the criterion at its stated tolerance.
"""
import time

import numpy as np
import pytest

from graphgda.csbm import CsbmSpec, csbm_shift_preset, generate_csbm
from graphgda.fgw import fgw_distance, fgw_distance_bruteforce, fgw_distance_cg
from graphgda.gda import EvalLabels, run_direct, run_gradual
from graphgda.geodesic import exact_transform, generate_path, path_quality
from graphgda.gnn import (GCNModel, TrainConfig, entropy_confidence, forward, init_model,
                          loss_and_gradients, predict, train)
from graphgda.lowrank import LowRankConfig, solve_lowrank_fgw

from conftest import ACCEPTANCE_LINES, random_graph

SEEDS = (0, 1, 2, 3, 4)
T_SWEEP = (1, 2, 3, 5, 8)


def record(k, ok, detail):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------------------
# shared homophily-preset runs (criteria 5 and 7 reuse the transport plans)
# ---------------------------------------------------------------------------

_cache = {}


def homophily_pair(seed):
    key = ("pair", seed)
    if key not in _cache:
        src = generate_csbm(csbm_shift_preset("homophily", "source", seed))
        tgt = generate_csbm(csbm_shift_preset("homophily", "target", seed + 1))
        _cache[key] = (src, tgt)
    return _cache[key]


def homophily_plan(seed):
    key = ("plan", seed)
    if key not in _cache:
        src, tgt = homophily_pair(seed)
        res = solve_lowrank_fgw(src.without_labels(), tgt.without_labels(), 0.5,
                                LowRankConfig(seed=seed))
        _cache[key] = res.plan
    return _cache[key]


def gradual_accuracy(seed, T):
    key = ("gradual", seed, T)
    if key not in _cache:
        src, tgt = homophily_pair(seed)
        rep, _, _ = run_gradual(src, tgt.without_labels(), EvalLabels(tgt.labels), T,
                                LowRankConfig(seed=seed), TrainConfig(seed=seed), 0.5,
                                plan=homophily_plan(seed))
        _cache[key] = rep.final_target_accuracy
    return _cache[key]


def direct_accuracy(seed):
    key = ("direct", seed)
    if key not in _cache:
        src, tgt = homophily_pair(seed)
        rep, _ = run_direct(src, tgt.without_labels(), EvalLabels(tgt.labels),
                            TrainConfig(seed=seed))
        _cache[key] = rep.final_target_accuracy
    return _cache[key]


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_criterion_1_geodesic_linearity():
    s0 = CsbmSpec.from_homophily_degree(n=100, homophily=0.8, degree=40, seed=0)
    s1 = CsbmSpec.from_homophily_degree(n=100, homophily=0.2, degree=40, seed=1)
    g0, g1 = generate_csbm(s0).without_labels(), generate_csbm(s1).without_labels()
    t0 = time.perf_counter()
    path = generate_path(g0, g1, T=10, alpha=0.5, lr_cfg=LowRankConfig(rank=50))
    q = path_quality(path)
    wall = time.perf_counter() - t0
    ok = q.pearson is not None and q.pearson >= 0.95
    record(1, ok, f"pearson={q.pearson:.6f} over {len(q.pairs)} pairs (>= 0.95), "
                  f"{wall:.1f}s")
    assert ok


def test_criterion_2_equivalence_class():
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        g0, g1 = random_graph(rng, 10), random_graph(rng, 10)
        gt0, gt1 = exact_transform(g0, g1, fgw_distance_cg(g0, g1).coupling)
        worst = max(worst, fgw_distance(g0, gt0), fgw_distance(g1, gt1))
    ok = worst <= 1e-3
    record(2, ok, f"max d_FGW(G, G~) = {worst:.3g} over 5 pairs (<= 1e-3)")
    assert ok


def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(2024)
    gaps, ident = [], []
    for _ in range(20):
        n = int(rng.integers(1, 6))
        g0, g1 = random_graph(rng, n), random_graph(rng, n)
        gaps.append(fgw_distance_cg(g0, g1).distance - fgw_distance_bruteforce(g0, g1))
        ident.append(max(fgw_distance_cg(g0, g0).distance, fgw_distance_bruteforce(g0, g0)))
    ok = max(gaps) <= 1e-8 and max(ident) <= 1e-6
    record(3, ok, f"max(cg - brute) = {max(gaps):.3g} (<= 1e-8), "
                  f"max identical = {max(ident):.3g} (<= 1e-6)")
    assert ok


def test_criterion_4_lowrank_soundness():
    rng = np.random.default_rng(77)
    slack = []
    for _ in range(10):
        g0, g1 = random_graph(rng, 8), random_graph(rng, 8)
        lr = solve_lowrank_fgw(g0, g1, 0.5).cost
        slack.append(lr - fgw_distance_cg(g0, g1).distance)
    g0, g1 = random_graph(rng, 2), random_graph(rng, 2)
    # the full-rank limit is taken with the projection tolerance driven down too
    tight = LowRankConfig(rank=4, dykstra_tol=1e-12, dykstra_max_iters=10_000)
    full = solve_lowrank_fgw(g0, g1, 0.5, tight).cost
    gap = abs(full - fgw_distance_bruteforce(g0, g1))
    ok = min(slack) >= -1e-6 and gap <= 1e-4
    record(4, ok, f"min(lowrank - cg) = {min(slack):.3g} (>= -1e-6), "
                  f"2x2 full-rank gap = {gap:.3g} (<= 1e-4)")
    assert ok


@pytest.mark.slow
def test_criterion_5_gradual_beats_direct():
    direct = np.array([direct_accuracy(s) for s in SEEDS])
    gradual = np.array([gradual_accuracy(s, 3) for s in SEEDS])
    margin = 100 * (gradual.mean() - direct.mean())
    ok = margin >= 10.0
    record(5, ok, f"gradual {gradual.mean():.4f} +- {gradual.std():.4f} vs direct "
                  f"{direct.mean():.4f} +- {direct.std():.4f}: margin {margin:+.2f} points "
                  f"(>= +10)")
    assert ok


@pytest.mark.slow
def test_criterion_6_zero_shift():
    direct, gradual = [], []
    for seed in SEEDS:
        src, _ = homophily_pair(seed)
        ev = EvalLabels(src.labels)
        d, _ = run_direct(src, src.without_labels(), ev, TrainConfig(seed=seed))
        g, _, _ = run_gradual(src, src.without_labels(), ev, 3, LowRankConfig(seed=seed),
                              TrainConfig(seed=seed), 0.5)
        direct.append(d.final_target_accuracy)
        gradual.append(g.final_target_accuracy)
    gap = 100 * (np.mean(gradual) - np.mean(direct))
    ok = abs(gap) <= 5.0
    record(6, ok, f"gradual {np.mean(gradual):.4f} vs direct {np.mean(direct):.4f}: "
                  f"gap {gap:+.2f} points (|gap| <= 5)")
    assert ok


@pytest.mark.slow
def test_criterion_7_t_sweep_shape():
    acc = {T: float(np.mean([gradual_accuracy(s, T) for s in SEEDS])) for T in T_SWEEP}
    best = max(T_SWEEP, key=lambda T: (acc[T], -T))
    ok = best in (2, 3, 5) and acc[best] > acc[8]
    shown = ", ".join(f"T={T}: {acc[T]:.4f}" for T in T_SWEEP)
    record(7, ok, f"{shown}; argmax T={best} (want 2, 3 or 5 and > T=8)")
    assert ok


@pytest.mark.slow
def test_criterion_8_rank_scaling():
    src, tgt = homophily_pair(0)
    src, tgt = src.without_labels(), tgt.without_labels()
    walls = {}
    for r in (32, 64):
        t0 = time.perf_counter()
        generate_path(src, tgt, 3, 0.5, LowRankConfig(rank=r), measure_distance=False)
        walls[r] = time.perf_counter() - t0
    ratio = walls[64] / walls[32]
    ok = ratio <= 3.0
    record(8, ok, f"wall r=64 {walls[64]:.2f}s / r=32 {walls[32]:.2f}s = {ratio:.2f} (<= 3.0)")
    assert ok


def test_criterion_9_invariant_suite():
    failures = []

    def check(name, cond):
        if not cond:
            failures.append(name)

    rng = np.random.default_rng(9)
    # marginal feasibility of low-rank plans at the projection tolerance
    for n0, n1, r in ((6, 9, 3), (12, 7, 5), (20, 20, 20)):
        g0, g1 = random_graph(rng, n0), random_graph(rng, n1)
        cfg = LowRankConfig(rank=r, max_iters=30)
        plan = solve_lowrank_fgw(g0, g1, 0.5, cfg).plan
        errs = plan.marginal_errors(g0.marginal, g1.marginal)
        check(f"feasibility {n0}x{n1} r={r}", max(errs.values()) <= cfg.dykstra_tol)
        check(f"g floor {n0}x{n1}", np.all(plan.g >= plan.g_floor))

    # analytic vs central-difference gradient
    g = random_graph(rng, 6, 3, weighted=True)
    m = init_model(3, 2, TrainConfig(seed=1))
    m = GCNModel(m.weights, tuple(0.1 * rng.standard_normal(b.shape) for b in m.biases))
    y, w = rng.integers(0, 2, 6), rng.random(6)
    _, (gW, gb) = loss_and_gradients(m, g, y, w)
    parts = [a for W, b in zip(m.weights, m.biases) for a in (W, b)]
    analytic = np.concatenate([a.ravel() for W, b in zip(gW, gb) for a in (W, b)])
    flat = np.concatenate([p.ravel() for p in parts])

    def loss_at(v):
        out, k = [], 0
        for p in parts:
            out.append(v[k:k + p.size].reshape(p.shape))
            k += p.size
        return loss_and_gradients(GCNModel(tuple(out[0::2]), tuple(out[1::2])), g, y, w)[0]

    h = 1e-6
    numeric = np.array([(loss_at(flat + h * e) - loss_at(flat - h * e)) / (2 * h)
                        for e in np.eye(flat.size)])
    rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    check("gradient", rel <= 1e-4)

    # confidence bounds and extremes
    P = rng.dirichlet(np.ones(3), size=40)
    c = entropy_confidence(P)
    H = -np.sum(P * np.log(P), axis=1)
    check("confidence bounds", np.all((c >= 0) & (c <= 1)))
    check("confidence extremes", c[np.argmin(H)] == 1.0 and c[np.argmax(H)] == 0.0)

    # permutation equivariance / invariance
    g = random_graph(rng, 5, weighted=True)
    perm = rng.permutation(5)
    check("forward equivariance",
          np.allclose(forward(m, g.permuted(perm)), forward(m, g)[perm], atol=1e-12))
    g1 = random_graph(rng, 5)
    check("fgw invariance",
          abs(fgw_distance(g, g1) - fgw_distance(g.permuted(perm), g1)) <= 1e-6)

    # determinism per seed
    g0, g1 = random_graph(rng, 10), random_graph(rng, 8)
    a = solve_lowrank_fgw(g0, g1, 0.5, LowRankConfig(rank=4, max_iters=20, seed=3))
    b = solve_lowrank_fgw(g0, g1, 0.5, LowRankConfig(rank=4, max_iters=20, seed=3))
    check("lowrank determinism", np.array_equal(a.plan.Q0, b.plan.Q0))
    lab = rng.integers(0, 2, 10)
    ma = train(g0, lab, cfg=TrainConfig(epochs=40, seed=3))
    mb = train(g0, lab, cfg=TrainConfig(epochs=40, seed=3))
    check("train determinism", all(np.array_equal(x, z) for x, z in zip(ma.weights, mb.weights)))
    check("predict determinism", np.array_equal(predict(ma, g0)[1], predict(mb, g0)[1]))

    ok = not failures
    record(9, ok, f"gradient rel err {rel:.2e}; failed checks: {failures or 'none'}")
    assert ok
