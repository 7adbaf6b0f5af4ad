"""Acceptance criteria, each at its stated tolerance.

Every check records one pass/fail line, printed at the end of the pytest run
(see ``pytest_terminal_summary`` in conftest.py).
"""

import time

import numpy as np
import pytest
from scipy.stats import rankdata

from ecogcrit.aggregate import AggregatorMlp, aggregator_input
from ecogcrit.evaluation import pr_auc, roc_auc, wilcoxon_signed_rank
from ecogcrit.features import region_one_hot
from ecogcrit.graph import clustering_coefficient, eigenvector_centrality, node_strength
from ecogcrit.mlp import MLP, LossSpec, bce, focal_loss
from ecogcrit.models import ClassifierSpec, class_weights, logreg_loss_grad, train_classifier
from ecogcrit.nmf import fit_nmf
from ecogcrit.pipeline import PipelineConfig, load_prepared, run_pipeline
from ecogcrit.signal import common_average_reference, high_gamma_envelope
from ecogcrit.synthgen import SynthConfig, generate_dataset

RESULTS = {}

BEST = dict(signal="high_gamma", features="region+connectivity", classifier=ClassifierSpec(kind="rbf_svm"), aggregation="mlp_hist_region", mode="loo")
LINEAR = ClassifierSpec(kind="linear_svm")
FULL = dict(n_subjects=8, electrodes_per_subject=64)  # default 50 words -> 400 trials per subject


def record(key, ok, detail):
    RESULTS[key] = (bool(ok), detail)
    assert ok, f"criterion {key}: {detail}"


def pooled_roc(res):
    return res.summary["pooled"]["roc_auc"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def separable(workdir):
    """Effect size 5 x noise_std, 8 subjects x 64 electrodes, with shared preprocessing."""
    root = generate_dataset(SynthConfig(effect_size=5.0, seed=0, **FULL), workdir / "ds_e5")
    return root


@pytest.fixture(scope="module")
def best_run(separable, workdir):
    cfg = PipelineConfig(dataset=str(separable), out=str(workdir / "best_t1"), cache_dir=str(workdir / "cache"), threads=1, **BEST)
    t0 = time.perf_counter()
    res = run_pipeline(cfg)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def prepared(separable, workdir, best_run):
    _, prep = load_prepared(PipelineConfig(dataset=str(separable), cache_dir=str(workdir / "cache")))
    return prep


def run_cell(root, workdir, prep, **kw):
    cfg = PipelineConfig(dataset=str(root), out=str(workdir / "cell"), cache_dir=str(workdir / "cache"), **kw)
    return run_pipeline(cfg, prep, write=False)


# ----------------------------------------------------------------- 1


def test_criterion_1_structural_targets(best_run):
    res, _ = best_run
    s = res.summary
    needed = all(s[block][m] is not None for block in ("pooled", "fold_mean") for m in ("roc_auc", "pr_auc"))
    ok = needed and len(s["folds"]) == 8 and all(f["roc_auc"] is not None for f in s["folds"])
    record("1", ok, "clinical numbers not reproducible; best configuration emits pooled and per-fold LOO ROC/PR as structural targets")


# ----------------------------------------------------------------- 2


def test_criterion_2_separable_run(best_run):
    res, seconds = best_run
    roc, pr = pooled_roc(res), res.summary["pooled"]["pr_auc"]
    ok = roc >= 0.90 and pr >= 0.70 and seconds < 600
    record("2", ok, f"pooled LOO ROC-AUC {roc:.3f} (>= 0.90), PR-AUC {pr:.3f} (>= 0.70), {seconds:.0f}s single-threaded (< 600s)")


# ----------------------------------------------------------------- 3


def test_criterion_3_null_control(workdir):
    aucs = []
    for seed in (0, 1, 2):
        root = generate_dataset(SynthConfig(effect_size=0.0, seed=seed, **FULL), workdir / f"null_{seed}")
        cfg = PipelineConfig(dataset=str(root), out=str(workdir / f"null_out_{seed}"), cache_dir=str(workdir / "cache"), **BEST)
        aucs.append(pooled_roc(run_pipeline(cfg, write=False)))
    ok = all(abs(a - 0.5) <= 0.10 for a in aucs)
    record("3", ok, "null ROC-AUC per seed " + ", ".join(f"{a:.3f}" for a in aucs) + " (each within 0.5 +/- 0.10)")


# ----------------------------------------------------------------- 4


def test_criterion_4_ablation_ordering(separable, workdir, prepared):
    # ablation setup: linear SVM with averaging aggregation, high-gamma signal
    auc = {}
    for mask in ("region+connectivity", "region", "connectivity"):
        auc[mask] = pooled_roc(run_cell(separable, workdir, prepared, features=mask, classifier=LINEAR, aggregation="average"))
    d_region = auc["region+connectivity"] - auc["region"]
    d_conn = auc["region+connectivity"] - auc["connectivity"]
    ok = d_region >= 0.03 and d_conn >= 0.03
    record(
        "4",
        ok,
        f"R+C {auc['region+connectivity']:.3f} vs region {auc['region']:.3f} (+{d_region:.3f}) "
        f"and connectivity {auc['connectivity']:.3f} (+{d_conn:.3f}); margin >= 0.03 each",
    )


# ----------------------------------------------------------------- 5


def test_criterion_5_aggregation_ordering(separable, workdir, prepared):
    # aggregation setup: high gamma, region + connectivity, linear SVM
    auc = {}
    for agg in ("average", "mlp_hist", "mlp_hist_region"):
        auc[agg] = pooled_roc(run_cell(separable, workdir, prepared, features="region+connectivity", classifier=LINEAR, aggregation=agg))
    inv1 = auc["mlp_hist"] - auc["mlp_hist_region"]
    inv2 = auc["average"] - auc["mlp_hist"]
    ok = inv1 <= 0.02 and inv2 <= 0.02
    record(
        "5",
        ok,
        f"mlp_hist_region {auc['mlp_hist_region']:.3f} >= mlp_hist {auc['mlp_hist']:.3f} >= average {auc['average']:.3f} "
        f"(largest inversion {max(inv1, inv2, 0.0):.3f} <= 0.02)",
    )


# ----------------------------------------------------------------- 6


def _brute_graph(W):
    L = len(W)
    strength = [sum(W[i][j] for j in range(L) if j != i) / (L - 1) for i in range(L)]
    clust = []
    for i in range(L):
        t = 0.0
        for j in range(L):
            for k in range(L):
                if len({i, j, k}) == 3:
                    t += (W[i][j] * W[i][k] * W[j][k]) ** (1 / 3)
        clust.append(t / ((L - 1) * (L - 2)))
    vals, vecs = np.linalg.eigh(np.array(W))
    return np.array(strength), np.abs(vecs[:, np.argmax(vals)]), np.array(clust)


def _pair_auc(s, y):
    pos = s[y == 1]
    neg = s[y == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (pos.size * neg.size)


def _sweep_ap(s, y):
    from fractions import Fraction

    n_pos = int(y.sum())
    ap, prev = Fraction(0), Fraction(0)
    for t in sorted(set(s.tolist()), reverse=True):
        sel = s >= t
        tp = int((sel & (y == 1)).sum())
        fp = int((sel & (y == 0)).sum())
        rec = Fraction(tp, n_pos)
        ap += (rec - prev) * Fraction(tp, tp + fp)
        prev = rec
    return float(ap)


def _enum_wilcoxon(d):
    ranks = rankdata(np.abs(d))
    n = d.size
    w = min(ranks[d > 0].sum(), ranks[d < 0].sum())
    codes = np.arange(2**n, dtype=np.int64)
    t_plus = ((codes[:, None] >> np.arange(n)) & 1) @ ranks
    return min(1.0, 2.0 * np.mean(t_plus <= w + 1e-9))


def test_criterion_6_formula_oracles():
    rng = np.random.default_rng(2024)
    graph_err = 0.0
    for _ in range(100):
        L = int(rng.integers(3, 11))
        A = np.triu(rng.random((L, L)), 1)
        W = A + A.T
        s, e, c = _brute_graph(W.tolist())
        graph_err = max(
            graph_err,
            np.abs(node_strength(W) - s).max(),
            np.abs(eigenvector_centrality(W).vector - e).max(),
            np.abs(clustering_coefficient(W) - c).max(),
        )
    roc_err = 0.0
    pr_exact = True
    for _ in range(100):
        n = int(rng.integers(10, 200))
        s = np.round(rng.random(n), 2)
        y = (rng.random(n) < 0.3).astype(int)
        y[:2] = [0, 1]
        roc_err = max(roc_err, abs(roc_auc(s, y) - _pair_auc(s, y)))
        pr_exact &= pr_auc(s, y) == _sweep_ap(s, y)
    wil_err = 0.0
    for n in range(5, 13):
        for _ in range(4):
            d = np.round(rng.normal(size=n), 1)
            d[d == 0] = 0.5
            wil_err = max(wil_err, abs(wilcoxon_signed_rank(d, np.zeros(n)).p_value - _enum_wilcoxon(d)))
    ok = graph_err <= 1e-10 and roc_err <= 1e-12 and pr_exact and wil_err <= 1e-12
    record(
        "6",
        ok,
        f"graph metrics max err {graph_err:.1e} (<= 1e-10), ROC max err {roc_err:.1e} (<= 1e-12), "
        f"PR exact {pr_exact}, Wilcoxon exact p max err {wil_err:.1e}",
    )


# ----------------------------------------------------------------- 7


def _fd_rel_err(fn, params, grads, h=1e-6):
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = fn()
            flat[i] = old - h
            down = fn()
            flat[i] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gf[i]) / max(abs(fd), abs(gf[i]), 1e-6))
    return worst


def test_criterion_7_numerical_checks():
    rng = np.random.default_rng(7)
    nmf_ok = True
    for k in range(20):
        X = rng.random((int(rng.integers(10, 80)), int(rng.integers(10, 80))))
        losses = np.array(fit_nmf(X, K=int(rng.integers(1, 6)), max_iters=150, tol=0.0, seed=k).loss_history)
        nmf_ok &= bool(np.all(np.diff(losses) <= 1e-12 * losses[:-1]))

    X = rng.normal(size=(12, 7))
    y = (rng.random(12) < 0.4).astype(float)
    net = MLP.init((7, 6, 5, 1), seed=0)
    loss = LossSpec("bce")
    _, g = net.loss_and_grads(X, y, loss)
    mlp_err = _fd_rel_err(lambda: net.loss_and_grads(X, y, loss)[0], net.params, g)

    agg = AggregatorMlp.build(seed=1)
    Z = np.array([aggregator_input(rng.random(20), region_one_hot(int(rng.integers(26)))) for _ in range(10)])
    yz = (rng.random(10) < 0.3).astype(float)
    _, g = agg.net.loss_and_grads(Z, yz, agg.loss)
    agg_err = _fd_rel_err(lambda: agg.net.loss_and_grads(Z, yz, agg.loss)[0], agg.net.params, g)

    w = class_weights(y.astype(int))
    coef = rng.normal(size=7)
    b = np.array([0.2])
    _, gc, gb = logreg_loss_grad(coef, b[0], X, y, w)
    lr_err = _fd_rel_err(lambda: logreg_loss_grad(coef, b[0], X, y, w)[0], [coef, b], [gc, np.array([gb])])

    Xs = rng.normal(size=(150, 5))
    ys = (Xs[:, 0] + 0.7 * rng.normal(size=150) > 0.5).astype(int)
    model = train_classifier(ClassifierSpec(kind="rbf_svm"), Xs, ys)
    gap = model.diagnostics["kkt_gap"]

    p = rng.uniform(1e-6, 1 - 1e-6, 1000)
    yy = (rng.random(1000) < 0.5).astype(float)
    focal_err = float(np.abs(focal_loss(p, yy, 0.0, 0.5) - 0.5 * bce(p, yy)).max())

    grad_err = max(mlp_err, agg_err, lr_err)
    ok = nmf_ok and grad_err < 1e-4 and gap < 1e-3 and focal_err <= 1e-12
    record(
        "7",
        ok,
        f"NMF monotone on 20 instances {nmf_ok}; FD rel err MLP {mlp_err:.1e}, aggregator {agg_err:.1e}, "
        f"logreg {lr_err:.1e} (< 1e-4); SMO KKT gap {gap:.1e} (< 1e-3); focal vs 0.5 BCE {focal_err:.1e}",
    )


# ----------------------------------------------------------------- 8


def test_criterion_8_dsp_checks():
    rng = np.random.default_rng(8)
    car = common_average_reference(rng.normal(size=(64, 2000)) * 100.0)
    car_err = float(np.abs(car.sum(axis=0)).max())
    fs, n = 512.0, 5120
    t = np.arange(n) / fs
    cut = int(round(n * 0.1))
    amp = 3.0
    env100 = high_gamma_envelope(amp * np.sin(2 * np.pi * 100.0 * t + 0.4), fs)[cut : n - cut]
    env10 = high_gamma_envelope(amp * np.sin(2 * np.pi * 10.0 * t + 0.4), fs)[cut : n - cut]
    in_err = float(np.abs(env100 - amp).max() / amp)
    out_rel = float(env10.max() / amp)
    ok = car_err < 1e-9 and in_err <= 0.02 and out_rel < 0.02
    record("8", ok, f"CAR max column sum {car_err:.1e} (< 1e-9); 100 Hz envelope rel err {in_err:.1e} (<= 2%); 10 Hz leakage {out_rel:.1e} (< 2%)")


# ----------------------------------------------------------------- 9


def test_criterion_9_determinism(best_run, separable, workdir):
    res, _ = best_run
    ref = (workdir / "best_t1" / "summary.json").read_bytes()
    # fresh cache, several threads
    cfg = PipelineConfig(dataset=str(separable), out=str(workdir / "best_t4"), cache_dir=str(workdir / "cache_t4"), threads=4, **BEST)
    run_pipeline(cfg)
    # rerun over the cached intermediates
    cfg2 = PipelineConfig(dataset=str(separable), out=str(workdir / "best_rerun"), cache_dir=str(workdir / "cache_t4"), threads=2, **BEST)
    run_pipeline(cfg2)
    same = ref == (workdir / "best_t4" / "summary.json").read_bytes() == (workdir / "best_rerun" / "summary.json").read_bytes()

    # a second configuration: cv8 with a trial-level MLP and the histogram-only aggregator
    small = generate_dataset(SynthConfig(n_subjects=3, electrodes_per_subject=32, n_words=4, seed=9), workdir / "ds_small")
    outs = []
    for threads in (1, 3):
        c = PipelineConfig(
            dataset=str(small),
            out=str(workdir / f"cv8_{threads}"),
            cache_dir=str(workdir / f"cache_cv8_{threads}"),
            features="all",
            classifier=ClassifierSpec(kind="mlp2", epochs=5),
            aggregation="mlp_hist",
            mode="cv8",
            seed=3,
            threads=threads,
        )
        run_pipeline(c)
        outs.append((workdir / f"cv8_{threads}" / "summary.json").read_bytes())
    same2 = outs[0] == outs[1]
    record("9", same and same2, f"summary.json byte-identical: best config 1 vs 4 threads vs cached rerun {same}; cv8/mlp2 1 vs 3 threads {same2}")


# ----------------------------------------------------------------- generator monotonicity


def test_generator_monotone_in_effect_size(workdir):
    """Mean LOO ROC-AUC over 3 seeds is non-decreasing over effect sizes {0, 1, 2, 5}, one inversion <= 0.02 allowed."""
    means = []
    for eff in (0.0, 1.0, 2.0, 5.0):
        aucs = []
        for seed in (0, 1, 2):
            root = generate_dataset(SynthConfig(effect_size=eff, seed=seed, n_words=3, **FULL), workdir / f"mono_{eff}_{seed}")
            cfg = PipelineConfig(dataset=str(root), out=str(workdir / "mono_out"), cache_dir=str(workdir / "cache"), **BEST)
            aucs.append(pooled_roc(run_pipeline(cfg, write=False)))
        means.append(float(np.mean(aucs)))
    drops = [a - b for a, b in zip(means, means[1:]) if b < a]
    ok = len(drops) <= 1 and all(d <= 0.02 for d in drops)
    record("synthgen", ok, "mean ROC-AUC at effect 0/1/2/5: " + ", ".join(f"{m:.3f}" for m in means))
