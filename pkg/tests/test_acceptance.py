"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line (also listed in pytest's terminal
summary).  Tolerances are pinned here and never adjusted to make a run pass.
Criteria 5, 6 and 8 reproduce whole experiments and are marked ``slow``.
"""
import csv
import filecmp
import itertools
import os
import time
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
import scipy.sparse.csgraph as csgraph

from conftest import grad_error, random_weighted, verdict
from gsr import cli, datagen
from gsr import diffmath as dm
from gsr import harness as h
from gsr import metrics
from gsr.config import make_config
from gsr.diffmath import DiffArray, Tape
from gsr.gnn import Neighborhood
from gsr.graphcore import WeightedGraph, build_dual, dual_to_primal
from gsr.models import BIMP_FAMILY, MODEL_NAMES, SrSample, ToyBatch, ToyModel, build_model
from gsr.models import DualEdgeInference, TOY_MODELS
from test_diffmath import CASES, case_reduce_sum
from test_gnn import make_layer
from test_metrics import exhaustive_paths

INVARIANCE_TOL = 1e-7
WITNESS_MIN = 1e-3
EQUIVARIANCE_TOL = 1e-9
GRAD_TOL = 1e-4
GRAD_INSTANCES = 20
METRIC_RTOL = 1e-9
METRIC_ATOL = 1e-12
MAJORITY = 10
BASELINE_MARGIN = 0.9
SE_DUAL_WINDOW = (2.5, 3.5)
BIMP_WINDOW = (1.6, 2.4)
TIMING_SIZES = (16, 24, 32, 48)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sr_sample(rng, n_l, n_h, in_dim):
    lr = WeightedGraph(random_weighted(n_l, rng), rng.normal(size=(n_l, in_dim)))
    return SrSample(lr, WeightedGraph(random_weighted(n_h, rng)))


def lr_permuted(sample, perm):
    a = sample.lr.adjacency[perm][:, perm]
    return SrSample(WeightedGraph(a, sample.lr.features[perm]), sample.hr)


def node_output(model, sample):
    return model.node_features(sample.x_l, sample.lr_nbhd).value


def dual_oracle(n):
    """Dual of K_n from pair intersections: (node count, degrees, edge count)."""
    pairs = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64).reshape(-1, 2)
    a, b = pairs[:, :1], pairs[:, 1:]
    share = (a == a.T) | (a == b.T) | (b == a.T) | (b == b.T)
    np.fill_diagonal(share, False)
    deg = share.sum(axis=1)
    return len(pairs), deg, int(deg.sum()) // 2


def test_criterion_1_dual_closed_forms():
    bad = []
    for n in range(2, 65):
        d = build_dual(n)
        m, deg, e = dual_oracle(n)
        closed = (n * (n - 1) // 2, 2 * (n - 2), n * (n - 1) * (n - 2) // 2)
        ok = (d.n_nodes == m == closed[0] and e == d.n_edges == closed[2]
              and np.all(d.degrees == closed[1]) and np.all(deg == closed[1]))
        sparsity = 1 - Fraction(len(d.indices), d.n_nodes ** 2)
        if n >= 39 and not sparsity > Fraction(9, 10):
            ok = False
        if not ok:
            bad.append(n)
    verdict(1, not bad, f"dual node/degree/edge counts and sparsity for n_h in 2..64; "
                        f"mismatches at {bad or 'none'}")


def test_criterion_2_dual_round_trip():
    rng = np.random.default_rng(2)
    failures = 0
    for k in range(100):
        n = int(rng.integers(2, 20))
        a = rng.normal(size=(n, n))
        a = a + a.T
        back = dual_to_primal(build_dual(n), build_dual(n, a).dual_features)
        off = ~np.eye(n, dtype=bool)
        failures += not np.array_equal(back[off], a[off])
    verdict(2, failures == 0, f"primal -> dual -> primal exact on {100 - failures}/100 "
                              f"random symmetric matrices")


def test_criterion_3_permutation_properties():
    dims = dict(n_l=6, n_h=10, in_dim=5, hidden=8, heads=2, dropout=0.0)
    rng = np.random.default_rng(3)
    sample = sr_sample(rng, 6, 10, 5)
    perms = [rng.permutation(6) for _ in range(20)]

    bimp = build_model("Bi-MP", seed=1, **dims)
    base = bimp.predict(sample)
    bimp_change = max(np.max(np.abs(bimp.predict(lr_permuted(sample, p)) - base)) for p in perms)

    witness = {}
    for name in ("MT", "Bi-LC"):
        model = build_model(name, seed=1, **dims)
        ref = node_output(model, sample)
        witness[name] = max(np.max(np.abs(node_output(model, lr_permuted(sample, p)) - ref))
                            for p in perms)

    layer_err = {}
    for kind in ("mpnn-uniform", "mpnn-attention", "transformer", "graphnorm"):
        worst = 0.0
        for trial in range(20):
            n = int(rng.integers(2, 12))
            adj = random_weighted(n, rng, 0.5)
            x = rng.normal(size=(n, 3))
            p = rng.permutation(n)
            layer = make_layer(kind, np.random.default_rng(trial))
            if kind == "graphnorm":
                out, out_p = layer(DiffArray(x)).value, layer(DiffArray(x[p])).value
            else:
                loops = kind == "transformer"
                out = layer(DiffArray(x), Neighborhood.from_adjacency(adj, loops)).value
                out_p = layer(DiffArray(x[p]),
                              Neighborhood.from_adjacency(adj[p][:, p], loops)).value
            worst = max(worst, float(np.max(np.abs(out_p - out[p]))))
        layer_err[kind] = worst

    ok = (bimp_change < INVARIANCE_TOL and all(v > WITNESS_MIN for v in witness.values())
          and all(v < EQUIVARIANCE_TOL for v in layer_err.values()))
    verdict(3, ok, f"Bi-MP max change {bimp_change:.1e} over 20 LR permutations (< 1e-7); "
                   f"witness MT {witness['MT']:.2e}, Bi-LC {witness['Bi-LC']:.2e} (> 1e-3); "
                   f"worst layer equivariance error {max(layer_err.values()):.1e} (< 1e-9)")


def _toy_case(kind, seed):
    systems = [datagen.gen_particles("D3", "E3", seed=[seed, k], n=10) for k in range(2)]
    model = ToyModel(kind, seed=seed)
    batch = ToyBatch.stack(systems)
    return list(model.named_parameters().values()), lambda: model.loss(batch)


def test_criterion_4_gradients():
    worst = {}
    for op, make in CASES.items():
        worst[op] = max(grad_error(*reversed(make(np.random.default_rng([seed, 4]))))
                        for seed in range(GRAD_INSTANCES))
    for axis in (None, 0, 1):
        worst[f"reduce_sum[{axis}]"] = max(
            grad_error(*reversed(case_reduce_sum(np.random.default_rng(seed), axis)))
            for seed in range(GRAD_INSTANCES))
    dims = dict(n_l=4, n_h=6, in_dim=3, hidden=4, heads=2, dropout=0.0)
    small_step = []
    for name in MODEL_NAMES + ("Autoencoder",):
        errs = []
        for seed in range(GRAD_INSTANCES):
            rng = np.random.default_rng([seed, 44])
            model = build_model(name, seed=seed, **dims)
            sample = sr_sample(rng, 4, 6, 3)
            params = list(model.named_parameters().values())
            errs.append(grad_error(lambda: model.loss(sample), params))
            if not errs[-1] < GRAD_TOL:
                # diagnostic only: a failure that vanishes at a smaller step sits
                # near a kink (ReLU zero or a min-max tie) rather than on a wrong derivative
                small_step.append(grad_error(lambda: model.loss(sample), params, h=1e-7)
                                  < GRAD_TOL)
        worst[name] = max(errs)
    for kind in TOY_MODELS:
        worst[f"toy {kind}"] = max(grad_error(*reversed(_toy_case(kind, seed)))
                                   for seed in range(GRAD_INSTANCES))
    failing = sorted(k for k, v in worst.items() if not v < GRAD_TOL)
    top = max(worst, key=worst.get)
    verdict(4, not failing, f"{len(worst)} ops/models x {GRAD_INSTANCES} instances at step 1e-5; "
                            f"worst relative error {worst[top]:.1e} ({top}); failing: "
                            f"{failing or 'none'}; {len(small_step)} failing model instances, "
                            f"{sum(small_step)} of them pass at step 1e-7")


def _close(got, want):
    return np.all(np.abs(np.asarray(got) - want) <= METRIC_RTOL * np.abs(want) + METRIC_ATOL)


def test_criterion_7_metric_oracles():
    rng = np.random.default_rng(7)
    graphs = [g for g in nx.graph_atlas_g() if 2 <= g.number_of_nodes() <= 7
              and g.number_of_edges() > 0]
    failures = {"betweenness": 0, "closeness": 0, "clustering": 0, "eigenvector": 0}
    eig_checked = 0
    for k, g in enumerate(graphs):
        a = nx.to_numpy_array(g)
        a = np.triu(a * rng.choice([0.25, 0.5, 1.0], size=a.shape) if k % 2
                    else a * rng.uniform(0.05, 1.0, size=a.shape), 1)
        a = a + a.T
        bc, close = exhaustive_paths(a)
        failures["betweenness"] += not _close(metrics.betweenness(a), bc)
        failures["closeness"] += not _close(metrics.closeness(a), close)
        wg = nx.from_numpy_array(a)
        cl = nx.clustering(wg, weight="weight")
        failures["clustering"] += not _close(metrics.clustering_coefficients(a),
                                             [cl[i] for i in range(len(a))])
        if csgraph.connected_components(a, directed=False)[0] == 1:
            eig_checked += 1
            vals, vecs = np.linalg.eigh(a)
            failures["eigenvector"] += not _close(metrics.eigenvector_centrality(a),
                                                  np.abs(vecs[:, -1]))
    zero = []
    for seed in range(3):
        pairs = datagen.connectome_standins(1, n_l=6, n_h=12, seed=seed)
        hr = pairs[0].hr
        report = metrics.metric_mae(hr, hr, seed=seed)
        zero.append(all(v == 0.0 for v in report.as_row()))
    ok = not any(failures.values()) and all(zero)
    verdict(7, ok, f"{len(graphs)} weighted atlas graphs (n<=7), eigenvector on {eig_checked} "
                   f"connected ones; failures {failures}; metric_mae(g, g) == 0 on "
                   f"{sum(zero)}/3 graphs")


def write_synthetic_sensitivity(directory):
    """3 scales x 2 models x 2 seeds; the worst cell is (100, Bi-LC) = [0, 6], std 3."""
    cells = {("1.0", "Bi-LC"): (1.0, 3.0), ("10.0", "Bi-LC"): (2.0, 2.0),
             ("100.0", "Bi-LC"): (0.0, 6.0), ("1.0", "Bi-MP"): (4.0, 5.0),
             ("10.0", "Bi-MP"): (1.0, 2.0), ("100.0", "Bi-MP"): (3.0, 3.0)}
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "runs_sensitivity.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "model", "scale", "seed"] + list(metrics.MEASURES))
        for (scale, model), vals in cells.items():
            for s, v in enumerate(vals):
                w.writerow(["run", model, scale, s] + [v] * len(metrics.MEASURES))
        # reference scores 0 and 8 have population std 4
        for model, v in (("MT", 0.0), ("Bi-LC", 8.0)):
            w.writerow(["reference", model, "", ""] + [v] * len(metrics.MEASURES))


@pytest.mark.slow
def test_criterion_8_sensitivity(tmp_path):
    write_synthetic_sensitivity(tmp_path / "synthetic")
    table = read_csv(h.report(tmp_path / "synthetic")[0])
    srel = [r for r in table if r["model"] == "s_rel"]
    hand = 3.0 / 4.0
    synthetic_ok = (len(srel) == 1
                    and all(float(srel[0][f"{m} mean"]) == hand for m in metrics.MEASURES))

    cfg = make_config({"n_l": 32, "n_h": 48, "n_subjects": 12,
                       "output": str(tmp_path / "full")}, "sensitivity")
    t0 = time.perf_counter()
    paths = h.run_experiment(cfg)
    minutes = (time.perf_counter() - t0) / 60
    runs = read_csv(tmp_path / "full" / "runs_sensitivity.csv")
    table = read_csv(paths[0])
    cells = [r for r in table if r["model"] != "s_rel"]
    shape_ok = (os.path.basename(paths[0]) == "table5.csv"
                and sum(r["kind"] == "run" for r in runs) == 6 * 3 * 5
                and len(cells) == 6 * 3
                and {r["model"] for r in cells} == set(BIMP_FAMILY)
                and {r["scale"] for r in cells} == {"1.0", "10.0", "100.0"}
                and [r["group"] for r in table if r["model"] == "s_rel"] == ["plain", "dual"])
    verdict(8, synthetic_ok and shape_ok,
            f"synthetic s_rel = {srel[0]['betweenness mean'] if srel else 'missing'} "
            f"(hand value 0.75); 6x3x5 protocol on 32/48 stand-in produced "
            f"{len(runs)} run rows and a {len(table)}-row table5.csv in {minutes:.1f} min")


def fit_exponent(sizes, seconds):
    return float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])


def median_time(fn, repeats=7):
    fn()
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def training_step(loss_fn):
    def step():
        with Tape() as tape:
            tape.backward(loss_fn())
    return step


def se_dual_seconds(n, rng):
    net = DualEdgeInference(16, 4, rng)
    x = DiffArray(rng.normal(size=(n, 16)), requires_grad=True)
    return median_time(training_step(lambda: dm.reduce_mean(net(x, training=True, rng=rng))))


def bimp_seconds(n, rng):
    n_l = n // 2
    model = build_model("Bi-MP", seed=0, n_l=n_l, n_h=n, in_dim=n_l, hidden=16, heads=4,
                        dropout=0.0)
    sample = sr_sample(rng, n_l, n, n_l)
    return median_time(training_step(lambda: model.loss(sample, training=True)))


def test_criterion_9_complexity():
    rng = np.random.default_rng(9)
    dual = [se_dual_seconds(n, rng) for n in TIMING_SIZES]
    bimp = [bimp_seconds(n, rng) for n in TIMING_SIZES]
    k_dual, k_bimp = fit_exponent(TIMING_SIZES, dual), fit_exponent(TIMING_SIZES, bimp)
    large = (128, 192, 256, 384)
    k_bimp_large = fit_exponent(large, [bimp_seconds(n, rng) for n in large])
    ok = (SE_DUAL_WINDOW[0] <= k_dual <= SE_DUAL_WINDOW[1]
          and BIMP_WINDOW[0] <= k_bimp <= BIMP_WINDOW[1])
    verdict(9, ok, f"training-step runtime exponent over n_h {TIMING_SIZES}: dual edge "
                   f"inference {k_dual:.2f} (window {SE_DUAL_WINDOW}), Bi-MP {k_bimp:.2f} "
                   f"(window {BIMP_WINDOW}); Bi-MP over n_h {large}: {k_bimp_large:.2f}")


def _run_twice(tmp_path, name, overrides, experiment, runner=None):
    """Run from two working directories with the same relative output path."""
    dirs = []
    for rep in ("a", "b"):
        work = tmp_path / rep / name
        work.mkdir(parents=True)
        cwd = os.getcwd()
        os.chdir(work)
        try:
            cfg = make_config(dict(overrides, output="out"), experiment)
            if runner is None:
                h.run_experiment(cfg)
            else:
                runner(cfg)
        finally:
            os.chdir(cwd)
        dirs.append(work / "out")
    files = sorted(f for f in os.listdir(dirs[0]) if f != "timings.json")
    same = sorted(f for f in os.listdir(dirs[1]) if f != "timings.json") == files
    _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], files, shallow=False)
    return same and not mismatch and not errors, len(files)


def test_criterion_10_determinism(tmp_path):
    fast = dict(max_epochs=3, warmup=1, patience=1, batch_size=4)
    tiny_data = dict(n_h=12, n_l=6, n_samples=9, num_walks=3, hr_walk_length=8,
                     lr_walk_length=4, hidden=4, heads=2)

    def gen(cfg):
        cfg_file = tmp_path / "data.cfg"
        cfg_file.write_text("".join(f"{k}={v}\n" for k, v in tiny_data.items()))
        assert cli.main(["gen-data", "sbm-participation", "--seed", "3", "--n-samples", "5",
                         "--config", str(cfg_file), "--out", cfg.output]) == 0

    checks = {
        "node_vs_edge": _run_twice(tmp_path, "nve", dict(fast, n_seeds=2, n_train=4, n_val=2,
                                                         n_test=2), "node_vs_edge"),
        "simulated_sr": _run_twice(tmp_path, "sim", dict(fast, **tiny_data,
                                                         scenarios=("ws-betweenness",),
                                                         models=("MT", "Dual-Bi-MP_learned",
                                                                 "Autoencoder")),
                                   "simulated_sr"),
        "connectome_sr": _run_twice(tmp_path, "con", dict(fast, n_l=6, n_h=8, n_subjects=9,
                                                          hidden=4, surrogates=2,
                                                          models=("Bi-LC", "Dual-MT")),
                                    "connectome_sr"),
        "sensitivity": _run_twice(tmp_path, "sen", dict(fast, n_l=6, n_h=8, n_subjects=9,
                                                        hidden=4, n_seeds=2, surrogates=2,
                                                        reference_models=("MT", "Bi-MP")),
                                  "sensitivity"),
        "gen-data": _run_twice(tmp_path, "gen", tiny_data, "simulated_sr", runner=gen),
    }
    ok = all(same for same, _ in checks.values())
    verdict(10, ok, "byte-identical reruns: " + ", ".join(
        f"{k} ({n} files) {'same' if same else 'DIFFERENT'}" for k, (same, n) in checks.items()))


@pytest.mark.slow
def test_criterion_5_node_vs_edge(tmp_path):
    cfg = make_config({"output": str(tmp_path), "particle_rows": ("D1/E1", "D2/E1", "D3/E3")},
                      "node_vs_edge")
    t0 = time.perf_counter()
    h.run_experiment(cfg)
    minutes = (time.perf_counter() - t0) / 60
    runs = read_csv(tmp_path / "runs_node_vs_edge.csv")

    def mae(row, model):
        return {int(r["seed"]): float(r["test_mae"]) for r in runs
                if r["dataset"] + "/" + r["edge_fn"] == row and r["model"] == model}

    wins = {}
    for row in ("D2/E1", "D3/E3"):
        node, edge = mae(row, "Node"), mae(row, "Edge")
        wins[row] = sum(edge[s] < node[s] for s in node)
    means = {m: float(np.mean(list(mae("D1/E1", m).values()))) for m in cfg.toy_models}
    d1_best = min(means, key=means.get)
    ok = all(w >= MAJORITY for w in wins.values()) and d1_best == "Node"
    verdict(5, ok, f"Edge beats Node in {wins['D2/E1']}/15 seeds on D2/E1 and "
                   f"{wins['D3/E3']}/15 on D3/E3 (need >= {MAJORITY}); lowest mean on D1/E1 is "
                   f"{d1_best} ({', '.join(f'{m} {v:.4f}' for m, v in means.items())}); "
                   f"{minutes:.1f} min")


@pytest.mark.slow
def test_criterion_6_simulated_sanity(tmp_path):
    models = MODEL_NAMES + ("Autoencoder",)
    cfg = make_config({"output": str(tmp_path), "scenarios": ("sbm-degree",), "models": models},
                      "simulated_sr")
    t0 = time.perf_counter()
    h.run_experiment(cfg)
    minutes = (time.perf_counter() - t0) / 60
    runs = read_csv(tmp_path / "runs_simulated_sr.csv")
    mean = {m: float(np.mean([float(r["test_mae"]) for r in runs if r["model"] == m]))
            for m in models + ("Mean baseline",)}
    baseline = mean["Mean baseline"]
    losers = [m for m in models if not mean[m] <= BASELINE_MARGIN * baseline]
    ok = not losers and mean["Bi-MP"] <= mean["MT"]
    best = min(models, key=mean.get)
    verdict(6, ok, f"baseline MAE {baseline:.4f}; best model {best} {mean[best]:.4f}; "
                   f"{len(models) - len(losers)}/{len(models)} models at least 10% below "
                   f"baseline; Bi-MP {mean['Bi-MP']:.4f} vs MT {mean['MT']:.4f}; "
                   f"{minutes:.1f} min")
