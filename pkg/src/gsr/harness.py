"""Training loop with warmup/early stopping, k-fold cross-validation, the four
experiment families and their result files."""

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gsr import datagen
from gsr import diffmath as dm
from gsr.metrics import MEASURES, metric_mae, sensitivity_srel
from gsr.models import (BIMP_FAMILY, MODEL_NAMES, Autoencoder, SrSample, ToyBatch, ToyModel,
                        build_model)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    max_epochs: int = 150
    warmup: int = 15
    patience: int = 5
    seed: int = 0

    @classmethod
    def from_experiment(cls, cfg, **kw):
        base = dict(batch_size=cfg.batch_size, lr=cfg.lr, max_epochs=cfg.max_epochs,
                    warmup=cfg.warmup, patience=cfg.patience, seed=cfg.seed)
        base.update(kw)
        return cls(**base)


@dataclass
class TrainResult:
    best_epoch: int
    best_val: float
    epochs_run: int
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# losses per model family
# ---------------------------------------------------------------------------

def _is_toy(model):
    return isinstance(model, ToyModel)


def batch_loss(model, items, training):
    """Mean objective over a batch: per-sample edge MAE, or MSE over a stacked toy batch."""
    if _is_toy(model):
        return model.loss(ToyBatch.stack(items))
    total = None
    for s in items:
        loss = model.loss(s, training=training)
        total = loss if total is None else dm.add(total, loss)
    return dm.scale(total, 1.0 / len(items))


def validation_loss(model, items):
    """Model-selection score: HR edge MAE for SR models, MSE for toy models."""
    if _is_toy(model):
        return float(model.loss(ToyBatch.stack(items)).item())
    return float(np.mean([edge_mae(model.predict(s), s.hr.adjacency) for s in items]))


def edge_mae(pred, truth):
    iu = np.triu_indices(len(truth), 1)
    return float(np.mean(np.abs(np.asarray(pred)[iu] - np.asarray(truth)[iu])))


def toy_mae(model, systems):
    return model.mae(ToyBatch.stack(systems))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_model(model, train, val, cfg):
    """Adam over mini-batches with validation-based early stopping.

    Epochs ``1..warmup`` are never candidates.  Afterwards the best validation
    epoch is tracked and training stops once ``patience`` epochs pass without
    improvement.  The model is left holding the best epoch's parameters (or the
    last epoch's when ``max_epochs <= warmup``).
    """
    if not train or not val:
        raise ValueError("training and validation sets must be non-empty")
    params = model.named_parameters()
    opt = dm.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 2])
    best_val, best_epoch, best_state, stale = math.inf, 0, None, 0
    history = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for b, start in enumerate(range(0, len(train), cfg.batch_size)):
            items = [train[i] for i in order[start:start + cfg.batch_size]]
            opt.zero_grad()
            with dm.Tape() as tape:
                loss = batch_loss(model, items, training=True)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
                tape.backward(loss)
            opt.step()
            losses.append(value)
        val_loss = validation_loss(model, val)
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.append((epoch, float(np.mean(losses)), val_loss))
        if epoch <= cfg.warmup:
            continue
        if val_loss < best_val:
            best_val, best_epoch, stale = val_loss, epoch, 0
            best_state = {k: p.value.copy() for k, p in params.items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_state is None:
        best_val, best_epoch = history[-1][2], epoch
    else:
        for k, p in params.items():
            p.value[...] = best_state[k]
    return TrainResult(best_epoch, best_val, epoch, history)


# ---------------------------------------------------------------------------
# splits and parallel execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldSplit:
    train: tuple
    val: tuple
    test: tuple


def kfold_splits(n, k=3, seed=0, val_fraction=0.2):
    """Seeded k-fold: each fold is the test set once; 20% of the rest is validation."""
    if n < k:
        raise ValueError(f"dataset of {n} samples is smaller than {k} folds")
    perm = np.random.default_rng([seed, 3]).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for f in range(k):
        rest = np.concatenate([folds[g] for g in range(k) if g != f])
        rest = np.random.default_rng([seed, 4, f]).permutation(rest)
        n_val = max(1, int(round(val_fraction * len(rest)))) if val_fraction > 0 else 0
        out.append(FoldSplit(tuple(int(i) for i in rest[n_val:]), tuple(int(i) for i in rest[:n_val]),
                             tuple(int(i) for i in folds[f])))
    return out


def worker_count():
    try:
        return max(1, int(os.environ.get("GSR_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, tasks):
    """Ordered map; uses a process pool when ``GSR_THREADS`` > 1."""
    tasks = list(tasks)
    workers = min(worker_count(), len(tasks))
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# k-fold runs for super-resolution models
# ---------------------------------------------------------------------------

def model_dims(cfg, n_l, n_h, in_dim):
    dims = dict(n_l=n_l, n_h=n_h, in_dim=in_dim, hidden=cfg.hidden, heads=cfg.heads,
                dropout=cfg.dropout, hr_init_scale=cfg.hr_init_scale)
    if cfg.lr_refine != "auto":
        dims["lr_refine"] = cfg.lr_refine == "on"
    return dims


def make_model(name, dims, seed):
    return build_model(name, seed, **dims)


def _fold_task(task):
    name, dims, samples, split, tcfg, keep_predictions = task
    model = make_model(name, dims, tcfg.seed)
    train = [samples[i] for i in split.train]
    val = [samples[i] for i in split.val]
    t0 = time.perf_counter()
    res = train_model(model, train, val, tcfg)
    preds = [model.predict(samples[i]) for i in split.test]
    test_mae = float(np.mean([edge_mae(p, samples[i].hr.adjacency)
                              for p, i in zip(preds, split.test)]))
    return {"best_epoch": res.best_epoch, "epochs_run": res.epochs_run, "val_mae": res.best_val,
            "test_mae": test_mae, "seconds": time.perf_counter() - t0,
            "predictions": preds if keep_predictions else None}


def run_kfold(samples, name, dims, tcfg, folds=3, val_fraction=0.2, keep_predictions=False):
    """Train and test ``name`` on every fold; returns per-fold dicts and the splits."""
    splits = kfold_splits(len(samples), folds, tcfg.seed, val_fraction)
    tasks = [(name, dims, samples, sp, tcfg, keep_predictions) for sp in splits]
    return parallel_map(_fold_task, tasks), splits


def mean_baseline_mae(samples, splits):
    """Test MAE of predicting the mean training edge weight, per fold."""
    out = []
    for sp in splits:
        train_vals = np.concatenate([_upper(samples[i].hr.adjacency) for i in sp.train])
        c = float(train_vals.mean())
        out.append(float(np.mean([np.mean(np.abs(_upper(samples[i].hr.adjacency) - c))
                                  for i in sp.test])))
    return out


def _upper(a):
    return a[np.triu_indices(len(a), 1)]


def to_samples(pairs):
    return [SrSample(p.lr, p.hr) for p in pairs]


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


class ResultWriter:
    """Writes ``runs_<family>.csv`` rows, the config manifest and timings."""

    def __init__(self, directory, cfg):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "manifest.txt"), "w") as fh:
            fh.write(cfg.echo())
        self.timings = {}
        self._files = {}

    def rows(self, family, header, rows):
        path = os.path.join(self.directory, f"runs_{family}.csv")
        new = family not in self._files
        with open(path, "w" if new else "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        self._files[family] = header

    def time(self, key, seconds):
        self.timings[key] = self.timings.get(key, 0.0) + seconds

    def close(self):
        with open(os.path.join(self.directory, "timings.json"), "w") as fh:
            json.dump(self.timings, fh, indent=1, sort_keys=True)


def _read_runs(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _mean_std(values):
    v = np.asarray([float(x) for x in values], dtype=np.float64)
    return float(v.mean()), float(v.std())


def report(directory):
    """Aggregate every ``runs_<family>.csv`` in ``directory`` into table CSVs.

    Returns the list of written table paths.
    """
    written = []
    builders = {"node_vs_edge": _table2, "simulated_sr": _table3, "connectome_sr": _table4,
                "sensitivity": _table5}
    for family, build in builders.items():
        path = os.path.join(directory, f"runs_{family}.csv")
        if not os.path.exists(path):
            continue
        name, header, rows = build(_read_runs(path), directory)
        out = os.path.join(directory, name)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        written.append(out)
    if not written:
        raise FileNotFoundError(f"{directory}: no runs_*.csv files to report")
    return written


def _unique(seq):
    seen = []
    for x in seq:
        if x not in seen:
            seen.append(x)
    return seen


def _table2(rows, _):
    models = _unique(r["model"] for r in rows)
    keys = _unique((r["row"], r["dataset"], r["edge_fn"]) for r in rows)
    header = ["row", "dataset", "edge_fn"]
    for m in models:
        header += [f"{m} mean", f"{m} std", f"{m} seeds"]
    out = []
    for key in keys:
        line = list(key)
        for m in models:
            vals = [r["test_mae"] for r in rows if (r["row"], r["dataset"], r["edge_fn"]) == key
                    and r["model"] == m]
            mean, std = _mean_std(vals)
            line += [mean, std, len(vals)]
        out.append(line)
    return "table2.csv", header, out


def _table3(rows, _):
    header = ["scenario", "model", "mean", "std", "folds"]
    out = []
    for sc in _unique(r["scenario"] for r in rows):
        for m in _unique(r["model"] for r in rows if r["scenario"] == sc):
            vals = [r["test_mae"] for r in rows if r["scenario"] == sc and r["model"] == m]
            mean, std = _mean_std(vals)
            out.append([sc, m, mean, std, len(vals)])
    return "table3.csv", header, out


def _table4(rows, _):
    header = ["model", "lr"] + [f"{m} mean" for m in MEASURES] + [f"{m} std" for m in MEASURES]
    out = []
    for m in _unique(r["model"] for r in rows):
        sel = [r for r in rows if r["model"] == m]
        if sel[0]["status"] != "ok":
            out.append([m, sel[0]["status"]] + [""] * (2 * len(MEASURES)))
            continue
        stats = [_mean_std([r[k] for r in sel]) for k in MEASURES]
        out.append([m, sel[0]["lr"]] + [s[0] for s in stats] + [s[1] for s in stats])
    return "table4.csv", header, out


def _table5(rows, _):
    runs = [r for r in rows if r["kind"] == "run"]
    refs = [r for r in rows if r["kind"] == "reference"]
    header = ["group", "model", "scale"] + [f"{m} mean" for m in MEASURES] + \
             [f"{m} std" for m in MEASURES]
    out = []
    for group in ("plain", "dual"):
        members = [m for m in _unique(r["model"] for r in runs)
                   if (m.startswith("Dual-") == (group == "dual"))]
        if not members:
            continue
        per_seed = {k: {} for k in MEASURES}
        for m in members:
            for sc in _unique(r["scale"] for r in runs if r["model"] == m):
                sel = [r for r in runs if r["model"] == m and r["scale"] == sc]
                stats = [_mean_std([r[k] for r in sel]) for k in MEASURES]
                out.append([group, m, sc] + [s[0] for s in stats] + [s[1] for s in stats])
                for k in MEASURES:
                    per_seed[k][(sc, m)] = [float(r[k]) for r in sel]
        srel = []
        for k in MEASURES:
            ref = [float(r[k]) for r in refs]
            try:
                srel.append(sensitivity_srel(per_seed[k], ref))
            except (ValueError, ZeroDivisionError):
                srel.append(float("nan"))
        out.append([group, "s_rel", ""] + srel + [""] * len(MEASURES))
    return "table5.csv", header, out


# ---------------------------------------------------------------------------
# experiment: node vs edge representation learning on particle graphs
# ---------------------------------------------------------------------------

def _particle_set(dataset, edge_fn, consts, seed, count, offset):
    return [datagen.gen_particles(dataset, edge_fn, consts, seed=[seed, offset + k])
            for k in range(count)]


def _toy_task(task):
    dataset, edge_fn, model_name, seed, cfg_d = task
    consts = datagen.EdgeConstants(G=cfg_d["gravity_d1"] if dataset == "D1" else cfg_d["gravity"],
                                   A=cfg_d["coef_a"], B=cfg_d["coef_b"],
                                   threshold=cfg_d["threshold"])
    data_seed = [cfg_d["seed"], seed, datagen.PARTICLE_DATASETS.index(dataset),
                 datagen.EDGE_FUNCTIONS.index(edge_fn)]
    data_seed = int(np.random.SeedSequence(data_seed).generate_state(1)[0])
    train = _particle_set(dataset, edge_fn, consts, data_seed, cfg_d["n_train"], 0)
    val = _particle_set(dataset, edge_fn, consts, data_seed, cfg_d["n_val"], cfg_d["n_train"])
    test = _particle_set(dataset, edge_fn, consts, data_seed, cfg_d["n_test"],
                         cfg_d["n_train"] + cfg_d["n_val"])
    model = ToyModel(model_name, seed=[cfg_d["seed"], seed, TOY_INDEX[model_name]])
    tcfg = TrainConfig(cfg_d["batch_size"], cfg_d["lr"], cfg_d["max_epochs"], cfg_d["warmup"],
                       cfg_d["patience"], seed)
    t0 = time.perf_counter()
    res = train_model(model, train, val, tcfg)
    return toy_mae(model, test), res.best_epoch, time.perf_counter() - t0


TOY_INDEX = {"Node": 0, "Node Large": 1, "Edge": 2, "Dual Edge": 3}


def run_node_vs_edge(cfg, writer=None):
    writer = writer or ResultWriter(cfg.output, cfg)
    cfg_d = cfg.as_dict()
    rows_spec = [tuple(r.split("/")) for r in cfg.particle_rows]
    for ds, fn in rows_spec:
        if ds not in datagen.PARTICLE_DATASETS or fn not in datagen.EDGE_FUNCTIONS:
            raise ValueError(f"bad particle row {ds}/{fn}")
    unique = _unique(rows_spec)
    tasks = [(ds, fn, m, s, cfg_d) for ds, fn in unique for m in cfg.toy_models
             for s in range(cfg.n_seeds)]
    results = dict(zip([(t[0], t[1], t[2], t[3]) for t in tasks], parallel_map(_toy_task, tasks)))
    header = ["row", "dataset", "edge_fn", "model", "seed", "test_mae", "best_epoch"]
    out = []
    for r, (ds, fn) in enumerate(rows_spec):
        for m in cfg.toy_models:
            for s in range(cfg.n_seeds):
                mae, best, secs = results[(ds, fn, m, s)]
                out.append([r, ds, fn, m, s, mae, best])
    for (ds, fn, m, s), (_, _, secs) in results.items():
        writer.time(f"node_vs_edge/{ds}/{fn}/{m}", secs)
    writer.rows("node_vs_edge", header, out)
    return writer


# ---------------------------------------------------------------------------
# experiment: simulated super-resolution
# ---------------------------------------------------------------------------

def scenario_from_config(name, cfg):
    emb = datagen.Node2VecConfig(dim=cfg.node2vec_dim, num_walks=cfg.num_walks, p=cfg.node2vec_p,
                                 q=cfg.node2vec_q, window=cfg.node2vec_window,
                                 negative=cfg.node2vec_negative, alpha=cfg.node2vec_alpha)
    return datagen.SrScenario.from_name(name, n_h=cfg.n_h, n_l=cfg.n_l, n_samples=cfg.n_samples,
                                        hr_walk_length=cfg.hr_walk_length,
                                        lr_walk_length=cfg.lr_walk_length, embedding=emb)


def load_or_generate(name, cfg):
    if cfg.data_dir:
        path = os.path.join(cfg.data_dir, name)
        if os.path.exists(os.path.join(path, datagen.MANIFEST)):
            return datagen.read_dataset(path)[1]
    sc = scenario_from_config(name, cfg)
    return datagen.generate_scenario(sc, cfg.seed)


def run_simulated_sr(cfg, writer=None, datasets=None):
    """3-fold CV of every configured model on every configured scenario.

    ``datasets`` may map scenario name → list of sample pairs to skip generation.
    """
    writer = writer or ResultWriter(cfg.output, cfg)
    header = ["scenario", "model", "fold", "test_mae", "val_mae", "best_epoch"]
    tcfg = TrainConfig.from_experiment(cfg)
    for name in cfg.scenarios:
        t0 = time.perf_counter()
        pairs = datasets[name] if datasets and name in datasets else load_or_generate(name, cfg)
        writer.time(f"simulated/{name}/data", time.perf_counter() - t0)
        samples = to_samples(pairs)
        in_dim = samples[0].lr.features.shape[1]
        dims = model_dims(cfg, samples[0].lr.n, samples[0].hr.n, in_dim)
        out = []
        splits = kfold_splits(len(samples), cfg.folds, cfg.seed, cfg.val_fraction)
        if cfg.baseline:
            for f, mae in enumerate(mean_baseline_mae(samples, splits)):
                out.append([name, "Mean baseline", f, mae, "", ""])
        for m in cfg.models:
            folds, _ = run_kfold(samples, m, dims, tcfg, cfg.folds, cfg.val_fraction)
            for f, r in enumerate(folds):
                out.append([name, m, f, r["test_mae"], r["val_mae"], r["best_epoch"]])
                writer.time(f"simulated/{name}/{m}", r["seconds"])
        writer.rows("simulated_sr", header, out)
    return writer


# ---------------------------------------------------------------------------
# experiment: connectome-shaped super-resolution
# ---------------------------------------------------------------------------

def connectome_pairs(cfg):
    if cfg.data_dir:
        return datagen.read_dataset(cfg.data_dir)[1]
    return datagen.connectome_standins(cfg.n_subjects, cfg.n_l, cfg.n_h, seed=cfg.seed)


def safe_metric_mae(pred, truth, seed, surrogates):
    """Metric row where undefined measures become NaN instead of raising."""
    return metric_mae(pred, truth, seed=seed, n_surrogates=surrogates, undefined="nan").as_row()


def _lr_candidates(cfg):
    return cfg.lr_search if cfg.lr_search else (cfg.lr,)


def select_lr_and_test(samples, name, dims, cfg):
    """Search the learning-rate set by mean validation edge MAE across folds.

    Returns ``(best_lr, fold_results, splits, search)`` where ``search`` maps
    every candidate lr to its mean validation MAE.
    """
    best = None
    search = {}
    for lr in _lr_candidates(cfg):
        tcfg = TrainConfig.from_experiment(cfg, lr=lr)
        folds, splits = run_kfold(samples, name, dims, tcfg, cfg.folds, cfg.val_fraction,
                                  keep_predictions=True)
        val = float(np.mean([f["val_mae"] for f in folds]))
        search[lr] = val
        if best is None or val < best[0]:
            best = (val, lr, folds, splits)
    return best[1], best[2], best[3], search


def run_connectome_sr(cfg, writer=None, pairs=None):
    writer = writer or ResultWriter(cfg.output, cfg)
    pairs = pairs if pairs is not None else connectome_pairs(cfg)
    samples = to_samples(pairs)
    dims = model_dims(cfg, samples[0].lr.n, samples[0].hr.n, samples[0].lr.features.shape[1])
    header = ["model", "status", "lr", "fold", "sample"] + list(MEASURES)
    search_rows = []
    for m in cfg.models:
        if m == "IMAN_adapted":
            writer.rows("connectome_sr", header, [[m, "not implemented", "", "", ""] +
                                                  [""] * len(MEASURES)])
            continue
        t0 = time.perf_counter()
        lr, folds, splits, search = select_lr_and_test(samples, m, dims, cfg)
        search_rows += [[m, cand, val] for cand, val in search.items()]
        out = []
        for f, (res, sp) in enumerate(zip(folds, splits)):
            for pred, i in zip(res["predictions"], sp.test):
                row = safe_metric_mae(pred, samples[i].hr.adjacency, cfg.seed, cfg.surrogates)
                out.append([m, "ok", lr, f, i] + list(row))
        writer.rows("connectome_sr", header, out)
        writer.time(f"connectome/{m}", time.perf_counter() - t0)
    writer.rows("connectome_lr_search", ["model", "lr", "mean_val_mae"], search_rows)
    return writer


# ---------------------------------------------------------------------------
# experiment: sensitivity to the HR initialisation scale
# ---------------------------------------------------------------------------

def _single_split(n, seed, val_fraction):
    return kfold_splits(n, 3, seed, val_fraction)[0]


def _sensitivity_task(task):
    name, dims, samples, split, tcfg, surrogates = task
    model = make_model(name, dims, tcfg.seed)
    train_model(model, [samples[i] for i in split.train], [samples[i] for i in split.val], tcfg)
    rows = [safe_metric_mae(model.predict(samples[i]), samples[i].hr.adjacency, tcfg.seed,
                            surrogates) for i in split.test]
    return tuple(float(np.nanmean(col)) if not np.all(np.isnan(col)) else float("nan")
                 for col in np.asarray(rows, dtype=np.float64).T)


def run_sensitivity(cfg, writer=None, pairs=None):
    """Bi-MP family × initialisation scales × seeds, plus one reference run per model.

    Every run uses the first cross-validation fold of the dataset as its
    train/validation/test split.
    """
    writer = writer or ResultWriter(cfg.output, cfg)
    pairs = pairs if pairs is not None else connectome_pairs(cfg)
    samples = to_samples(pairs)
    split = _single_split(len(samples), cfg.seed, cfg.val_fraction)
    base = model_dims(cfg, samples[0].lr.n, samples[0].hr.n, samples[0].lr.features.shape[1])
    tasks, keys = [], []
    for m in cfg.models:
        for scale in cfg.scales:
            for s in range(cfg.n_seeds):
                dims = dict(base, hr_init_scale=float(scale))
                tasks.append((m, dims, samples, split,
                              TrainConfig.from_experiment(cfg, seed=cfg.seed + s), cfg.surrogates))
                keys.append(("run", m, scale, s))
    for m in cfg.reference_models:
        if m == "IMAN_adapted":
            continue
        tasks.append((m, base, samples, split, TrainConfig.from_experiment(cfg), cfg.surrogates))
        keys.append(("reference", m, "", ""))
    t0 = time.perf_counter()
    results = parallel_map(_sensitivity_task, tasks)
    writer.time("sensitivity", time.perf_counter() - t0)
    header = ["kind", "model", "scale", "seed"] + list(MEASURES)
    writer.rows("sensitivity", header, [list(k) + list(r) for k, r in zip(keys, results)])
    return writer


# ---------------------------------------------------------------------------
# single-model training (the ``train`` subcommand)
# ---------------------------------------------------------------------------

def run_train(cfg):
    from gsr.models import save_checkpoint
    os.makedirs(cfg.output, exist_ok=True)
    if cfg.data_dir:
        pairs = datagen.read_dataset(cfg.data_dir)[1]
    else:
        pairs = datagen.generate_scenario(scenario_from_config(cfg.scenario, cfg), cfg.seed)
    samples = to_samples(pairs)
    split = _single_split(len(samples), cfg.seed, cfg.val_fraction)
    dims = model_dims(cfg, samples[0].lr.n, samples[0].hr.n, samples[0].lr.features.shape[1])
    model = make_model(cfg.model, dims, cfg.seed)
    res = train_model(model, [samples[i] for i in split.train], [samples[i] for i in split.val],
                      TrainConfig.from_experiment(cfg))
    ckpt = os.path.join(cfg.output, "model.ckpt")
    save_checkpoint(model, ckpt)
    with open(os.path.join(cfg.output, "history.csv"), "w") as fh:
        fh.write("epoch,train_loss,val_mae\n")
        for e, tr, va in res.history:
            fh.write(f"{e},{tr!r},{va!r}\n")
    with open(os.path.join(cfg.output, "manifest.txt"), "w") as fh:
        fh.write(cfg.echo())
        fh.write(f"best_epoch={res.best_epoch}\n")
    return model, res, ckpt


def evaluate_checkpoint(ckpt, data_dir, seed=0):
    """Per-sample metric rows for every pair in a dataset directory."""
    from gsr.models import load_checkpoint
    model = load_checkpoint(ckpt)
    _, pairs = datagen.read_dataset(data_dir)
    rows = []
    for k, s in enumerate(to_samples(pairs)):
        rows.append([k] + list(safe_metric_mae(model.predict(s), s.hr.adjacency, seed, 10)))
    return ["sample"] + list(MEASURES), rows


EXPERIMENT_RUNNERS = {
    "node_vs_edge": run_node_vs_edge,
    "simulated_sr": run_simulated_sr,
    "connectome_sr": run_connectome_sr,
    "sensitivity": run_sensitivity,
}


def run_experiment(cfg):
    """Run one experiment family, then aggregate its tables; returns the table paths."""
    writer = ResultWriter(cfg.output, cfg)
    EXPERIMENT_RUNNERS[cfg.experiment](cfg, writer)
    writer.close()
    return report(cfg.output)


__all__ = ["BIMP_FAMILY", "MODEL_NAMES", "Autoencoder", "NumericalError", "TrainConfig",
           "train_model", "kfold_splits", "run_kfold", "report", "run_experiment"]
