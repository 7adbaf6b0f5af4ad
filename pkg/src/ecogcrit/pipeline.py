"""End-to-end two-stage pipeline: preprocess -> features -> trial classifier ->
electrode aggregation -> evaluation, with content-hashed caching."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import (
    AGG_METHODS,
    N_BINS,
    ElectrodeVerdict,
    aggregator_input,
    train_aggregator_mlp,
    write_verdicts,
)
from .dataset import Dataset, Label, load_dataset
from .errors import ConfigurationError, EcogCritError, StageError
from .evaluation import (
    ElectrodeKey,
    EvalReport,
    build_report,
    grid_product,
    make_folds,
    select_threshold_max_f1,
    write_curve_csv,
)
from .features import FeatureScaler, feature_matrix, mask_name, resolve_mask
from .graph import batch_connectivity, graph_metrics
from .models import ClassifierSpec, predict_trial_scores, train_classifier
from .nmf import fit_nmf, nmf_correlation_matrix
from .signal import SignalKind, preprocess_recording
from .synthgen import SynthConfig, generate_dataset

log = logging.getLogger(__name__)

CACHE_VERSION = "2"


@dataclass(frozen=True)
class NmfSettings:
    K: int = 5
    max_iters: int = 500
    tol: float = 1e-5
    max_columns: int = 5000


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str = "dataset"
    signal: str = "high_gamma"
    features: str = "region+connectivity"
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    aggregation: str = "mlp_hist_region"
    mode: str = "loo"
    seed: int = 0
    out: str = "out"
    cache_dir: str | None = None
    inner_folds: int = 4
    agg_epochs: int = 20
    agg_lr: float = 1e-3
    agg_batch_size: int = 8
    gamma_f: float = 2.0
    alpha_f: float = 0.83
    nmf: NmfSettings = field(default_factory=NmfSettings)
    synth: SynthConfig | None = None
    threads: int = 1

    def __post_init__(self):
        try:
            SignalKind(self.signal)
        except ValueError as exc:
            raise ConfigurationError(f"signal must be 'raw' or 'high_gamma', got {self.signal!r}") from exc
        try:
            resolve_mask(self.features)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        if self.aggregation not in AGG_METHODS:
            raise ConfigurationError(f"aggregation must be one of {AGG_METHODS}, got {self.aggregation!r}")
        if self.mode not in ("loo", "cv8"):
            raise ConfigurationError(f"mode must be 'loo' or 'cv8', got {self.mode!r}")
        if self.inner_folds < 2:
            raise ConfigurationError("inner_folds must be >= 2")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "PipelineConfig":
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        try:
            if isinstance(d.get("classifier"), dict):
                d["classifier"] = ClassifierSpec.from_dict(d["classifier"])
            elif isinstance(d.get("classifier"), str):
                d["classifier"] = ClassifierSpec(kind=d["classifier"])
            if isinstance(d.get("nmf"), dict):
                d["nmf"] = NmfSettings(**d["nmf"])
            if isinstance(d.get("synth"), dict):
                d["synth"] = SynthConfig.from_dict(d["synth"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid config: {exc}") from exc
        if base is not None:
            for key in ("dataset", "out", "cache_dir"):
                if d.get(key) is not None and not Path(d[key]).is_absolute():
                    d[key] = str(base / d[key])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(d, base=path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier"] = self.classifier.to_dict()
        d["synth"] = None if self.synth is None else self.synth.to_dict()
        return d

    @property
    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.out) / "cache"


def _hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()[:20]


def dataset_fingerprint(root: Path) -> str:
    """Content hash over every file referenced by the manifest."""
    root = Path(root)
    h = hashlib.sha256()
    manifest = (root / "manifest.json").read_bytes()
    h.update(manifest)
    m = json.loads(manifest)
    for s in m["subjects"]:
        paths = [s.get("esm")] + [v for r in s["recordings"].values() for v in (r["path"], r["events"])]
        for p in paths:
            if p:
                h.update((root / p).read_bytes())
    return h.hexdigest()[:20]


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# --------------------------------------------------------------- stage 0/1


@dataclass(eq=False)
class Prepared:
    """Preprocessed, label-aware view of a dataset.

    Per labelled electrode ``i``: ``trial_rows[i]`` indexes the trial-level
    arrays (``epochs``, ``mean_act``, ``graph``) for that electrode.
    """

    keys: list[ElectrodeKey]
    regions: np.ndarray
    trial_rows: list[np.ndarray]
    epochs: np.ndarray  # [n_rows x M] float32
    mean_act: np.ndarray  # [n_rows]
    graph: np.ndarray  # [n_rows x 3]
    trial_ids: np.ndarray  # [n_rows]
    fingerprint: str
    connectivity: dict = field(default_factory=dict)

    @property
    def labels(self) -> np.ndarray:
        return np.array([k.label for k in self.keys], dtype=int)


def _subject_arrays(subject, fs: float, kind: SignalKind):
    rows = subject.valid_rows()
    per_task = []
    tids = []
    for task, rec in subject.recordings.items():
        trials = subject.events.get(task, ())
        if not trials:
            continue
        onsets = [t.onset_sample for t in trials]
        ids = [t.trial_id for t in trials]
        ep = preprocess_recording(rec.samples[rows], onsets, fs, kind, ids)  # [n x L x M]
        per_task.append(ep)
        tids.extend(ids)
    epochs = np.concatenate(per_task, axis=0)
    W = batch_connectivity(epochs)
    metrics = np.stack([graph_metrics(w) for w in W])  # [n x L x 3]
    return epochs, metrics, np.array(tids, dtype=int), W


def prepare(dataset: Dataset, signal: str, cache_dir: Path | None = None, fingerprint: str | None = None) -> Prepared:
    kind = SignalKind(signal)
    cache_file = None
    if cache_dir is not None and fingerprint is not None:
        cache_file = Path(cache_dir) / f"prep-{_hash(CACHE_VERSION, fingerprint, kind.value)}.npz"
        if cache_file.exists():
            log.info("using cached preprocessing %s", cache_file.name)
            return _load_prepared(cache_file, fingerprint)

    keys, regions, trial_rows = [], [], []
    ep_parts, mean_parts, graph_parts, tid_parts = [], [], [], []
    offset = 0
    for subject in dataset.subjects:
        labels = subject.labels()
        valid = subject.valid_electrodes
        try:
            epochs, metrics, tids, _ = _subject_arrays(subject, dataset.sample_rate, kind)
        except EcogCritError as exc:
            raise StageError("preprocess", f"subject {subject.id}", exc) from exc
        n = epochs.shape[0]
        for col, e in enumerate(valid):
            lab = labels[e.id]
            if lab is Label.UNTESTED:
                continue
            keys.append(ElectrodeKey(subject.id, e.id, int(lab is Label.CRITICAL)))
            regions.append(e.region_index)
            trial_rows.append(np.arange(offset, offset + n))
            ep_parts.append(epochs[:, col, :].astype(np.float32))
            mean_parts.append(epochs[:, col, :].mean(axis=1))
            graph_parts.append(metrics[:, col, :])
            tid_parts.append(tids)
            offset += n
    if not keys:
        raise StageError("preprocess", "dataset", "no labelled electrodes")
    prep = Prepared(
        keys,
        np.array(regions, dtype=int),
        trial_rows,
        np.concatenate(ep_parts),
        np.concatenate(mean_parts),
        np.concatenate(graph_parts),
        np.concatenate(tid_parts),
        fingerprint or "",
    )
    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        _save_prepared(cache_file, prep)
    return prep


def _save_prepared(path: Path, p: Prepared) -> None:
    tmp = path.with_suffix(".tmp.npz")
    np.savez(
        tmp,
        subjects=np.array([k.subject for k in p.keys]),
        electrodes=np.array([k.electrode for k in p.keys]),
        labels=np.array([k.label for k in p.keys]),
        regions=p.regions,
        counts=np.array([r.size for r in p.trial_rows]),
        epochs=p.epochs,
        mean_act=p.mean_act,
        graph=p.graph,
        trial_ids=p.trial_ids,
    )
    tmp.replace(path)


def _load_prepared(path: Path, fingerprint: str) -> Prepared:
    z = np.load(path)
    keys = [ElectrodeKey(str(s), int(e), int(l)) for s, e, l in zip(z["subjects"], z["electrodes"], z["labels"])]
    ends = np.cumsum(z["counts"])
    rows = [np.arange(e - c, e) for e, c in zip(ends, z["counts"])]
    return Prepared(keys, z["regions"], rows, z["epochs"], z["mean_act"], z["graph"], z["trial_ids"], fingerprint)


# --------------------------------------------------------------- stage 1


def _rows_for(prep: Prepared, electrodes) -> tuple[np.ndarray, np.ndarray]:
    rows = [prep.trial_rows[i] for i in electrodes]
    owner = np.concatenate([np.full(r.size, i) for i, r in zip(electrodes, rows)])
    return np.concatenate(rows), owner


class FeatureBuilder:
    """Feature matrices for a fold; NMF is fit on the fold's training trials only."""

    def __init__(self, prep: Prepared, mask, nmf_settings: NmfSettings, train_electrodes, seed: int):
        self.prep = prep
        self.mask = resolve_mask(mask)
        self.nmf_model = None
        if "nmf" in self.mask:
            rows, _ = _rows_for(prep, train_electrodes)
            rng = np.random.default_rng(seed)
            if rows.size > nmf_settings.max_columns:
                rows = np.sort(rng.choice(rows, nmf_settings.max_columns, replace=False))
            X = np.maximum(prep.epochs[rows].astype(np.float64), 0.0).T  # [M x N]
            self.nmf_model = fit_nmf(X, nmf_settings.K, nmf_settings.max_iters, nmf_settings.tol, seed)

    def build(self, electrodes) -> tuple[np.ndarray, np.ndarray]:
        rows, owner = _rows_for(self.prep, electrodes)
        corr = None
        if self.nmf_model is not None:
            corr = nmf_correlation_matrix(self.nmf_model, self.prep.epochs[rows].astype(np.float64))
        X = feature_matrix(corr, self.prep.mean_act[rows], self.prep.regions[owner], self.prep.graph[rows], self.mask)
        return X, owner


def _fit_score(spec: ClassifierSpec, builder: FeatureBuilder, prep: Prepared, train, test, tag: str):
    Xtr, own_tr = builder.build(train)
    ytr = prep.labels[own_tr]
    scaler = FeatureScaler.fit(Xtr, builder.mask, tag)
    model = train_classifier(spec, scaler.transform(Xtr), ytr)
    Xte, own_te = builder.build(test)
    return predict_trial_scores(model, scaler.transform(Xte)), own_te, model


def _inner_groups(prep: Prepared, train, mode: str, k: int, seed: int) -> list[list[int]]:
    """Split training electrodes for cross-fitting: by subject (loo) or stratified (cv8)."""
    train = list(train)
    rng = np.random.default_rng(seed)
    if mode == "loo":
        subjects = sorted({prep.keys[i].subject for i in train})
        if len(subjects) >= k:
            order = [subjects[j] for j in rng.permutation(len(subjects))]
            buckets = {s: n % k for n, s in enumerate(order)}
            groups = [[i for i in train if buckets[prep.keys[i].subject] == g] for g in range(k)]
            if all(np.unique(prep.labels[g]).size == 2 for g in groups if g):
                return [g for g in groups if g]
    labels = prep.labels[train]
    assign = np.empty(len(train), dtype=int)
    offset = 0
    for c in (1, 0):
        idx = rng.permutation(np.flatnonzero(labels == c))
        assign[idx] = (np.arange(idx.size) + offset) % k
        offset = (offset + idx.size) % k
    return [[train[j] for j in np.flatnonzero(assign == g)] for g in range(k)]


@dataclass
class FoldScores:
    """Trial scores for one outer fold: held-out trials plus cross-fitted training trials."""

    test_scores: np.ndarray
    test_owner: np.ndarray
    oof_scores: np.ndarray
    oof_owner: np.ndarray
    diagnostics: dict


def stage1_fold(cfg: PipelineConfig, prep: Prepared, train, test, fold_seed: int, cache: Path | None, cache_key: str | None) -> FoldScores:
    if cache is not None and cache_key:
        f = cache / f"scores-{cache_key}.npz"
        if f.exists():
            z = np.load(f)
            return FoldScores(z["test_scores"], z["test_owner"], z["oof_scores"], z["oof_owner"], json.loads(str(z["diag"])))
    builder = FeatureBuilder(prep, cfg.features, cfg.nmf, train, fold_seed)
    spec = replace(cfg.classifier, seed=fold_seed)
    test_scores, test_owner, model = _fit_score(spec, builder, prep, train, test, "outer")
    diag = {k: v for k, v in model.diagnostics.items() if k != "loss_history"}

    oof_s, oof_o = [], []
    groups = _inner_groups(prep, train, cfg.mode, cfg.inner_folds, fold_seed + 1)
    for g, held in enumerate(groups):
        held_set = set(held)
        inner_train = [i for i in train if i not in held_set]
        s, o, _ = _fit_score(replace(spec, seed=fold_seed + 2 + g), builder, prep, inner_train, held, f"inner{g}")
        oof_s.append(s)
        oof_o.append(o)
    res = FoldScores(test_scores, test_owner, np.concatenate(oof_s), np.concatenate(oof_o), diag)
    if cache is not None and cache_key:
        cache.mkdir(parents=True, exist_ok=True)
        tmp = cache / f"scores-{cache_key}.tmp.npz"
        np.savez(
            tmp,
            test_scores=res.test_scores,
            test_owner=res.test_owner,
            oof_scores=res.oof_scores,
            oof_owner=res.oof_owner,
            diag=json.dumps(diag, sort_keys=True),
        )
        tmp.replace(cache / f"scores-{cache_key}.npz")
    return res


# --------------------------------------------------------------- stage 2


def _by_electrode(scores: np.ndarray, owner: np.ndarray) -> dict[int, np.ndarray]:
    order = np.argsort(owner, kind="stable")
    o = owner[order]
    s = scores[order]
    cuts = np.flatnonzero(np.diff(o)) + 1
    return {int(grp[0]): vals for grp, vals in zip(np.split(o, cuts), np.split(s, cuts))}


def _agg_inputs(prep: Prepared, grouped: dict[int, np.ndarray], electrodes, use_region: bool) -> np.ndarray:
    Z = np.zeros((len(electrodes), N_BINS + 26))
    for r, i in enumerate(electrodes):
        onehot = np.zeros(26)
        onehot[prep.regions[i]] = 1.0
        Z[r] = aggregator_input(grouped[i], onehot, use_region)
    return Z


@dataclass
class FoldResult:
    name: str
    electrodes: list[int]
    scores: np.ndarray
    threshold: float
    n_trials: list[int]


def stage2_fold(cfg: PipelineConfig, prep: Prepared, fs: FoldScores, train, test, name: str, fold_seed: int) -> FoldResult:
    oof = _by_electrode(fs.oof_scores, fs.oof_owner)
    held = _by_electrode(fs.test_scores, fs.test_owner)
    train = [i for i in train if i in oof]
    test = list(test)
    if cfg.aggregation == "average":
        train_scores = np.array([oof[i].mean() for i in train])
        test_scores = np.array([held[i].mean() for i in test])
    else:
        use_region = cfg.aggregation == "mlp_hist_region"
        Ztr = _agg_inputs(prep, oof, train, use_region)
        agg = train_aggregator_mlp(
            Ztr,
            prep.labels[train],
            epochs=cfg.agg_epochs,
            lr=cfg.agg_lr,
            seed=fold_seed + 101,
            gamma_f=cfg.gamma_f,
            alpha_f=cfg.alpha_f,
            batch_size=cfg.agg_batch_size,
            use_region=use_region,
        )
        train_scores = agg.predict(Ztr)
        test_scores = agg.predict(_agg_inputs(prep, held, test, use_region))
    threshold = select_threshold_max_f1(train_scores, prep.labels[train])
    return FoldResult(name, test, test_scores, threshold, [int(held[i].size) for i in test])


# --------------------------------------------------------------- driver


@dataclass
class RunResult:
    report: EvalReport
    verdicts: list[ElectrodeVerdict]
    summary: dict
    out_dir: Path


def fold_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0] % (2**31 - 1000))


def ensure_dataset(cfg: PipelineConfig) -> Path:
    root = Path(cfg.dataset)
    if (root / "manifest.json").exists():
        return root
    if cfg.synth is None:
        raise ConfigurationError(f"dataset not found at {root} and no 'synth' section to generate it")
    log.info("generating synthetic dataset at %s", root)
    return generate_dataset(cfg.synth, root)


def load_prepared(cfg: PipelineConfig) -> tuple[Dataset, Prepared]:
    root = ensure_dataset(cfg)
    try:
        ds = load_dataset(root)
    except EcogCritError as exc:
        raise StageError("load", str(root), exc) from exc
    fp = dataset_fingerprint(root)
    return ds, prepare(ds, cfg.signal, cfg.cache_path, fp)


def stage1_key(cfg: PipelineConfig, prep: Prepared, fold_name: str, seed: int) -> str:
    return _hash(
        CACHE_VERSION,
        prep.fingerprint,
        cfg.signal,
        mask_name(cfg.features),
        cfg.classifier.to_dict(),
        cfg.mode,
        cfg.inner_folds,
        asdict(cfg.nmf),
        fold_name,
        seed,
    )


def run_pipeline(cfg: PipelineConfig, prepared: Prepared | None = None, write: bool = True) -> RunResult:
    """Run every fold, pool held-out verdicts and write the report artifacts."""
    if prepared is None:
        _, prepared = load_prepared(cfg)
    prep = prepared
    plan = make_folds(prep.keys, cfg.mode, cfg.seed)
    cache = cfg.cache_path

    def work(k_fold):
        k, fold = k_fold
        seed_k = fold_seed(cfg.seed, k)
        try:
            fs = stage1_fold(cfg, prep, fold.train, fold.test, seed_k, cache, stage1_key(cfg, prep, fold.name, seed_k))
            return stage2_fold(cfg, prep, fs, fold.train, fold.test, fold.name, seed_k), fs.diagnostics
        except EcogCritError as exc:
            raise StageError("train", f"fold {fold.name}", exc) from exc

    items = list(enumerate(plan.folds))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outputs = list(pool.map(work, items))
    else:
        outputs = [work(it) for it in items]

    results = [o[0] for o in outputs]
    labels = prep.labels
    report = build_report(
        [r.name for r in results],
        [r.scores for r in results],
        [labels[r.electrodes] for r in results],
        [r.threshold for r in results],
    )
    verdicts = []
    for k, r in enumerate(results):
        for i, s, n in zip(r.electrodes, r.scores, r.n_trials):
            key = prep.keys[i]
            verdicts.append(ElectrodeVerdict(key.subject, key.electrode, float(s), bool(s >= r.threshold), r.threshold, n, k))

    summary = {
        "version": version_string(),
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("threads", "out", "cache_dir")},
        "dataset_fingerprint": prep.fingerprint,
        "n_electrodes": len(prep.keys),
        "n_critical": int(labels.sum()),
        "pooled": report.pooled,
        "fold_mean": report.fold_mean,
        "folds": report.folds,
        "stage1": [o[1] for o in outputs],
    }
    out = Path(cfg.out)
    if write:
        write_run(out, summary, verdicts, report)
    return RunResult(report, verdicts, summary, out)


def write_run(out: Path, summary: dict, verdicts, report: EvalReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_verdicts(out / "verdicts.csv", verdicts)
    if report.roc_points is not None:
        write_curve_csv(out / "roc.csv", *report.roc_points, header=("fpr", "tpr"))
    if report.pr_points is not None:
        write_curve_csv(out / "pr.csv", *report.pr_points, header=("recall", "precision"))


GRID_HEADER = ["mask", "classifier", "aggregation", "roc_auc", "pr_auc", "f1", "balanced_accuracy", "fold_mean_roc_auc"]


def run_grid(cfg: PipelineConfig, masks, classifiers, aggregations, prepared: Prepared | None = None) -> list[dict]:
    """Evaluate every (mask, classifier, aggregation) cell on one preprocessed dataset.

    Each cell writes its own report under ``<out>/<mask>__<classifier>__<aggregation>``;
    aggregators sharing a mask and classifier reuse the cached stage-1 scores.
    """
    if prepared is None:
        _, prepared = load_prepared(cfg)
    cache = cfg.cache_path
    rows = []
    for mask, clf, agg in grid_product(masks, classifiers, aggregations):
        spec = clf if isinstance(clf, ClassifierSpec) else replace(cfg.classifier, kind=clf)
        cell = f"{mask_name(mask)}__{spec.kind}__{agg}"
        cell_cfg = replace(cfg, features=mask, classifier=spec, aggregation=agg, out=str(Path(cfg.out) / cell), cache_dir=str(cache))
        log.info("grid cell %s", cell)
        res = run_pipeline(cell_cfg, prepared)
        p = res.summary["pooled"]
        rows.append(
            {
                "mask": mask_name(mask),
                "classifier": spec.kind,
                "aggregation": agg,
                "roc_auc": p["roc_auc"],
                "pr_auc": p["pr_auc"],
                "f1": p["f1"],
                "balanced_accuracy": p["balanced_accuracy"],
                "fold_mean_roc_auc": res.summary["fold_mean"]["roc_auc"],
            }
        )
    return rows


def write_grid(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=GRID_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


@dataclass
class FinalModel:
    """Stage-1 and stage-2 models fit on every labelled electrode."""

    builder: FeatureBuilder
    scaler: FeatureScaler
    classifier: object
    aggregator: object | None
    threshold: float


def train_final(cfg: PipelineConfig, prep: Prepared) -> FinalModel:
    everyone = list(range(len(prep.keys)))
    seed = fold_seed(cfg.seed, 10_000)
    builder = FeatureBuilder(prep, cfg.features, cfg.nmf, everyone, seed)
    X, owner = builder.build(everyone)
    scaler = FeatureScaler.fit(X, builder.mask, "all")
    spec = replace(cfg.classifier, seed=seed)
    model = train_classifier(spec, scaler.transform(X), prep.labels[owner])
    oof_s, oof_o = [], []
    for g, held in enumerate(_inner_groups(prep, everyone, cfg.mode, cfg.inner_folds, seed + 1)):
        held_set = set(held)
        rest = [i for i in everyone if i not in held_set]
        s, o, _ = _fit_score(replace(spec, seed=seed + 2 + g), builder, prep, rest, held, f"inner{g}")
        oof_s.append(s)
        oof_o.append(o)
    fs = FoldScores(np.zeros(0), np.zeros(0, int), np.concatenate(oof_s), np.concatenate(oof_o), {})
    oof = _by_electrode(fs.oof_scores, fs.oof_owner)
    agg = None
    if cfg.aggregation == "average":
        train_scores = np.array([oof[i].mean() for i in everyone])
    else:
        use_region = cfg.aggregation == "mlp_hist_region"
        Z = _agg_inputs(prep, oof, everyone, use_region)
        agg = train_aggregator_mlp(
            Z,
            prep.labels,
            epochs=cfg.agg_epochs,
            lr=cfg.agg_lr,
            seed=seed + 101,
            gamma_f=cfg.gamma_f,
            alpha_f=cfg.alpha_f,
            batch_size=cfg.agg_batch_size,
            use_region=use_region,
        )
        train_scores = agg.predict(Z)
    threshold = select_threshold_max_f1(train_scores, prep.labels)
    return FinalModel(builder, scaler, model, agg, threshold)
