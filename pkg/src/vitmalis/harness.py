"""Experiment runner: metrics, offline profiling and training, estimator
baselines, policy sweeps and artifact persistence.

A run is (policy, scene, trace, seed) -> MetricsReport plus raw logs; a
sweep is the cross product, cached and aggregated. Profiling replays the
device pipeline against the analytic server to label training data for the
estimator models and to fit the encode/decode/inference delay tables.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .client import (
    DELTA_M,
    DELTA_RHO,
    DecisionRecord,
    OffloadRecord,
    PolicyConfig,
    RunLog,
    simulate,
)
from .estimator import (
    Configuration,
    EncodeProfile,
    EstimatorBundle,
    InferenceDelayModels,
    VALID_LAMBDAS,
    accuracy_features,
    size_features,
)
from .grid import DownsampleMask, GridGeometry, build_geometry, mask_from_types
from .mlp import MlpModel, forward_batch, load_model, mlp_train, r_squared, save_model
from .motion import analyze_motion, classify_regions, compute_relevance, downsampled_motion
from .netsim import NetworkTrace, generate_trace, load_trace
from .scene import Box, FrameTruth, SceneConfig, generate_truth, load_preset
from .serversim import (
    PayloadKind,
    ServerProfile,
    default_profile,
    true_accuracy,
    true_decode_ms,
    true_encode_ms,
    true_inference_ms,
    true_size,
)

Policy = PolicyConfig  # canonical name for the policy type

DEFAULT_PRESET_NAMES = ("walkS", "walkR", "walkB", "cycleS", "driveN")


class ArtifactsError(ValueError):
    """Missing or unusable trained artifacts."""


def default_geometry() -> GridGeometry:
    return build_geometry(1920, 1080, 16, 9, 2)


def _mix(*parts) -> int:
    """Stable 63-bit seed derived from string/int parts."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big") & 0x7FFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# detection matching


def f1_match(predicted, truth, iou_threshold: float = 0.5) -> float:
    """Greedy one-to-one IoU matching, descending IoU; F1 = 2PR/(P+R).

    Both lists empty -> 1.0; exactly one empty -> 0.0.
    """
    n_p, n_t = len(predicted), len(truth)
    if n_p == 0 and n_t == 0:
        return 1.0
    if n_p == 0 or n_t == 0:
        return 0.0
    p = np.array([[b.x, b.y, b.w, b.h] for b in predicted])
    t = np.array([[b.x, b.y, b.w, b.h] for b in truth])
    ox = np.minimum(p[:, None, 0] + p[:, None, 2], t[None, :, 0] + t[None, :, 2]) - np.maximum(
        p[:, None, 0], t[None, :, 0]
    )
    oy = np.minimum(p[:, None, 1] + p[:, None, 3], t[None, :, 1] + t[None, :, 3]) - np.maximum(
        p[:, None, 1], t[None, :, 1]
    )
    inter = np.clip(ox, 0, None) * np.clip(oy, 0, None)
    union = (p[:, 2] * p[:, 3])[:, None] + (t[:, 2] * t[:, 3])[None, :] - inter
    ious = np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)

    pi, ti = np.nonzero(ious >= iou_threshold)
    vals = ious[pi, ti]
    order = np.lexsort((ti, pi, -vals))
    used_p: set[int] = set()
    used_t: set[int] = set()
    tp = 0
    for k in order:
        i, j = int(pi[k]), int(ti[k])
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        tp += 1
    precision = tp / n_p
    recall = tp / n_t
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# metrics


def _pct(values, q: float) -> float:
    if len(values) == 0:
        return 0.0
    return float(np.percentile(np.asarray(values, dtype=np.float64), q))


@dataclass(frozen=True)
class MetricsReport:
    policy: str
    scene_id: str
    trace_label: str
    seed: int
    n_frames: int
    n_offloads: int
    rendering_f1: float
    e2e_p25: float
    e2e_p50: float
    e2e_p75: float
    inference_f1_mean: float
    inference_f1_std: float
    interval_p25: float
    interval_p50: float
    interval_p75: float
    enc_median: float
    tx_median: float
    dec_median: float
    inf_median: float
    rtt_median: float

    ROW_FIELDS = (
        "policy scene_id trace_label seed n_frames n_offloads rendering_f1 "
        "e2e_p25 e2e_p50 e2e_p75 inference_f1_mean inference_f1_std "
        "interval_p25 interval_p50 interval_p75 enc_median tx_median "
        "dec_median inf_median rtt_median"
    ).split()

    def row(self) -> list:
        return [getattr(self, k) for k in self.ROW_FIELDS]


def compute_metrics(
    log: RunLog,
    truths: list[FrameTruth],
    policy: str,
    scene_id: str,
    trace_label: str,
    seed: int,
) -> MetricsReport:
    render_f1 = [
        f1_match(log.rendered_boxes[f], truths[f].boxes) for f in range(len(truths))
    ]
    inf_f1 = [
        f1_match(boxes, truths[rec.frame_id].boxes)
        for rec, boxes in zip(log.offloads, log.offload_boxes)
    ]
    e2e = [rec.e2e_ms for rec in log.offloads]
    intervals = np.diff([rec.frame_id for rec in log.offloads]) if len(log.offloads) > 1 else []
    return MetricsReport(
        policy=policy,
        scene_id=scene_id,
        trace_label=trace_label,
        seed=seed,
        n_frames=len(truths),
        n_offloads=len(log.offloads),
        rendering_f1=float(np.mean(render_f1)) if render_f1 else 0.0,
        e2e_p25=_pct(e2e, 25),
        e2e_p50=_pct(e2e, 50),
        e2e_p75=_pct(e2e, 75),
        inference_f1_mean=float(np.mean(inf_f1)) if inf_f1 else 0.0,
        inference_f1_std=float(np.std(inf_f1)) if inf_f1 else 0.0,
        interval_p25=_pct(intervals, 25),
        interval_p50=_pct(intervals, 50),
        interval_p75=_pct(intervals, 75),
        enc_median=_pct([r.enc_ms for r in log.offloads], 50),
        tx_median=_pct([r.tx_ms for r in log.offloads], 50),
        dec_median=_pct([r.dec_ms for r in log.offloads], 50),
        inf_median=_pct([r.inf_ms for r in log.offloads], 50),
        rtt_median=_pct([r.rtt_ms for r in log.offloads], 50),
    )


# ---------------------------------------------------------------------------
# single experiment


def run_experiment(
    policy: PolicyConfig,
    scene: SceneConfig | str,
    trace: NetworkTrace,
    seed: int,
    bundle: EstimatorBundle | None = None,
    geom: GridGeometry | None = None,
    duration_frames: int | None = None,
    fps: float = 30.0,
    verbose_decisions: bool = False,
    transport=None,
    truths: list[FrameTruth] | None = None,
    server_profile: ServerProfile | None = None,
) -> tuple[MetricsReport, RunLog]:
    """Run one policy on one scene/trace pair; deterministic per seed."""
    geom = geom or default_geometry()
    if isinstance(scene, str):
        scene = load_preset(scene)
    if duration_frames is not None:
        scene = replace(scene, duration_frames=duration_frames)
    scene = replace(scene, seed=_mix("scene", scene.scene_id, seed))
    if policy.name == "ViTMAlis" and bundle is None:
        raise ArtifactsError("ViTMAlis needs trained artifacts; run profiling first")
    if truths is None:
        truths = generate_truth(scene, geom)
    profile = server_profile or default_profile(geom, seed=_mix("server", seed))
    log = simulate(
        policy, truths, geom, trace, profile, bundle, fps, verbose_decisions, transport
    )
    report = compute_metrics(
        log, truths, policy.label, scene.scene_id, trace.label, seed
    )
    return report, log


# ---------------------------------------------------------------------------
# profiling + training


@dataclass
class ProfilingDataset:
    size_x: np.ndarray  # (N, 5) features per the size model layout
    size_y: np.ndarray  # KiB
    acc_x: np.ndarray  # (N, 8) features per the accuracy model layout
    acc_y: np.ndarray  # F1
    inf_rows: np.ndarray  # (N, 3): beta, n_d, inference_ms
    dec_ms: np.ndarray  # (N,)

    def save(self, path: str) -> None:
        np.savez_compressed(
            path,
            size_x=self.size_x,
            size_y=self.size_y,
            acc_x=self.acc_x,
            acc_y=self.acc_y,
            inf_rows=self.inf_rows,
            dec_ms=self.dec_ms,
        )

    @classmethod
    def load(cls, path: str) -> "ProfilingDataset":
        with np.load(path) as z:
            return cls(
                size_x=z["size_x"],
                size_y=z["size_y"],
                acc_x=z["acc_x"],
                acc_y=z["acc_y"],
                inf_rows=z["inf_rows"],
                dec_ms=z["dec_ms"],
            )


@dataclass
class OfflineMeanModel:
    """Static per-configuration means; blind to frame content."""

    size_table: dict[tuple[int, int], float]
    size_default: float
    acc_table: dict[tuple[int, int, int], float]
    acc_default: float

    @classmethod
    def fit(
        cls, size_x: np.ndarray, size_y: np.ndarray, acc_x: np.ndarray, acc_y: np.ndarray
    ) -> "OfflineMeanModel":
        size_table: dict[tuple[int, int], list[float]] = {}
        for row, y in zip(size_x, size_y):
            size_table.setdefault((int(row[0]), int(row[4])), []).append(float(y))
        acc_table: dict[tuple[int, int, int], list[float]] = {}
        for row, y in zip(acc_x, acc_y):
            acc_table.setdefault((int(row[0]), int(row[1]), int(row[2])), []).append(float(y))
        return cls(
            size_table={k: float(np.mean(v)) for k, v in size_table.items()},
            size_default=float(np.mean(size_y)),
            acc_table={k: float(np.mean(v)) for k, v in acc_table.items()},
            acc_default=float(np.mean(acc_y)),
        )

    def predict_size_batch(self, feats: np.ndarray) -> np.ndarray:
        return np.array(
            [
                self.size_table.get((int(r[0]), int(r[4])), self.size_default)
                for r in feats
            ]
        )

    def predict_accuracy_batch(self, feats: np.ndarray) -> np.ndarray:
        return np.array(
            [
                self.acc_table.get((int(r[0]), int(r[1]), int(r[2])), self.acc_default)
                for r in feats
            ]
        )


@dataclass
class LinearRegressionModel:
    """Ordinary least squares on standardized features (plus intercept)."""

    coef: np.ndarray
    intercept: float
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "LinearRegressionModel":
        mean = x.mean(axis=0)
        scale = np.maximum(x.std(axis=0), 1e-9)
        xn = (x - mean) / scale
        a = np.hstack([xn, np.ones((x.shape[0], 1))])
        sol, *_ = np.linalg.lstsq(a, y, rcond=None)
        return cls(coef=sol[:-1], intercept=float(sol[-1]), mean=mean, scale=scale)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.scale) @ self.coef + self.intercept


@dataclass
class TrainedArtifacts:
    bundle: EstimatorBundle
    offline_mean: OfflineMeanModel
    dataset: ProfilingDataset | None = None


def profile_and_train(
    presets,
    seed: int,
    frames_per_preset: int = 1800,
    epochs: int = 200,
    geom: GridGeometry | None = None,
    out_dir: str | None = None,
    stale_max_frames: int = 12,
    box_drop_prob: float = 0.15,
) -> TrainedArtifacts:
    """Label a profiling corpus against the analytic server and fit models.

    Replays the device pipeline per frame with a randomly chosen candidate
    configuration. Region classification runs on degraded boxes (random
    staleness up to stale_max_frames plus dropout) so the collected masks
    cover the tracker-imperfection regimes seen at runtime.
    """
    geom = geom or default_geometry()
    rng = np.random.Generator(np.random.Philox(key=[_mix("profiling", seed), 1]))
    profile = default_profile(geom, seed=_mix("profile-server", seed))

    size_x, size_y, acc_x, acc_y = [], [], [], []
    inf_rows, dec_samples = [], []
    n_samples = 0
    for preset in presets:
        cfg = load_preset(preset) if isinstance(preset, str) else preset
        cfg = replace(
            cfg,
            seed=_mix("profiling-scene", cfg.scene_id, seed),
            duration_frames=frames_per_preset,
        )
        truths = generate_truth(cfg, geom)
        for f, truth in enumerate(truths):
            stale = int(rng.integers(0, stale_max_frames + 1))
            src = truths[max(0, f - stale)]
            boxes = tuple(b for b in src.boxes if rng.random() >= box_drop_prob)
            rep = analyze_motion(truth, geom)
            rel = compute_relevance(boxes, geom)
            types = classify_regions(rep, rel, DELTA_M, DELTA_RHO)

            tau = int(rng.integers(0, 3))
            lam = int(VALID_LAMBDAS[rng.integers(0, len(VALID_LAMBDAS))])
            beta = 0 if tau == 0 else int(rng.integers(0, 5))
            c = Configuration(tau, lam, beta)
            mask = mask_from_types(types, tau)
            n_d = mask.n_downsampled
            m_d = downsampled_motion(rep, mask)

            size_x.append(size_features(c, n_d, m_d, rep.m_frame))
            size_y.append(true_size(profile, c, truth, geom, mask))
            acc_x.append(
                accuracy_features(c, n_d, m_d, rep.m_frame, rel.mean_rho, rel.std_rho)
            )
            acc_y.append(true_accuracy(profile, c, truth, geom, mask))
            inf_rows.append((beta, n_d, true_inference_ms(profile, c, n_d, PayloadKind.MIXED, f)))
            dec_samples.append(true_decode_ms(profile, c, geom, mask, PayloadKind.MIXED, f))
            n_samples += 1
    if n_samples < 200:
        raise ArtifactsError(f"profiling produced only {n_samples} samples; need >= 200")

    dataset = ProfilingDataset(
        size_x=np.array(size_x),
        size_y=np.array(size_y),
        acc_x=np.array(acc_x),
        acc_y=np.array(acc_y),
        inf_rows=np.array(inf_rows),
        dec_ms=np.array(dec_samples),
    )

    # Encode table: dedicated sweep over N_d buckets and quality levels.
    table: dict[tuple[int, int], float] = {}
    for bucket in range(0, geom.region_count + 1, 2):
        bits = tuple(i < bucket for i in range(geom.region_count))
        mask = DownsampleMask(bits)
        for lam in VALID_LAMBDAS:
            c = Configuration(0 if bucket == 0 else 2, lam, 0)
            vals = [
                true_encode_ms(profile, c, geom, mask, PayloadKind.MIXED, frame_id=100000 + r)
                for r in range(5)
            ]
            table[(bucket, lam)] = float(np.mean(vals))
    enc_profile = EncodeProfile(
        table=table, dec_mean_ms=float(np.mean(dataset.dec_ms)), bucket_step=2
    )

    # Per-restoration-point linear inference models by least squares.
    intercepts, slopes = [], []
    for beta in range(5):
        rows = dataset.inf_rows[dataset.inf_rows[:, 0] == beta]
        if len(rows) < 2 or np.ptp(rows[:, 1]) == 0:
            intercepts.append(profile.inf_intercepts[beta])
            slopes.append(profile.inf_slopes[beta])
            continue
        a = np.vstack([rows[:, 1], np.ones(len(rows))]).T
        sol, *_ = np.linalg.lstsq(a, rows[:, 2], rcond=None)
        slopes.append(min(0.0, float(sol[0])))
        intercepts.append(max(1.0, float(sol[1])))
    inf_models = InferenceDelayModels(intercepts=tuple(intercepts), slopes=tuple(slopes))

    size_model = mlp_train(
        dataset.size_x, dataset.size_y, epochs=epochs, seed=_mix("mlp-size", seed)
    )
    acc_model = mlp_train(
        dataset.acc_x, dataset.acc_y, epochs=epochs, seed=_mix("mlp-acc", seed)
    )
    bundle = EstimatorBundle(
        size_model=size_model,
        acc_model=acc_model,
        encode_profile=enc_profile,
        inference_models=inf_models,
    )
    offline = OfflineMeanModel.fit(dataset.size_x, dataset.size_y, dataset.acc_x, dataset.acc_y)
    artifacts = TrainedArtifacts(bundle=bundle, offline_mean=offline, dataset=dataset)
    if out_dir is not None:
        save_artifacts(artifacts, out_dir)
    return artifacts


def save_artifacts(artifacts: TrainedArtifacts, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    bundle = artifacts.bundle
    save_model(bundle.size_model, os.path.join(out_dir, "size.vmlp"))
    save_model(bundle.acc_model, os.path.join(out_dir, "acc.vmlp"))
    with open(os.path.join(out_dir, "encode_table.csv"), "w", encoding="utf-8") as fh:
        fh.write(bundle.encode_profile.to_csv())
    meta = {
        "dec_mean_ms": bundle.encode_profile.dec_mean_ms,
        "bucket_step": bundle.encode_profile.bucket_step,
        "inference_intercepts": list(bundle.inference_models.intercepts),
        "inference_slopes": list(bundle.inference_models.slopes),
        "offline_mean": {
            "size_table": [[k[0], k[1], v] for k, v in sorted(artifacts.offline_mean.size_table.items())],
            "size_default": artifacts.offline_mean.size_default,
            "acc_table": [
                [k[0], k[1], k[2], v] for k, v in sorted(artifacts.offline_mean.acc_table.items())
            ],
            "acc_default": artifacts.offline_mean.acc_default,
        },
    }
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    if artifacts.dataset is not None:
        artifacts.dataset.save(os.path.join(out_dir, "dataset.npz"))


def load_artifacts(out_dir: str) -> TrainedArtifacts:
    try:
        with open(os.path.join(out_dir, "meta.json"), "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        size_model = load_model(os.path.join(out_dir, "size.vmlp"))
        acc_model = load_model(os.path.join(out_dir, "acc.vmlp"))
        with open(os.path.join(out_dir, "encode_table.csv"), "r", encoding="utf-8") as fh:
            enc_profile = EncodeProfile.from_csv(
                fh.read(), dec_mean_ms=meta["dec_mean_ms"], bucket_step=meta["bucket_step"]
            )
    except (OSError, KeyError, ValueError) as exc:
        raise ArtifactsError(f"cannot load artifacts from {out_dir}: {exc}") from exc
    inf_models = InferenceDelayModels(
        intercepts=tuple(meta["inference_intercepts"]),
        slopes=tuple(meta["inference_slopes"]),
    )
    om = meta["offline_mean"]
    offline = OfflineMeanModel(
        size_table={(int(r[0]), int(r[1])): float(r[2]) for r in om["size_table"]},
        size_default=float(om["size_default"]),
        acc_table={(int(r[0]), int(r[1]), int(r[2])): float(r[3]) for r in om["acc_table"]},
        acc_default=float(om["acc_default"]),
    )
    dataset = None
    ds_path = os.path.join(out_dir, "dataset.npz")
    if os.path.exists(ds_path):
        dataset = ProfilingDataset.load(ds_path)
    bundle = EstimatorBundle(
        size_model=size_model,
        acc_model=acc_model,
        encode_profile=enc_profile,
        inference_models=inf_models,
    )
    return TrainedArtifacts(bundle=bundle, offline_mean=offline, dataset=dataset)


# ---------------------------------------------------------------------------
# estimator comparison (size/accuracy prediction quality)


@dataclass(frozen=True)
class EstimatorComparison:
    # rows[(method, target)] = {"mae": .., "rmse": .., "mape": .., "r2": ..}
    rows: dict[tuple[str, str], dict[str, float]]

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"{'method':<18} {'target':<9} {'MAE':>9} {'RMSE':>9} {'MAPE':>9} {'R2':>8}\n")
        for (method, target), m in sorted(self.rows.items()):
            out.write(
                f"{method:<18} {target:<9} {m['mae']:>9.3f} {m['rmse']:>9.3f} "
                f"{m['mape']:>9.1f} {m['r2']:>8.3f}\n"
            )
        return out.getvalue()

    def to_json(self) -> str:
        d = {f"{method}/{target}": m for (method, target), m in sorted(self.rows.items())}
        return json.dumps(d, indent=2, sort_keys=True)


def _regression_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> dict[str, float]:
    err = y_pred - y_true
    return {
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err**2))),
        "mape": float(np.mean(np.abs(err) / np.maximum(np.abs(y_true), 1e-9)) * 100.0),
        "r2": r_squared(y_true, y_pred),
    }


def compare_estimators(
    dataset: ProfilingDataset, seed: int = 0, epochs: int = 200
) -> EstimatorComparison:
    """Evaluate MLP vs Linear Regression vs Offline Mean on a held-out split."""
    rng = np.random.Generator(np.random.Philox(key=[_mix("compare", seed), 2]))
    n = dataset.size_x.shape[0]
    order = rng.permutation(n)
    n_test = max(1, int(round(n * 0.2)))
    test, train = order[:n_test], order[n_test:]

    rows: dict[tuple[str, str], dict[str, float]] = {}
    for target, x, y, feats in (
        ("size", dataset.size_x, dataset.size_y, "size"),
        ("accuracy", dataset.acc_x, dataset.acc_y, "acc"),
    ):
        mlp = mlp_train(x[train], y[train], epochs=epochs, seed=_mix("cmp-mlp", target, seed))
        rows[("MLP", target)] = _regression_metrics(y[test], forward_batch(mlp, x[test]))
        lin = LinearRegressionModel.fit(x[train], y[train])
        rows[("LinearRegression", target)] = _regression_metrics(y[test], lin.predict(x[test]))
    offline = OfflineMeanModel.fit(
        dataset.size_x[train], dataset.size_y[train], dataset.acc_x[train], dataset.acc_y[train]
    )
    rows[("OfflineMean", "size")] = _regression_metrics(
        dataset.size_y[test], offline.predict_size_batch(dataset.size_x[test])
    )
    rows[("OfflineMean", "accuracy")] = _regression_metrics(
        dataset.acc_y[test], offline.predict_accuracy_batch(dataset.acc_x[test])
    )
    return EstimatorComparison(rows=rows)


# ---------------------------------------------------------------------------
# sweeps


def resolve_trace(spec: str) -> NetworkTrace:
    """Trace reference: '4g:SEED', '5g:SEED', or a path to a trace CSV."""
    if ":" in spec:
        kind, _, seed_str = spec.partition(":")
        if kind.lower() in ("4g", "5g") and seed_str.isdigit():
            return generate_trace(kind.lower(), int(seed_str))
    return load_trace(spec)


def default_traces(n_each: int = 6) -> list[NetworkTrace]:
    out = [generate_trace("4g", s) for s in range(n_each)]
    out += [generate_trace("5g", s) for s in range(n_each)]
    return out


def ablation_bundle(artifacts: TrainedArtifacts) -> EstimatorBundle:
    """Bundle with content-blind Offline Mean estimates (the w/o MLPs run)."""
    return EstimatorBundle(
        size_model=artifacts.offline_mean,
        acc_model=artifacts.offline_mean,
        encode_profile=artifacts.bundle.encode_profile,
        inference_models=artifacts.bundle.inference_models,
    )


@dataclass
class SweepReport:
    runs: list[MetricsReport]
    # per policy label: medians across runs
    aggregates: dict[str, dict[str, float]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(MetricsReport.ROW_FIELDS)
        for rep in sorted(
            self.runs, key=lambda r: (r.policy, r.scene_id, r.trace_label, r.seed)
        ):
            writer.writerow([v if isinstance(v, (int, str)) else repr(v) for v in rep.row()])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.aggregates, indent=2, sort_keys=True)


def aggregate_runs(runs: list[MetricsReport]) -> dict[str, dict[str, float]]:
    by_policy: dict[str, list[MetricsReport]] = {}
    for rep in runs:
        by_policy.setdefault(rep.policy, []).append(rep)
    out: dict[str, dict[str, float]] = {}
    for policy, reps in sorted(by_policy.items()):
        out[policy] = {
            "median_rendering_f1": _pct([r.rendering_f1 for r in reps], 50),
            "median_e2e_ms": _pct([r.e2e_p50 for r in reps], 50),
            "median_inference_ms": _pct([r.inf_median for r in reps], 50),
            "median_interval_frames": _pct([r.interval_p50 for r in reps], 50),
            "mean_inference_f1": float(np.mean([r.inference_f1_mean for r in reps])),
            "median_tx_ms": _pct([r.tx_median for r in reps], 50),
            "n_runs": float(len(reps)),
        }
    return out


def run_sweep(
    policies: list[PolicyConfig],
    presets,
    traces: list[NetworkTrace],
    seeds: list[int],
    artifacts: TrainedArtifacts | None = None,
    duration_frames: int = 1800,
    fps: float = 30.0,
    geom: GridGeometry | None = None,
) -> SweepReport:
    """Cross product of policies x presets x traces x seeds.

    Scenes and server noise depend only on (preset, seed), so policies see
    identical worlds and the comparison is paired. Aggregation is sorted and
    independent of execution order.
    """
    geom = geom or default_geometry()
    needs_artifacts = any(p.name == "ViTMAlis" for p in policies)
    if needs_artifacts and artifacts is None:
        raise ArtifactsError("sweep includes ViTMAlis policies but no artifacts given")

    scene_cache: dict[tuple[str, int], list[FrameTruth]] = {}
    runs: list[MetricsReport] = []
    for preset in presets:
        cfg = load_preset(preset) if isinstance(preset, str) else preset
        for seed in seeds:
            key = (cfg.scene_id, seed)
            if key not in scene_cache:
                seeded = replace(
                    cfg,
                    seed=_mix("scene", cfg.scene_id, seed),
                    duration_frames=duration_frames,
                )
                scene_cache[key] = generate_truth(seeded, geom)
            truths = scene_cache[key]
            profile = default_profile(geom, seed=_mix("server", seed))
            for trace in traces:
                for policy in policies:
                    if policy.name != "ViTMAlis":
                        bundle = None
                    elif policy.ablation == "no_mlps":
                        bundle = ablation_bundle(artifacts)
                    else:
                        bundle = artifacts.bundle
                    report, _ = run_experiment(
                        policy,
                        cfg,
                        trace,
                        seed,
                        bundle=bundle,
                        geom=geom,
                        duration_frames=duration_frames,
                        fps=fps,
                        truths=truths,
                        server_profile=profile,
                    )
                    runs.append(report)
    return SweepReport(runs=runs, aggregates=aggregate_runs(runs))


# ---------------------------------------------------------------------------
# log writers (deterministic byte output)


def render_log_lines(log: RunLog) -> list[str]:
    lines = ["frame_id,source,n_boxes,eta,kappa"]
    for row in log.render_rows:
        lines.append(f"{row.frame_id},{row.source},{row.n_boxes},{row.eta},{row.kappa!r}")
    return lines


def offload_log_lines(log: RunLog) -> list[str]:
    lines = [
        "frame_id,tau_d,lambda,beta,kind,n_d,payload_kib,send_ms,recv_ms,"
        "enc_ms,tx_ms,dec_ms,inf_ms,rtt_ms,e2e_ms,obs_throughput_mbps,obs_rtt_ms"
    ]
    for r in log.offloads:
        lines.append(
            f"{r.frame_id},{r.config.tau_d},{r.config.lambda_q},{r.config.beta},"
            f"{r.kind.value},{r.n_d},{r.payload_kib!r},{r.send_time_ms!r},"
            f"{r.recv_time_ms!r},{r.enc_ms!r},{r.tx_ms!r},{r.dec_ms!r},{r.inf_ms!r},"
            f"{r.rtt_ms!r},{r.e2e_ms!r},{r.observed_throughput_mbps!r},"
            f"{r.observed_rtt_ms!r}"
        )
    return lines


def decision_log_lines(log: RunLog) -> list[str]:
    lines = ["frame_id,eta,kappa,n_candidates,branch,tau_d,lambda,beta,frontier_ids"]
    for d in log.decisions:
        ids = "|".join(str(i) for i in d.frontier_ids)
        lines.append(
            f"{d.frame_id},{d.eta},{d.kappa!r},{d.n_candidates},{d.branch},"
            f"{d.chosen.tau_d},{d.chosen.lambda_q},{d.chosen.beta},{ids}"
        )
    return lines


def write_run_logs(log: RunLog, report: MetricsReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for name, lines in (
        ("render_log.csv", render_log_lines(log)),
        ("offload_log.csv", offload_log_lines(log)),
        ("decision_log.csv", decision_log_lines(log)),
    ):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    summary = {k: getattr(report, k) for k in MetricsReport.ROW_FIELDS}
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
