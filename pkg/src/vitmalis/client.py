"""Device-side loop: camera buffer, renderer, local cache, local tracker,
offload manager and the per-policy decision logic.

The simulated client is one logical timeline. Exactly one offload is in
flight at a time; the next frame is offloaded the instant the previous
result arrives (back-to-back discipline). All delays are charged from the
network trace and the analytic server; nothing reads the wall clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import netsim, serversim
from .estimator import (
    Configuration,
    EstimatorBundle,
    NetEstimate,
    accuracy_features,
    predict_accuracy_batch,
    predict_size_batch,
    size_features,
    transmission_ms,
    update_net_estimate,
)
from .grid import DownsampleMask, GridGeometry, RegionType, RegionTypeMap, mask_from_types
from .motion import analyze_motion, classify_regions, compute_relevance, downsampled_motion
from .netsim import NetworkTrace
from .optimizer import (
    DEFAULT_ETA_THRESHOLD,
    DEFAULT_KAPPA_THRESHOLD,
    EvaluatedConfig,
    RuntimeState,
    enumerate_candidates,
    pareto_frontier,
    select_configuration,
)
from .scene import Box, FrameTruth
from .serversim import PayloadKind, ServerProfile
from .tracker import TrackerState, compute_kappa, tracker_reinit, tracker_step

POLICY_NAMES = ("Back2Back", "TrackB2B", "TrackRoI", "TrackUD", "ViTMAlis")
ABLATIONS = ("no_regtype", "no_mlps", "no_dynares")

# On-device overheads charged to the timeline (constants, milliseconds).
MOTION_ANALYSIS_MS = 10.0  # overlaps encoding: only max(enc, 10) is charged
ESTIMATOR_SWEEP_MS = 9.0
OPTIMIZER_MS = 2.0

DELTA_M = 0.001
DELTA_RHO = 0.0


@dataclass(frozen=True)
class PolicyConfig:
    """One evaluated policy plus its knobs."""

    name: str
    jpeg_quality: int = 95
    trackud_threshold_frames: int = 15
    lambda_set: tuple[int, ...] = (70, 75, 80, 85, 90, 95, 100)
    beta_set: tuple[int, ...] = (0, 1, 2, 3, 4)
    delta_eta: int = DEFAULT_ETA_THRESHOLD
    delta_kappa: float = DEFAULT_KAPPA_THRESHOLD
    ablation: str | None = None  # no_regtype | no_mlps | no_dynares

    def __post_init__(self) -> None:
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}, expected one of {POLICY_NAMES}")
        if not 1 <= self.jpeg_quality <= 100:
            raise ValueError("jpeg_quality must be in [1, 100]")
        if self.trackud_threshold_frames < 1:
            raise ValueError("trackud_threshold_frames must be >= 1")
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.ablation is not None and self.name != "ViTMAlis":
            raise ValueError("ablations apply to the ViTMAlis policy only")

    @property
    def uses_tracker(self) -> bool:
        return self.name != "Back2Back"

    @property
    def label(self) -> str:
        return self.name if self.ablation is None else f"{self.name}-{self.ablation}"


@dataclass
class LocalCache:
    """Most recent remote inference result, at most one entry."""

    result_frame_id: int = -1
    boxes: tuple[Box, ...] = ()
    timestamp_ms: float = 0.0


@dataclass(frozen=True)
class OffloadRecord:
    frame_id: int
    config: Configuration
    kind: PayloadKind
    n_d: int
    payload_kib: float
    send_time_ms: float  # start of frame encoding
    recv_time_ms: float
    enc_ms: float
    tx_ms: float
    dec_ms: float
    inf_ms: float
    rtt_ms: float
    e2e_ms: float
    observed_throughput_mbps: float
    observed_rtt_ms: float

    def __post_init__(self) -> None:
        if self.recv_time_ms <= self.send_time_ms:
            raise RuntimeError("simulation time inversion: recv before send")


@dataclass(frozen=True)
class DecisionRecord:
    frame_id: int
    eta: int
    kappa: float
    n_candidates: int
    frontier_ids: tuple[int, ...]
    chosen: Configuration
    branch: str  # singleton | urgent | knee
    pairs: tuple[tuple[float, float], ...] = ()  # (T_hat, A_hat), verbose only


@dataclass(frozen=True)
class RenderRow:
    frame_id: int
    source: str  # cache | tracker
    n_boxes: int
    eta: int
    kappa: float


@dataclass
class RunLog:
    render_rows: list[RenderRow] = field(default_factory=list)
    rendered_boxes: list[tuple[Box, ...]] = field(default_factory=list)
    offloads: list[OffloadRecord] = field(default_factory=list)
    offload_boxes: list[tuple[Box, ...]] = field(default_factory=list)
    decisions: list[DecisionRecord] = field(default_factory=list)


def renderer_poll(
    cache: LocalCache, tracker: TrackerState | None, frame_id: int, geom: GridGeometry
) -> tuple[str, tuple[Box, ...]]:
    """Serve one render query: exact cache hit, else tracker prediction.

    Without a tracker the stale cached result is reused as-is.
    """
    if cache.result_frame_id == frame_id:
        return "cache", cache.boxes
    if tracker is not None:
        tracker_step(tracker, frame_id - tracker.synced_frame, geom)
        return "tracker", tracker.render_boxes()
    return "cache", cache.boxes


@dataclass
class _Inflight:
    frame_id: int
    boxes: tuple[Box, ...]
    recv_ms: float
    record: OffloadRecord


@dataclass
class _Plan:
    config: Configuration
    mask: DownsampleMask
    kind: PayloadKind
    pre_encode_ms: float  # serial overhead before encoding starts
    overlap_encode_ms: float  # work overlapping the encoder (motion analysis)
    decision: DecisionRecord | None


class Simulation:
    """One policy, one scene, one trace; produces the full run log."""

    def __init__(
        self,
        policy: PolicyConfig,
        truths: list[FrameTruth],
        geom: GridGeometry,
        trace: NetworkTrace,
        profile: ServerProfile,
        bundle: EstimatorBundle | None = None,
        fps: float = 30.0,
        verbose_decisions: bool = False,
        transport=None,
    ):
        if policy.name == "ViTMAlis" and bundle is None:
            raise ValueError("ViTMAlis requires trained estimator artifacts")
        self.policy = policy
        self.truths = truths
        self.geom = geom
        self.trace = trace
        self.profile = profile
        self.bundle = bundle
        self.frame_ms = 1000.0 / fps
        self.verbose = verbose_decisions
        # Transport returns the remote result (boxes, inference_ms); decode
        # timing is always derived locally so both transports agree.
        self.transport = transport if transport is not None else self._local_infer

        self.cache = LocalCache()
        self.tracker: TrackerState | None = TrackerState() if policy.uses_tracker else None
        self.net_history: list[tuple[float, float]] = []
        self.last_sent_frame = -1
        self.last_e2e_ms: float | None = None
        self.inflight: _Inflight | None = None
        self.pending_frame: int | None = 0  # first offload fires at frame 0
        self.log = RunLog()

        if policy.name == "ViTMAlis":
            beta_set = (4,) if policy.ablation == "no_dynares" else policy.beta_set
            self.candidates = enumerate_candidates(policy.lambda_set, beta_set)

    # -- policy decision ---------------------------------------------------

    def _tracker_boxes_now(self, frame_id: int) -> tuple[Box, ...]:
        if self.tracker is None:
            return ()
        return tracker_step(self.tracker, frame_id - self.tracker.synced_frame, self.geom)

    def _eta(self, frame_id: int) -> int:
        if self.last_sent_frame < 0:
            return 0
        return frame_id - self.last_sent_frame

    def _decide(self, frame_id: int) -> _Plan:
        policy = self.policy
        truth = self.truths[frame_id]
        zeros = DownsampleMask.zeros(self.geom.region_count)
        quality = policy.jpeg_quality

        if policy.name in ("Back2Back", "TrackB2B"):
            return _Plan(Configuration(0, quality, 0), zeros, PayloadKind.MIXED, 0.0, 0.0, None)

        if policy.name == "TrackUD":
            threshold_ms = policy.trackud_threshold_frames * self.frame_ms
            if self.last_e2e_ms is not None and self.last_e2e_ms > threshold_ms:
                mask = DownsampleMask.ones(self.geom.region_count)
                return _Plan(
                    Configuration(2, quality, 4), mask, PayloadKind.UNIFORM, 0.0, 0.0, None
                )
            return _Plan(Configuration(0, quality, 0), zeros, PayloadKind.MIXED, 0.0, 0.0, None)

        motion = analyze_motion(truth, self.geom)
        boxes = self._tracker_boxes_now(frame_id)
        relevance = compute_relevance(boxes, self.geom)
        types = classify_regions(motion, relevance, DELTA_M, DELTA_RHO)

        if policy.name == "TrackRoI":
            # Blank out everything not classified as a dynamic-object region.
            # With no tracked objects there are no DORs; fall back to the
            # full frame rather than sending an empty one.
            if not boxes:
                return _Plan(
                    Configuration(0, quality, 0), zeros, PayloadKind.MIXED, 0.0,
                    MOTION_ANALYSIS_MS, None,
                )
            mask = DownsampleMask(tuple(t is not RegionType.DOR for t in types.types))
            return _Plan(
                Configuration(0, quality, 0),
                mask,
                PayloadKind.BLANKED,
                0.0,
                MOTION_ANALYSIS_MS,
                None,
            )

        # ViTMAlis
        if policy.ablation == "no_regtype":
            types = RegionTypeMap(
                tuple(
                    RegionType.DOR if t is RegionType.DOR else RegionType.CMR
                    for t in types.types
                )
            )
        masks = {tau: mask_from_types(types, tau) for tau in (0, 1, 2)}
        n_ds = {tau: masks[tau].n_downsampled for tau in (0, 1, 2)}
        m_ds = {tau: downsampled_motion(motion, masks[tau]) for tau in (0, 1, 2)}

        net = update_net_estimate(self.net_history)
        bundle = self.bundle
        feats_size = np.stack(
            [
                size_features(c, n_ds[c.tau_d], m_ds[c.tau_d], motion.m_frame)
                for c in self.candidates
            ]
        )
        feats_acc = np.stack(
            [
                accuracy_features(
                    c,
                    n_ds[c.tau_d],
                    m_ds[c.tau_d],
                    motion.m_frame,
                    relevance.mean_rho,
                    relevance.std_rho,
                )
                for c in self.candidates
            ]
        )
        sizes = predict_size_batch(bundle.size_model, feats_size)
        accs = predict_accuracy_batch(bundle.acc_model, feats_acc)

        evaluated = []
        for i, c in enumerate(self.candidates):
            enc = bundle.encode_profile.lookup(n_ds[c.tau_d], c.lambda_q)
            tx = transmission_ms(float(sizes[i]), net.throughput_hat)
            inf_ms = bundle.inference_models.estimate(c.beta, n_ds[c.tau_d])
            latency = enc + tx + bundle.encode_profile.dec_mean_ms + inf_ms + net.rtt_hat
            evaluated.append(EvaluatedConfig(c, latency, float(accs[i])))

        eta = self._eta(frame_id)
        kappa = compute_kappa(self.tracker)
        chosen, branch = select_configuration(
            evaluated, RuntimeState(eta, kappa), policy.delta_eta, policy.delta_kappa
        )
        frontier = pareto_frontier(evaluated)
        frontier_keys = {id(p) for p in frontier}
        frontier_ids = tuple(i for i, p in enumerate(evaluated) if id(p) in frontier_keys)
        decision = DecisionRecord(
            frame_id=frame_id,
            eta=eta,
            kappa=kappa,
            n_candidates=len(evaluated),
            frontier_ids=frontier_ids,
            chosen=chosen,
            branch=branch,
            pairs=tuple((p.latency_hat, p.accuracy_hat) for p in evaluated)
            if self.verbose
            else (),
        )
        return _Plan(
            chosen,
            masks[chosen.tau_d],
            PayloadKind.MIXED,
            ESTIMATOR_SWEEP_MS + OPTIMIZER_MS,
            MOTION_ANALYSIS_MS,
            decision,
        )

    # -- offload lifecycle -------------------------------------------------

    def _local_infer(
        self,
        config: Configuration,
        mask: DownsampleMask,
        frame_id: int,
        payload_kib: float,
        kind: PayloadKind,
    ) -> tuple[tuple[Box, ...], float]:
        result = serversim.infer(
            self.profile, config, mask, self.truths[frame_id], self.geom, kind
        )
        return result.boxes, result.inference_ms

    def offload_frame(self, frame_id: int, decision_time_ms: float) -> None:
        """Decide, encode, transmit and schedule the receipt of one frame."""
        if self.inflight is not None:
            raise RuntimeError("an offload is already in flight")
        truth = self.truths[frame_id]
        plan = self._decide(frame_id)

        enc_true = serversim.true_encode_ms(
            self.profile, plan.config, self.geom, plan.mask, plan.kind, frame_id
        )
        enc = max(enc_true, plan.overlap_encode_ms)
        size_kib = serversim.true_size(
            self.profile, plan.config, truth, self.geom, plan.mask, plan.kind
        )
        boxes, inf_ms = self.transport(plan.config, plan.mask, frame_id, size_kib, plan.kind)

        enc_start = decision_time_ms + plan.pre_encode_ms
        upload_start = enc_start + enc
        upload_done = netsim.transmit(self.trace, size_kib * 1024.0, upload_start)
        tx = upload_done - upload_start
        dec = serversim.true_decode_ms(
            self.profile, plan.config, self.geom, plan.mask, plan.kind, frame_id
        )
        rtt = netsim.rtt_at(self.trace, upload_done + dec + inf_ms)
        e2e = enc + tx + dec + inf_ms + rtt
        recv = enc_start + e2e

        record = OffloadRecord(
            frame_id=frame_id,
            config=plan.config,
            kind=plan.kind,
            n_d=plan.mask.n_downsampled,
            payload_kib=size_kib,
            send_time_ms=enc_start,
            recv_time_ms=recv,
            enc_ms=enc,
            tx_ms=tx,
            dec_ms=dec,
            inf_ms=inf_ms,
            rtt_ms=rtt,
            e2e_ms=e2e,
            observed_throughput_mbps=size_kib * 8.192 / tx,
            observed_rtt_ms=rtt,
        )
        self.inflight = _Inflight(frame_id, boxes, recv, record)
        self.last_sent_frame = frame_id
        if plan.decision is not None:
            self.log.decisions.append(plan.decision)

    def _receive(self, inflight: _Inflight) -> None:
        record = inflight.record
        self.cache.result_frame_id = inflight.frame_id
        self.cache.boxes = inflight.boxes
        self.cache.timestamp_ms = record.recv_time_ms

        current = int(record.recv_time_ms // self.frame_ms)
        current = min(current, len(self.truths) - 1)
        if self.tracker is not None:
            self.tracker = tracker_reinit(
                self.tracker, inflight.boxes, inflight.frame_id, current, self.geom
            )
        self.net_history.append(
            (record.observed_throughput_mbps, record.observed_rtt_ms)
        )
        self.last_e2e_ms = record.e2e_ms
        self.log.offloads.append(record)
        self.log.offload_boxes.append(inflight.boxes)
        self.inflight = None
        # Back-to-back: offload the most recently captured frame right away.
        # If it was already offloaded, wait for the next capture instead of
        # re-sending the same frame.
        if current > self.last_sent_frame:
            self.offload_frame(current, record.recv_time_ms)
        elif current + 1 < len(self.truths):
            self.pending_frame = current + 1

    # -- main loop ----------------------------------------------------------

    def run(self) -> RunLog:
        """Renderer polls at each frame's display deadline (the next capture
        instant); receipts landing within the display window are visible."""
        for f in range(len(self.truths)):
            t_f = f * self.frame_ms
            if self.pending_frame == f:
                self.pending_frame = None
                self.offload_frame(f, t_f)
            while self.inflight is not None and self.inflight.recv_ms < t_f + self.frame_ms:
                self._receive(self.inflight)
            source, boxes = renderer_poll(self.cache, self.tracker, f, self.geom)
            self.log.render_rows.append(
                RenderRow(
                    frame_id=f,
                    source=source,
                    n_boxes=len(boxes),
                    eta=self._eta(f),
                    kappa=compute_kappa(self.tracker),
                )
            )
            self.log.rendered_boxes.append(boxes)
        return self.log


def simulate(
    policy: PolicyConfig,
    truths: list[FrameTruth],
    geom: GridGeometry,
    trace: NetworkTrace,
    profile: ServerProfile,
    bundle: EstimatorBundle | None = None,
    fps: float = 30.0,
    verbose_decisions: bool = False,
    transport=None,
) -> RunLog:
    sim = Simulation(
        policy, truths, geom, trace, profile, bundle, fps, verbose_decisions, transport
    )
    return sim.run()
