"""Service orchestration: the cloud-edge-end flow (semantic uploads, cloud
compositing, scene fitting, edge rendering, semantic download), latency
accounting against node/link budgets, SNR sweeps, and the baseline
comparison report.

Delay model: every stage costs payload_bits / link_throughput for its
transmission part plus flops / node_capacity for its compute part.
Wireless payloads count side information (masks, model parameters, and the
classical block map) so the delay ratios are auditable.  Reports are plain
dicts serialized with sorted keys, so identical configurations and seeds
produce byte-identical output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import fixtures
from .channel import ChannelConfig, TxStats, derive_seed
from .classical import classical_transmit, prepare_classical, transmit_prepared
from .config import RunConfig, VideoSource
from .ldpc import make_ldpc_code
from .metrics import epe, ms_ssim, pck, psnr
from .recon.fit import FitConfig, fit_scene
from .recon.render import render
from .recon.scene import scene_poses
from .semantic import SemanticCodecConfig, prepare_semantic, semantic_transmit, transmit_packet
from .synthesis import (
    AlphaMatte,
    composite,
    detail_loss,
    estimate_matte,
    fusion_loss,
    matte_iou,
    semantic_loss,
    transition_mask,
)
from .video import Frame, VideoSequence, box_downsample, flatten_gops, load_raw, segment_gops

LPIPS_NOTE = "unavailable: requires a pretrained perceptual network (out of scope)"


@dataclass(frozen=True)
class NodeSpec:
    role: str
    compute_capacity_flops: float

    def __post_init__(self) -> None:
        if self.role not in ("cloud", "edge", "end"):
            raise ValueError("node role must be cloud, edge or end")
        if self.compute_capacity_flops <= 0:
            raise ValueError("compute capacity must be positive")


@dataclass(frozen=True)
class LinkSpec:
    endpoints: tuple
    throughput_bps: float
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in ("wireless", "fiber"):
            raise ValueError("link kind must be wireless or fiber")
        if self.throughput_bps <= 0:
            raise ValueError("throughput must be positive")


def stage_latency(payload_bits: float, link: LinkSpec, flops: float, node: NodeSpec) -> float:
    """Transmission plus compute time for one stage."""
    if payload_bits < 0 or flops < 0:
        raise ValueError("payload and compute must be non-negative")
    return payload_bits / link.throughput_bps + flops / node.compute_capacity_flops


@dataclass
class StageReport:
    name: str
    status: str = "ok"                  # ok | failed | skipped
    transmission_seconds: float = 0.0
    compute_seconds: float = 0.0
    tx: TxStats = None
    metrics: dict = field(default_factory=dict)
    error: str = ""

    @property
    def delay_seconds(self) -> float:
        return self.transmission_seconds + self.compute_seconds

    def to_dict(self) -> dict:
        data = {
            "name": self.name,
            "status": self.status,
            "transmission_seconds": self.transmission_seconds,
            "compute_seconds": self.compute_seconds,
            "delay_seconds": self.delay_seconds,
            "metrics": self.metrics,
        }
        if self.tx is not None:
            data["tx"] = {
                "payload_bits": self.tx.payload_bits,
                "channel_symbols": self.tx.channel_symbols,
                "wireless_delay_seconds": self.tx.wireless_delay_seconds,
                "decode_failures": self.tx.decode_failures,
                "side_info_bits": self.tx.side_info_bits,
            }
        if self.error:
            data["error"] = self.error
        return data


@dataclass
class ServiceReport:
    stages: list
    notes: dict = field(default_factory=dict)

    @property
    def total_delay_seconds(self) -> float:
        return sum(s.delay_seconds for s in self.stages)

    @property
    def wireless_delay_seconds(self) -> float:
        return sum(
            s.transmission_seconds for s in self.stages if s.metrics.get("link") == "wireless"
        )

    def to_dict(self) -> dict:
        return {
            "stages": [s.to_dict() for s in self.stages],
            "totals": {
                "total_delay_seconds": self.total_delay_seconds,
                "wireless_delay_seconds": self.wireless_delay_seconds,
            },
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def codec_config(cfg: RunConfig) -> SemanticCodecConfig:
    return SemanticCodecConfig(
        block_size=cfg.semantic.block_size,
        power_alloc_exp=cfg.semantic.power_alloc_exp,
        entropy_floor=cfg.semantic.entropy_floor,
        bits_per_symbol_eq=cfg.semantic.bits_per_symbol_eq,
    )


def build_ldpc(cfg: RunConfig):
    return make_ldpc_code(
        cfg.classical.ldpc_k,
        cfg.classical.ldpc_seed,
        var_degree=cfg.classical.ldpc_var_degree,
        check_degree=cfg.classical.ldpc_check_degree,
    )


def resolve_video(source: VideoSource) -> VideoSequence:
    if source.kind == "raw":
        return load_raw(source.path)
    if source.variant == "test":
        return fixtures.make_test_clip(
            source.width, source.height, source.frames, source.fps, source.seed
        )
    if source.variant == "matting":
        video, _, _ = fixtures.make_matting_set(
            source.width, source.height, source.frames, source.fps, source.seed
        )
        return video
    if source.variant == "background":
        return fixtures.make_background_clip(
            source.width, source.height, source.frames, source.fps, source.seed
        )
    raise ValueError(f"unknown synthetic variant {source.variant!r}")


def video_quality(reference: VideoSequence, received: VideoSequence, scales: int) -> dict:
    pairs = list(zip(reference.frames, received.frames))
    return {
        "psnr_db": float(np.mean([psnr(a, b) for a, b in pairs])),
        "ms_ssim": float(np.mean([ms_ssim(a, b, scales=scales) for a, b in pairs])),
    }


def transmit_video(video: VideoSequence, chain: str, cfg: RunConfig, snr_db: float,
                   label: str):
    """Send a whole clip GOP by GOP through one chain; returns the
    reconstructed video and summed accounting.  Channel seeds derive from
    (config seed, chain, label, SNR, GOP index)."""
    gops = segment_gops(video, cfg.semantic.gop_size)
    total = TxStats(0, 0)
    out = []
    if chain == "semantic":
        scfg = codec_config(cfg)
        for i, gop in enumerate(gops):
            ch = ChannelConfig(snr_db, derive_seed(cfg.seed, chain, label, f"{snr_db:.3f}", i))
            rec, st = semantic_transmit(gop, ch, cfg.semantic.symbol_budget, scfg)
            out.append(rec)
            total = total.merge(st)
    elif chain == "classical":
        code = build_ldpc(cfg)
        prev = None
        for i, gop in enumerate(gops):
            ch = ChannelConfig(snr_db, derive_seed(cfg.seed, chain, label, f"{snr_db:.3f}", i))
            rec, st = classical_transmit(
                gop, ch, cfg.classical.qp, code, prev_frame=prev,
                max_iters=cfg.classical.max_iters,
            )
            out.append(rec)
            prev = rec.frames[-1]
            total = total.merge(st)
    else:
        raise ValueError(f"unknown chain {chain!r}")
    return flatten_gops(out, video.fps), total


def _wireless_bits(stats: TxStats) -> int:
    return stats.payload_bits + stats.side_info_bits


@dataclass
class CurveData:
    """Per-SNR, per-chain quality rows, CSV-serializable."""

    rows: list

    def to_csv(self) -> str:
        lines = ["snr_db,chain,psnr_db,ms_ssim"]
        for r in self.rows:
            lines.append(f"{r['snr_db']!r},{r['chain']},{r['psnr_db']!r},{r['ms_ssim']!r}")
        return "\n".join(lines) + "\n"

    def chain_series(self, chain: str, key: str = "psnr_db"):
        rows = sorted((r for r in self.rows if r["chain"] == chain), key=lambda r: r["snr_db"])
        return [r["snr_db"] for r in rows], [r[key] for r in rows]

    def max_adjacent_drop(self, chain: str, key: str = "psnr_db") -> float:
        _, vals = self.chain_series(chain, key)
        return max(prev - cur for prev, cur in zip(vals[1:], vals[:-1]))


def snr_sweep(cfg: RunConfig, snr_list=None) -> CurveData:
    """Both chains over the SNR grid on the reference clip; the source and
    channel encodes are computed once and reused across SNR points."""
    snrs = list(cfg.sweep_snrs_db if snr_list is None else snr_list)
    if not snrs:
        raise ValueError("sweep needs at least one SNR point")
    video = resolve_video(cfg.video)
    gops = segment_gops(video, cfg.semantic.gop_size)
    scfg = codec_config(cfg)
    code = build_ldpc(cfg)
    packets = [prepare_semantic(g, cfg.semantic.symbol_budget, scfg) for g in gops]
    preps = [prepare_classical(g, cfg.classical.qp, code) for g in gops]
    scales = cfg.metrics.ms_ssim_scales

    rows = []
    for snr in snrs:
        sem_out = []
        for i, (gop, packet) in enumerate(zip(gops, packets)):
            ch = ChannelConfig(snr, derive_seed(cfg.seed, "semantic", "sweep", f"{snr:.3f}", i))
            rec, _ = transmit_packet(packet, ch, scfg)
            sem_out.append(rec)
        sem_video = flatten_gops(sem_out, video.fps)
        q = video_quality(video, sem_video, scales)
        rows.append({"snr_db": float(snr), "chain": "semantic", "psnr_db": q["psnr_db"],
                     "ms_ssim": q["ms_ssim"]})
        cls_out = []
        prev = None
        for i, prep in enumerate(preps):
            ch = ChannelConfig(snr, derive_seed(cfg.seed, "classical", "sweep", f"{snr:.3f}", i))
            rec, _ = transmit_prepared(prep, ch, code, prev_frame=prev,
                                       max_iters=cfg.classical.max_iters)
            cls_out.append(rec)
            prev = rec.frames[-1]
        cls_video = flatten_gops(cls_out, video.fps)
        q = video_quality(video, cls_video, scales)
        rows.append({"snr_db": float(snr), "chain": "classical", "psnr_db": q["psnr_db"],
                     "ms_ssim": q["ms_ssim"]})
    return CurveData(rows)


@dataclass
class ComparisonReport:
    curve: CurveData
    semantic_payload_bits: int
    classical_payload_bits: int
    semantic_delay_seconds: float
    classical_delay_seconds: float
    delay_reduction_pct: float

    def to_dict(self) -> dict:
        return {
            "delays": {
                "semantic_payload_bits": self.semantic_payload_bits,
                "classical_payload_bits": self.classical_payload_bits,
                "semantic_delay_seconds": self.semantic_delay_seconds,
                "classical_delay_seconds": self.classical_delay_seconds,
                "delay_reduction_pct": self.delay_reduction_pct,
            },
            "curve": self.curve.rows,
            "notes": {"lpips": LPIPS_NOTE},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def compare_baselines(cfg: RunConfig) -> ComparisonReport:
    """Delay and quality comparison of the two chains on the reference clip
    at the reference wireless throughput."""
    video = resolve_video(cfg.video)
    gops = segment_gops(video, cfg.semantic.gop_size)
    scfg = codec_config(cfg)
    code = build_ldpc(cfg)
    sem_bits = 0
    for gop in gops:
        packet = prepare_semantic(gop, cfg.semantic.symbol_budget, scfg)
        sem_bits += packet.symbol_count * scfg.bits_per_symbol_eq + packet.side_info_bits
    cls_bits = 0
    for gop in gops:
        prep = prepare_classical(gop, cfg.classical.qp, code)
        cls_bits += prep.bitstream.bit_length + prep.bitstream.side_info_bits
    throughput = cfg.links["wireless"].throughput_bps
    sem_delay = sem_bits / throughput
    cls_delay = cls_bits / throughput
    return ComparisonReport(
        curve=snr_sweep(cfg),
        semantic_payload_bits=sem_bits,
        classical_payload_bits=cls_bits,
        semantic_delay_seconds=sem_delay,
        classical_delay_seconds=cls_delay,
        delay_reduction_pct=100.0 * (1.0 - sem_delay / cls_delay),
    )


def _semantic_hop(video, cfg, label, budget):
    """One wireless semantic hop at the configured channel SNR."""
    gops = segment_gops(video, cfg.semantic.gop_size)
    scfg = codec_config(cfg)
    out = []
    total = TxStats(0, 0)
    for i, gop in enumerate(gops):
        ch = ChannelConfig(
            cfg.channel.snr_db, derive_seed(cfg.seed, "service", label, i)
        )
        rec, st = semantic_transmit(gop, ch, budget, scfg)
        out.append(rec)
        total = total.merge(st)
    return flatten_gops(out, video.fps), total


def run_service(cfg: RunConfig) -> ServiceReport:
    """Execute the full service flow.

    Stages: semantic upload of the user video (end -> edge) and the
    background video (camera -> edge), lossless fiber forward to the cloud,
    compositing in the cloud, scene fitting in the cloud, rendering at the
    edge, and semantic download of the rendered video (edge -> end).  A
    failing stage is recorded as failed and everything downstream is
    skipped."""
    wireless = LinkSpec(("end", "edge"), cfg.links["wireless"].throughput_bps, "wireless")
    fiber = LinkSpec(("edge", "cloud"), cfg.links["fiber"].throughput_bps, "fiber")
    end_node = NodeSpec("end", cfg.nodes["end"].flops)
    edge_node = NodeSpec("edge", cfg.nodes["edge"].flops)
    cloud_node = NodeSpec("cloud", cfg.nodes["cloud"].flops)
    scales = cfg.metrics.ms_ssim_scales
    budget = cfg.semantic.service_symbol_budget

    stage_names = [
        "upload_user_video", "upload_background", "forward_to_cloud",
        "video_synthesis", "scene_preprocess", "edge_render", "download_3d_video",
    ]
    stages = {}
    state = {}
    failed = False

    def run_stage(name, fn):
        nonlocal failed
        if failed:
            stages[name] = StageReport(name=name, status="skipped")
            return
        try:
            stages[name] = fn()
        except Exception as exc:  # deliberate: any stage failure aborts downstream
            stages[name] = StageReport(name=name, status="failed", error=str(exc))
            failed = True

    def upload_user():
        if cfg.user_video.kind == "synthetic" and cfg.user_video.variant == "matting":
            video, plate, mattes = fixtures.make_matting_set(
                cfg.user_video.width, cfg.user_video.height,
                cfg.user_video.frames, cfg.user_video.fps, cfg.user_video.seed,
            )
        else:
            video = resolve_video(cfg.user_video)
            plate, mattes = Frame(video.frames[0].data), None
        state.update(user_clean=video, plate=plate, gt_mattes=mattes)
        received, st = _semantic_hop(video, cfg, "upload_user", budget)
        state["user_received"] = received
        delay = stage_latency(_wireless_bits(st), wireless, 0.0, end_node)
        st = replace(st, wireless_delay_seconds=delay)
        return StageReport(
            name="upload_user_video", transmission_seconds=delay, tx=st,
            metrics={"link": "wireless", **video_quality(video, received, scales)},
        )

    def upload_background():
        video = resolve_video(cfg.background_video)
        state["bg_clean"] = video
        received, st = _semantic_hop(video, cfg, "upload_background", budget)
        state["bg_received"] = received
        delay = stage_latency(_wireless_bits(st), wireless, 0.0, end_node)
        st = replace(st, wireless_delay_seconds=delay)
        return StageReport(
            name="upload_background", transmission_seconds=delay, tx=st,
            metrics={"link": "wireless", **video_quality(video, received, scales)},
        )

    def forward_to_cloud():
        user, bg = state["user_received"], state["bg_received"]
        bits = sum(len(v) * v.frames[0].height * v.frames[0].width * 3 * 8 for v in (user, bg))
        delay = stage_latency(bits, fiber, 0.0, cloud_node)
        return StageReport(
            name="forward_to_cloud", transmission_seconds=delay,
            tx=TxStats(payload_bits=bits, channel_symbols=0, wireless_delay_seconds=0.0),
            metrics={"link": "fiber"},
        )

    def video_synthesis():
        user, bg = state["user_received"], state["bg_received"]
        plate = state["plate"]
        syn = cfg.synthesis
        n = min(len(user), len(bg))
        mattes = [
            estimate_matte(user.frames[i], plate, syn.threshold, syn.softness)
            for i in range(n)
        ]
        comp = VideoSequence(
            tuple(composite(user.frames[i], bg.frames[i], mattes[i]) for i in range(n)),
            user.fps,
        )
        state["composite"] = comp
        # channel-free reference composite for quality accounting
        user_c, bg_c = state["user_clean"], state["bg_clean"]
        mattes_ref = [
            estimate_matte(user_c.frames[i], plate, syn.threshold, syn.softness)
            for i in range(n)
        ]
        ref = VideoSequence(
            tuple(composite(user_c.frames[i], bg_c.frames[i], mattes_ref[i]) for i in range(n)),
            user.fps,
        )
        metrics = {"composite_vs_reference": video_quality(ref, comp, scales)}
        if state["gt_mattes"] is not None:
            gt = state["gt_mattes"]
            ious, sem_l, det_l, fus_l = [], [], [], []
            for i in range(n):
                ious.append(matte_iou(mattes[i], gt[i]))
                thumb = AlphaMatte(
                    np.clip(box_downsample(mattes[i].alpha, syn.downsample_factor), 0.0, 1.0)
                )
                sem_l.append(semantic_loss(thumb, gt[i], syn.downsample_factor))
                band = transition_mask(gt[i], syn.radius)
                det_l.append(detail_loss(mattes[i], gt[i], band))
                fus_l.append(
                    fusion_loss(mattes[i], gt[i], user_c.frames[i], bg_c.frames[i])
                )
            metrics.update(
                matte_iou=float(np.mean(ious)),
                coarse_mask_loss=float(np.mean(sem_l)),
                boundary_loss=float(np.mean(det_l)),
                fusion_loss=float(np.mean(fus_l)),
            )
        delay = stage_latency(0.0, fiber, cfg.compute.video_synthesis_flops, cloud_node)
        return StageReport(name="video_synthesis", compute_seconds=delay, metrics=metrics)

    def scene_preprocess():
        if not cfg.reconstruction.enabled:
            return StageReport(
                name="scene_preprocess", status="skipped",
                metrics={"reason": "disabled in config"},
            )
        gt_scene = fixtures.make_benchmark_scene(
            cfg.reconstruction.n_timesteps, cfg.reconstruction.image_size, cfg.reconstruction.n_bases
        )
        frames, depths, tracks, cameras = fixtures.make_fit_inputs(gt_scene, cfg.reconstruction.n_tracks)
        init = fixtures.perturb_scene(gt_scene, cfg.reconstruction.perturb_seed)
        fit_cfg = FitConfig(initial_scene=init, iterations=cfg.reconstruction.iterations,
                            learning_rates={"means": 5e-3})
        result = fit_scene(frames, depths, tracks, cameras, fit_cfg)
        state["scene"] = result.scene
        state["scene_frames"] = frames
        gt_centers = np.concatenate(
            [scene_poses(gt_scene, t)[0] for t in range(gt_scene.n_timesteps)]
        )
        fit_centers = np.concatenate(
            [scene_poses(result.scene, t)[0] for t in range(result.scene.n_timesteps)]
        )
        delay = stage_latency(0.0, fiber, cfg.compute.scene_preprocess_flops, cloud_node)
        return StageReport(
            name="scene_preprocess", compute_seconds=delay,
            metrics={
                "final_loss": result.final_loss,
                "center_epe": epe(fit_centers, gt_centers),
                "center_pck_0p1": pck(fit_centers, gt_centers, 0.1),
            },
        )

    def edge_render():
        if "scene" not in state:
            return StageReport(
                name="edge_render", status="skipped",
                metrics={"reason": "scene preprocessing disabled"},
            )
        scene = state["scene"]
        rendered = VideoSequence(
            tuple(render(scene, t).image for t in range(scene.n_timesteps)), 10.0
        )
        state["rendered"] = rendered
        quality = video_quality(
            VideoSequence(tuple(state["scene_frames"]), 10.0), rendered, scales=1
        )
        delay = stage_latency(0.0, fiber, cfg.compute.render_flops, edge_node)
        return StageReport(
            name="edge_render", compute_seconds=delay,
            metrics={"render_vs_observations": quality},
        )

    def download_3d():
        source = state.get("rendered", state.get("composite"))
        if source is None:
            return StageReport(
                name="download_3d_video", status="skipped",
                metrics={"reason": "nothing to download"},
            )
        received, st = _semantic_hop(source, cfg, "download_3d", budget)
        delay = stage_latency(_wireless_bits(st), wireless, 0.0, end_node)
        st = replace(st, wireless_delay_seconds=delay)
        return StageReport(
            name="download_3d_video", transmission_seconds=delay, tx=st,
            metrics={"link": "wireless", **video_quality(source, received, scales)},
        )

    for name, fn in zip(
        stage_names,
        (upload_user, upload_background, forward_to_cloud, video_synthesis,
         scene_preprocess, edge_render, download_3d),
    ):
        run_stage(name, fn)

    return ServiceReport(
        stages=[stages[name] for name in stage_names],
        notes={"lpips": LPIPS_NOTE},
    )
