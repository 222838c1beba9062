"""Run configuration: dataclasses mirroring the JSON config file, loaders,
and the shipped reference configuration.

Reference calibration, documented for auditability:

* wireless throughput 16,089.54 bps is back-derived from transmitting an
  11.5 MB (SI) payload in 5718 s: 11.5e6 * 8 / 5718;
* the semantic symbol budget (378) makes the semantic payload-equivalent
  bits (symbols x 32 + side information) about 4.0% of the classical
  source-coded bits on the reference clip, matching the ~25x payload
  compression implied by the delay table the throughput came from;
* node compute capacities sit inside the published ranges (end 1.2-1.5
  TFLOPS, edge 10-100 TFLOPS, cloud 13-4000 PFLOPS) and stage costs use
  the required-compute figures (video synthesis ~100 TFLOP, scene
  preprocessing ~53 PFLOP, rendering ~7 PFLOP).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

REFERENCE_THROUGHPUT_BPS = 11.5e6 * 8 / 5718.0  # ~16.09 kbps


@dataclass(frozen=True)
class VideoSource:
    """Where a clip comes from: a named synthetic generator or a raw file."""

    kind: str = "synthetic"        # "synthetic" | "raw"
    variant: str = "test"          # "test" | "matting" | "background"
    width: int = 112
    height: int = 112
    frames: int = 8
    fps: float = 8.0
    seed: int = 2024
    path: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("synthetic", "raw"):
            raise ValueError(f"unknown video source kind {self.kind!r}")
        if self.kind == "raw" and not self.path:
            raise ValueError("raw video source needs a path")


@dataclass(frozen=True)
class ChannelSettings:
    snr_db: float = 15.0
    seed: int = 2024


@dataclass(frozen=True)
class ClassicalSettings:
    qp: float = 5.0
    ldpc_k: int = 512
    ldpc_var_degree: int = 3
    ldpc_check_degree: int = 6
    ldpc_seed: int = 11
    max_iters: int = 50


@dataclass(frozen=True)
class SemanticSettings:
    symbol_budget: int = 378          # calibrated against the reference clip
    service_symbol_budget: int = 18000  # roomier budget for service uploads
    gop_size: int = 4                 # the reference config raises this to 8
    block_size: int = 8
    entropy_floor: float = 1e-3
    power_alloc_exp: float = 0.25
    bits_per_symbol_eq: int = 32


@dataclass(frozen=True)
class SynthesisSettings:
    threshold: float = 0.18
    softness: float = 0.1
    radius: int = 2
    downsample_factor: int = 4


@dataclass(frozen=True)
class ReconSettings:
    enabled: bool = True
    image_size: int = 48
    n_timesteps: int = 8
    n_bases: int = 20  # published default basis count
    iterations: int = 150
    n_tracks: int = 4
    perturb_seed: int = 5


@dataclass(frozen=True)
class NodeSettings:
    flops: float

    def __post_init__(self) -> None:
        if self.flops <= 0:
            raise ValueError("node compute capacity must be positive")


@dataclass(frozen=True)
class LinkSettings:
    throughput_bps: float

    def __post_init__(self) -> None:
        if self.throughput_bps <= 0:
            raise ValueError("link throughput must be positive")


@dataclass(frozen=True)
class ComputeSettings:
    video_synthesis_flops: float = 100e12
    scene_preprocess_flops: float = 53e15
    render_flops: float = 7e15


@dataclass(frozen=True)
class MetricsSettings:
    ms_ssim_scales: int = 3


@dataclass(frozen=True)
class RunConfig:
    seed: int = 2024
    video: VideoSource = field(default_factory=VideoSource)
    user_video: VideoSource = field(
        default_factory=lambda: VideoSource(variant="matting", width=64, height=64, seed=77)
    )
    background_video: VideoSource = field(
        default_factory=lambda: VideoSource(variant="background", width=64, height=64, seed=55)
    )
    sweep_snrs_db: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
    channel: ChannelSettings = field(default_factory=ChannelSettings)
    classical: ClassicalSettings = field(default_factory=ClassicalSettings)
    # the shipped reference uses one 8-frame GOP per clip so side information
    # is paid once; plain SemanticSettings() keeps the plain default GOP of 4
    semantic: SemanticSettings = field(default_factory=lambda: SemanticSettings(gop_size=8))
    synthesis: SynthesisSettings = field(default_factory=SynthesisSettings)
    reconstruction: ReconSettings = field(default_factory=ReconSettings)
    nodes: dict = field(
        default_factory=lambda: {
            "end": NodeSettings(flops=1.35e12),
            "edge": NodeSettings(flops=5e13),
            "cloud": NodeSettings(flops=1e17),
        }
    )
    links: dict = field(
        default_factory=lambda: {
            "wireless": LinkSettings(throughput_bps=REFERENCE_THROUGHPUT_BPS),
            "fiber": LinkSettings(throughput_bps=1e10),
        }
    )
    compute: ComputeSettings = field(default_factory=ComputeSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)


def reference_config() -> RunConfig:
    """The shipped, calibrated configuration used by the acceptance runs."""
    return RunConfig()


_NESTED = {
    "video": VideoSource,
    "user_video": VideoSource,
    "background_video": VideoSource,
    "channel": ChannelSettings,
    "classical": ClassicalSettings,
    "semantic": SemanticSettings,
    "synthesis": SynthesisSettings,
    "reconstruction": ReconSettings,
    "compute": ComputeSettings,
    "metrics": MetricsSettings,
}


def config_from_dict(data: dict) -> RunConfig:
    base = reference_config()
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED:
            kwargs[key] = _NESTED[key](**value)
        elif key == "nodes":
            kwargs[key] = {name: NodeSettings(**entry) for name, entry in value.items()}
        elif key == "links":
            kwargs[key] = {name: LinkSettings(**entry) for name, entry in value.items()}
        elif key == "sweep_snrs_db":
            kwargs[key] = tuple(float(v) for v in value)
        elif key == "seed":
            kwargs[key] = int(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return replace(base, **kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    data = asdict(cfg)
    data["sweep_snrs_db"] = list(cfg.sweep_snrs_db)
    return data


def load_config(path) -> RunConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), sort_keys=True, indent=1) + "\n")
