import json
from dataclasses import replace

import numpy as np
import pytest

from semvid.cli import main as cli_main
from semvid.config import (
    ChannelSettings,
    ClassicalSettings,
    VideoSource,
    ReconSettings,
    config_from_dict,
    config_to_dict,
    load_config,
    reference_config,
    save_config,
)
from semvid.pipeline import (
    LinkSpec,
    NodeSpec,
    compare_baselines,
    run_service,
    snr_sweep,
    stage_latency,
    transmit_video,
)
from semvid.video import load_raw


@pytest.fixture(scope="module")
def tiny_config():
    """A configuration small enough for fast unit tests."""
    base = reference_config()
    return replace(
        base,
        video=VideoSource(width=48, height=48, frames=4, seed=9),
        user_video=VideoSource(variant="matting", width=48, height=48, frames=4, seed=77),
        background_video=VideoSource(variant="background", width=48, height=48, frames=4, seed=55),
        sweep_snrs_db=(0.0, 25.0),
        classical=ClassicalSettings(qp=5.0, ldpc_k=256, ldpc_seed=11),
        semantic=replace(base.semantic, symbol_budget=200, service_symbol_budget=4000, gop_size=4),
        reconstruction=ReconSettings(enabled=True, image_size=32, n_timesteps=4, iterations=25),
        metrics=replace(base.metrics, ms_ssim_scales=2),
    )


class TestStageLatency:
    def _link(self, bps):
        return LinkSpec(("end", "edge"), bps, "wireless")

    def _node(self, flops):
        return NodeSpec("edge", flops)

    def test_transmission_only(self):
        assert stage_latency(8e6, self._link(1e6), 0.0, self._node(1e12)) == pytest.approx(8.0)

    def test_compute_only(self):
        assert stage_latency(0.0, self._link(1e6), 10e12, self._node(10e12)) == pytest.approx(1.0)

    def test_reference_throughput_reproduces_published_delay(self):
        cfg = reference_config()
        link = LinkSpec(("edge", "end"), cfg.links["wireless"].throughput_bps, "wireless")
        delay = stage_latency(11.5e6 * 8, link, 0.0, self._node(1e12))
        assert delay == pytest.approx(5718.0, abs=1e-6)

    def test_linear_in_payload(self):
        link = self._link(2.5e5)
        node = self._node(1e12)
        base = stage_latency(1e6, link, 0.0, node)
        for k in (2, 5, 10):
            assert stage_latency(k * 1e6, link, 0.0, node) == pytest.approx(k * base)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            stage_latency(-1.0, self._link(1e6), 0.0, self._node(1.0))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NodeSpec("fog", 1e12)
        with pytest.raises(ValueError):
            LinkSpec(("a", "b"), 0.0, "wireless")
        with pytest.raises(ValueError):
            LinkSpec(("a", "b"), 1e6, "carrier-pigeon")


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = reference_config()
        path = tmp_path / "config.json"
        save_config(cfg, path)
        loaded = load_config(path)
        assert loaded == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            config_from_dict({"never_heard_of_it": 1})

    def test_dict_round_trip(self):
        cfg = reference_config()
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_reference_values(self):
        cfg = reference_config()
        assert cfg.links["wireless"].throughput_bps == pytest.approx(11.5e6 * 8 / 5718.0)
        assert cfg.nodes["end"].flops == pytest.approx(1.35e12)
        assert cfg.compute.scene_preprocess_flops == pytest.approx(53e15)
        assert cfg.semantic.bits_per_symbol_eq == 32


class TestSweep:
    def test_shape_and_determinism(self, tiny_config):
        curve = snr_sweep(tiny_config)
        assert len(curve.rows) == len(tiny_config.sweep_snrs_db) * 2
        chains = {r["chain"] for r in curve.rows}
        assert chains == {"semantic", "classical"}
        again = snr_sweep(tiny_config)
        assert curve.to_csv() == again.to_csv()

    def test_csv_header(self, tiny_config):
        csv = snr_sweep(tiny_config, [25.0]).to_csv()
        assert csv.splitlines()[0] == "snr_db,chain,psnr_db,ms_ssim"

    def test_empty_sweep_rejected(self, tiny_config):
        with pytest.raises(ValueError):
            snr_sweep(tiny_config, [])


class TestTransmitVideo:
    def test_semantic_stats(self, tiny_config):
        video_cfg = tiny_config.video
        from semvid.pipeline import resolve_video

        video = resolve_video(video_cfg)
        received, stats = transmit_video(video, "semantic", tiny_config, 25.0, "unit")
        assert len(received) == len(video)
        assert stats.channel_symbols == tiny_config.semantic.symbol_budget
        assert stats.decode_failures == 0

    def test_unknown_chain(self, tiny_config):
        from semvid.pipeline import resolve_video

        video = resolve_video(tiny_config.video)
        with pytest.raises(ValueError):
            transmit_video(video, "quantum", tiny_config, 10.0, "unit")


class TestCompare:
    def test_reports_delay_and_quality(self, tiny_config):
        report = compare_baselines(tiny_config)
        assert report.semantic_delay_seconds < report.classical_delay_seconds
        assert 0 < report.delay_reduction_pct < 100
        payload = json.loads(report.to_json())
        assert "delays" in payload and "curve" in payload
        assert payload["notes"]["lpips"].startswith("unavailable")

    def test_high_snr_within_3db_of_channel_free(self, tiny_config):
        # at 25 dB both chains sit within 3 dB of their channel-free quality
        from semvid.classical import prepare_classical, source_decode
        from semvid.metrics import psnr
        from semvid.pipeline import build_ldpc, codec_config, resolve_video
        from semvid.semantic import semantic_transmit
        from semvid.channel import ChannelConfig
        from semvid.video import segment_gops

        curve = snr_sweep(tiny_config, [25.0])
        by_chain = {r["chain"]: r["psnr_db"] for r in curve.rows}

        video = resolve_video(tiny_config.video)
        gops = segment_gops(video, tiny_config.semantic.gop_size)
        code = build_ldpc(tiny_config)
        scfg = codec_config(tiny_config)
        cls_free, sem_free = [], []
        for gop in gops:
            decoded = source_decode(prepare_classical(gop, tiny_config.classical.qp, code).bitstream)
            cls_free.extend(psnr(a, b) for a, b in zip(gop.frames, decoded.frames))
            clean, _ = semantic_transmit(
                gop, ChannelConfig(snr_db=300.0, seed=0),
                tiny_config.semantic.symbol_budget, scfg,
            )
            sem_free.extend(psnr(a, b) for a, b in zip(gop.frames, clean.frames))
        assert abs(by_chain["classical"] - np.mean(cls_free)) <= 3.0
        assert abs(by_chain["semantic"] - np.mean(sem_free)) <= 3.0


class TestService:
    def test_stage_structure_and_totals(self, tiny_config):
        report = run_service(tiny_config)
        names = [s.name for s in report.stages]
        assert names == [
            "upload_user_video", "upload_background", "forward_to_cloud",
            "video_synthesis", "scene_preprocess", "edge_render", "download_3d_video",
        ]
        assert all(s.status == "ok" for s in report.stages)
        total = sum(s.delay_seconds for s in report.stages)
        assert report.total_delay_seconds == pytest.approx(total, abs=0)
        payload = report.to_dict()
        assert payload["totals"]["total_delay_seconds"] == pytest.approx(total)
        assert payload["notes"]["lpips"].startswith("unavailable")

    def test_reconstruction_disabled_marks_skipped(self, tiny_config):
        cfg = replace(tiny_config, reconstruction=replace(tiny_config.reconstruction, enabled=False))
        report = run_service(cfg)
        status = {s.name: s.status for s in report.stages}
        assert status["scene_preprocess"] == "skipped"
        assert status["edge_render"] == "skipped"
        assert status["video_synthesis"] == "ok"
        vs = [s for s in report.stages if s.name == "video_synthesis"][0]
        assert "composite_vs_reference" in vs.metrics

    def test_failed_stage_aborts_downstream(self, tiny_config):
        cfg = replace(tiny_config, synthesis=replace(tiny_config.synthesis, threshold=-1.0))
        report = run_service(cfg)
        status = {s.name: s.status for s in report.stages}
        assert status["video_synthesis"] == "failed"
        assert status["scene_preprocess"] == "skipped"
        assert status["download_3d_video"] == "skipped"
        failed = [s for s in report.stages if s.status == "failed"][0]
        assert failed.error

    def test_bypass_channel_composite_matches_local(self, tiny_config):
        cfg = replace(
            tiny_config,
            channel=ChannelSettings(snr_db=300.0, seed=1),
            semantic=replace(tiny_config.semantic, service_symbol_budget=10**9),
            reconstruction=replace(tiny_config.reconstruction, enabled=False),
        )
        report = run_service(cfg)
        vs = [s for s in report.stages if s.name == "video_synthesis"][0]
        assert vs.metrics["composite_vs_reference"]["psnr_db"] >= 40.0

    def test_wireless_delay_scales_with_payload(self, tiny_config):
        report = run_service(tiny_config)
        upload = report.stages[0]
        link_bps = tiny_config.links["wireless"].throughput_bps
        expected = (upload.tx.payload_bits + upload.tx.side_info_bits) / link_bps
        assert upload.transmission_seconds == pytest.approx(expected)


class TestCli:
    def test_show_config(self, capsys):
        assert cli_main(["show-config"]) == 0
        out = capsys.readouterr().out
        assert json.loads(out)["seed"] == 2024

    def test_transmit_writes_outputs(self, tmp_path, tiny_config):
        cfg_path = tmp_path / "cfg.json"
        save_config(tiny_config, cfg_path)
        out = tmp_path / "out"
        rc = cli_main(["transmit", "--config", str(cfg_path), "--chain", "semantic",
                       "--snr", "25", "--out", str(out)])
        assert rc == 0
        video = load_raw(out / "received_semantic.rgb")
        assert len(video) == tiny_config.video.frames
        payload = json.loads((out / "transmit_semantic.json").read_text())
        assert payload["snr_db"] == 25.0

    def test_sweep_and_compare(self, tmp_path, tiny_config):
        cfg_path = tmp_path / "cfg.json"
        save_config(replace(tiny_config, sweep_snrs_db=(25.0,)), cfg_path)
        out = tmp_path / "sweep"
        assert cli_main(["sweep", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert (out / "curves.csv").exists()
        out2 = tmp_path / "cmp"
        assert cli_main(["compare", "--config", str(cfg_path), "--out", str(out2)]) == 0
        assert (out2 / "comparison.json").exists()

    def test_composite(self, tmp_path, tiny_config):
        cfg_path = tmp_path / "cfg.json"
        save_config(tiny_config, cfg_path)
        out = tmp_path / "comp"
        assert cli_main(["composite", "--config", str(cfg_path), "--out", str(out)]) == 0
        payload = json.loads((out / "composite.json").read_text())
        assert payload["matte_iou"] > 0.9
        assert (out / "composite.rgb").exists()

    def test_reconstruct(self, tmp_path, tiny_config):
        cfg_path = tmp_path / "cfg.json"
        save_config(tiny_config, cfg_path)
        out = tmp_path / "rec"
        assert cli_main(["reconstruct", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert (out / "scene.json").exists()
        payload = json.loads((out / "reconstruct.json").read_text())
        assert payload["final_loss"] >= 0.0
        assert 0.0 <= payload["center_pck_0p1"] <= 1.0

    def test_pipeline_command(self, tmp_path, tiny_config):
        cfg_path = tmp_path / "cfg.json"
        save_config(tiny_config, cfg_path)
        out = tmp_path / "svc"
        assert cli_main(["pipeline", "--config", str(cfg_path), "--out", str(out)]) == 0
        payload = json.loads((out / "service_report.json").read_text())
        assert len(payload["stages"]) == 7

    def test_seed_override(self, tmp_path, tiny_config):
        cfg_path = tmp_path / "cfg.json"
        save_config(replace(tiny_config, sweep_snrs_db=(25.0,)), cfg_path)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        cli_main(["sweep", "--config", str(cfg_path), "--seed", "1", "--out", str(out_a)])
        cli_main(["sweep", "--config", str(cfg_path), "--seed", "2", "--out", str(out_b)])
        assert (out_a / "curves.csv").read_text() != (out_b / "curves.csv").read_text()
