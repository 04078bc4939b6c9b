"""Command-line surface: subcommands, exit codes, determinism."""

import json

import numpy as np
import pytest

import splatpack as sp
from splatpack import ply, views as views_io
from splatpack.cli import EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from splatpack.synth import SynthSpec, write_dataset

from test_codec import GOLDEN_PATH


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    write_dataset(SynthSpec(seed=120, n_gaussians=32, fraction_redundant=0.4,
                            n_views=3, image_size=16), root)
    return root


def write_config(tmp_path, **fields):
    fields.setdefault("seed", 9)
    fields.setdefault("gamma_iter", 0.3)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(fields))
    return path


class TestPipelineCommand:
    def test_end_to_end(self, dataset, tmp_path, capsys):
        cfg = write_config(
            tmp_path, rounds=2, prune_interval=2, final_finetune_steps=2, qat_steps=2
        )
        out = tmp_path / "scene.container"
        report_path = tmp_path / "report.json"
        code = main([
            "pipeline", str(dataset / "scene.ply"), "--views", str(dataset / "views"),
            "--config", str(cfg), "--output", str(out), "--report", str(report_path),
            "--json",
        ])
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report == json.loads(report_path.read_text())
        qscene = sp.decode(out.read_bytes())
        assert qscene.count == report["final_count"]
        counts = report["counts_per_round"]
        assert all(b <= a for a, b in zip(counts, counts[1:]))
        assert np.isfinite(report["metrics_vs_input_render"][0]["ssim"])

    def test_noop_pipeline_matches_plain_encode(self, dataset, tmp_path, capsys):
        cfg = write_config(
            tmp_path, gamma_iter=0.0, rounds=0, prune_interval=0,
            final_finetune_steps=0, qat_steps=0,
        )
        out = tmp_path / "noop.container"
        assert main([
            "pipeline", str(dataset / "scene.ply"), "--views", str(dataset / "views"),
            "--config", str(cfg), "--output", str(out), "--json",
        ]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["final_count"] == report["input_count"] == 32

        enc_out = tmp_path / "plain.container"
        assert main([
            "encode", str(dataset / "scene.ply"), "--output", str(enc_out), "--json",
        ]) == EXIT_OK
        assert out.read_bytes() == enc_out.read_bytes()

    def test_missing_views_directory(self, dataset, tmp_path, capsys):
        cfg = write_config(tmp_path)
        code = main([
            "pipeline", str(dataset / "scene.ply"), "--views", str(tmp_path / "missing"),
            "--config", str(cfg), "--output", str(tmp_path / "x.container"),
        ])
        assert code == EXIT_IO
        assert "missing" in capsys.readouterr().err

    def test_seed_required(self, dataset, tmp_path, capsys):
        code = main([
            "pipeline", str(dataset / "scene.ply"), "--views", str(dataset / "views"),
            "--output", str(tmp_path / "x.container"),
        ])
        assert code == EXIT_USAGE


class TestEncodeDecode:
    def test_roundtrip_ply(self, dataset, tmp_path):
        container = tmp_path / "scene.container"
        assert main(["encode", str(dataset / "scene.ply"),
                     "--output", str(container), "--json"]) == EXIT_OK
        out_ply = tmp_path / "decoded.ply"
        assert main(["decode", str(container), "--output", str(out_ply), "--json"]) == EXIT_OK
        decoded = ply.read_scene(out_ply.read_bytes())
        assert decoded.count == 32

    def test_corrupted_container_exits_data(self, dataset, tmp_path, capsys):
        container = tmp_path / "scene.container"
        main(["encode", str(dataset / "scene.ply"), "--output", str(container)])
        blob = bytearray(container.read_bytes())
        blob[len(blob) // 2] ^= 0x40
        bad = tmp_path / "bad.container"
        bad.write_bytes(bytes(blob))
        assert main(["decode", str(bad), "--output", str(tmp_path / "y.ply")]) == EXIT_DATA

    def test_no_morton_flag(self, dataset, tmp_path):
        container = tmp_path / "plain.container"
        assert main(["encode", str(dataset / "scene.ply"), "--no-morton",
                     "--output", str(container)]) == EXIT_OK
        assert not sp.decode(container.read_bytes()).morton_ordered


class TestRenderCommand:
    def test_ply_vs_container_32bit_near_lossless(self, dataset, tmp_path):
        cam_file = dataset / "views" / "cameras.json"
        png_a = tmp_path / "a.png"
        png_b = tmp_path / "b.png"
        assert main(["render", str(dataset / "scene.ply"), "--camera", str(cam_file),
                     "--output", str(png_a)]) == EXIT_OK
        container = tmp_path / "full32.container"
        cfg = tmp_path / "bits.json"
        cfg.write_text(json.dumps({"seed": 0, "gamma_iter": 0.0,
                                   "bits": {"sh_dc": 32, "sh_rest": 32}}))
        assert main(["encode", str(dataset / "scene.ply"), "--config", str(cfg),
                     "--output", str(container)]) == EXIT_OK
        assert main(["render", str(container), "--camera", str(cam_file),
                     "--output", str(png_b)]) == EXIT_OK
        a = views_io.load_image(png_a)
        b = views_io.load_image(png_b)
        # identical after 8-bit PNG rounding when quantization is near-lossless
        assert sp.psnr(a, b) == float("inf") or sp.psnr(a, b) >= 80.0

    def test_empty_scene_black_png(self, tmp_path):
        empty = tmp_path / "empty.ply"
        empty.write_bytes(ply.write_scene(sp.GaussianScene.empty(0)))
        cam = tmp_path / "camera.json"
        from conftest import frontal_camera
        cam.write_text(json.dumps(frontal_camera(16).to_dict()))
        out = tmp_path / "black.png"
        assert main(["render", str(empty), "--camera", str(cam), "--output", str(out)]) == EXIT_OK
        assert np.all(views_io.load_image(out) == 0.0)

    def test_deterministic_png_bytes(self, dataset, tmp_path):
        cam_file = dataset / "views" / "cameras.json"
        a = tmp_path / "r1.png"
        b = tmp_path / "r2.png"
        for out in (a, b):
            assert main(["render", str(dataset / "scene.ply"), "--camera", str(cam_file),
                         "--view-index", "1", "--output", str(out)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_camera_exits_nonzero(self, dataset, tmp_path):
        cam = tmp_path / "camera.json"
        cam.write_text(json.dumps({"width": 8, "height": 8, "fx": 10, "fy": 10,
                                   "cx": 4, "cy": 4,
                                   "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 2],
                                   "translation": [0, 0, 0]}))
        assert main(["render", str(dataset / "scene.ply"), "--camera", str(cam),
                     "--output", str(tmp_path / "x.png")]) == EXIT_DATA


class TestInspect:
    def test_golden_container_documented_json(self, capsys):
        assert main(["inspect", str(GOLDEN_PATH), "--json"]) == EXIT_OK
        info = json.loads(capsys.readouterr().out)
        assert info["count"] == 4
        assert info["morton_ordered"] is True
        assert info["quantizers"]["position"]["bits"] == 8
        assert info["quantizers"]["position"]["step"] == 0.5
        assert set(info["entropy_bits"]) == set(sp.ATTRIBUTE_NAMES)
        assert sum(info["opacity_histogram_64"]) == 4

    def test_empty_scene(self, tmp_path, capsys):
        empty = tmp_path / "empty.ply"
        empty.write_bytes(ply.write_scene(sp.GaussianScene.empty(0)))
        assert main(["inspect", str(empty), "--json"]) == EXIT_OK
        info = json.loads(capsys.readouterr().out)
        assert info["count"] == 0
        assert sum(info["opacity_histogram_64"]) == 0

    def test_histogram_totals_match_count(self, dataset, capsys):
        assert main(["inspect", str(dataset / "scene.ply"), "--json"]) == EXIT_OK
        info = json.loads(capsys.readouterr().out)
        assert sum(info["opacity_histogram_64"]) == info["count"] == 32

    def test_unreadable_file(self, tmp_path):
        assert main(["inspect", str(tmp_path / "nope.ply")]) == EXIT_IO


class TestMetricsCommand:
    def test_psnr_ssim_between_pngs(self, dataset, tmp_path, capsys):
        views = views_io.load_views(dataset / "views")
        img_a = tmp_path / "a.png"
        img_b = tmp_path / "b.png"
        views_io.save_image(img_a, views[0][1])
        views_io.save_image(img_b, views[1][1])
        assert main(["metrics", str(img_a), str(img_b), "--json"]) == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert "psnr" in out and "ssim" in out

    def test_identical_images_inf_sentinel(self, dataset, tmp_path, capsys):
        views = views_io.load_views(dataset / "views")
        img = tmp_path / "same.png"
        views_io.save_image(img, views[0][1])
        assert main(["metrics", str(img), str(img), "--json"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["psnr"] == "inf"

    def test_size_report_fields(self, dataset, tmp_path, capsys):
        views = views_io.load_views(dataset / "views")
        img = tmp_path / "img.png"
        views_io.save_image(img, views[0][1])
        raw = tmp_path / "raw.bin"
        raw.write_bytes(b"x" * 1000)
        comp = tmp_path / "comp.bin"
        comp.write_bytes(b"y" * 250)
        assert main(["metrics", str(img), str(img), "--raw", str(raw),
                     "--compressed", str(comp), "--json"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["compression_ratio"] == 4.0


class TestUsage:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_missing_required_argument(self):
        assert main(["render", "x.ply"]) == EXIT_USAGE
