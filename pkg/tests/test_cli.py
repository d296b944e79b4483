import json
from pathlib import Path

import numpy as np
import pytest

from stainbench.cli import main
from stainbench.core import encode_tensor, loads, save_image

FIXTURES = Path(__file__).parent / "fixtures"


def _json(path):
    return loads(Path(path).read_text())


def test_evaluate_identical_dirs(tmp_path, texture):
    d = tmp_path / "p"
    d.mkdir()
    for i in range(2):
        save_image(np.roll(texture, 7 * i, axis=1), d / f"{i}.png")
    out = tmp_path / "r.json"
    assert main(["evaluate", "--pred", str(d), "--gt", str(d), "--out", str(out), "--team", "t"]) == 0
    rep = _json(out)
    assert rep["aggregate"]["mean_ssim"] == 1.0
    assert rep["aggregate"]["mean_psnr_db"] == "inf"
    assert rep["team"] == "t"


def test_rank_challenge_results(tmp_path):
    out = tmp_path / "lb.json"
    assert main(["rank", "--in", str(FIXTURES / "challenge_results.json"), "--out", str(out)]) == 0
    rows = _json(out)["rows"]
    assert [r["team"] for r in rows] == ["arpitdec5", "Just4Fun", "lifangda02", "stan9", "guanxianchao", "vivek23"]
    assert [r["final_score"] for r in rows] == [1.4, 1.6, 3.8, 4.0, 4.2, 6.0]
    assert set(rows[0]) == {"team", "mean_psnr_db", "rank_psnr", "mean_ssim", "rank_ssim", "final_score", "final_rank"}


def test_rank_from_evaluate_reports(tmp_path, texture):
    gt, pa, pb = (tmp_path / n for n in ("gt", "a", "b"))
    for d in (gt, pa, pb):
        d.mkdir()
    save_image(texture, gt / "x.png")
    save_image(np.clip(texture.astype(int) + 4, 0, 255).astype(np.uint8), pa / "x.png")
    save_image(np.clip(texture.astype(int) + 30, 0, 255).astype(np.uint8), pb / "x.png")
    for name, d in (("alpha", pa), ("beta", pb)):
        assert main(["evaluate", "--pred", str(d), "--gt", str(gt), "--out", str(tmp_path / f"{name}.json")]) == 0
    out = tmp_path / "lb.json"
    assert main(["rank", "--in", str(tmp_path / "alpha.json"), str(tmp_path / "beta.json"), "--out", str(out)]) == 0
    assert [r["team"] for r in _json(out)["rows"]] == ["alpha", "beta"]


def test_register_three_landmarks(tmp_path, texture, capsys):
    save_image(texture, tmp_path / "a.png")
    lm = {"pairs": [{"moving": [x, y], "fixed": [x, y]} for x, y in ((10, 10), (200, 10), (10, 200))]}
    (tmp_path / "lm.json").write_text(json.dumps(lm))
    code = main([
        "register", "--he", str(tmp_path / "a.png"), "--ihc", str(tmp_path / "a.png"),
        "--landmarks", str(tmp_path / "lm.json"), "--out", str(tmp_path / "o.png"),
    ])
    assert code == 2
    assert "insufficient correspondences" in capsys.readouterr().err


def test_register_small_pair(tmp_path, texture):
    save_image(texture, tmp_path / "a.png")
    pts = [(20, 20), (230, 20), (230, 230), (20, 230), (128, 60)]
    lm = {"pairs": [{"moving": [x, y], "fixed": [x, y]} for x, y in pts]}
    (tmp_path / "lm.json").write_text(json.dumps(lm))
    args = [
        "register", "--he", str(tmp_path / "a.png"), "--ihc", str(tmp_path / "a.png"),
        "--landmarks", str(tmp_path / "lm.json"), "--out", str(tmp_path / "o.png"),
        "--report", str(tmp_path / "rep.json"), "--overlay", str(tmp_path / "ov.png"),
        "--iterations", "5", "--levels", "1",
    ]
    assert main(args) == 0
    rep = _json(tmp_path / "rep.json")
    assert len(rep["tiles"]) == 16
    assert (tmp_path / "ov.png").is_file()


def test_unknown_flag(capsys):
    assert main(["evaluate", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert main(["evaluate", "--pred", str(tmp_path / "x"), "--gt", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_loss_subcommand(tmp_path):
    (tmp_path / "z.tsr").write_bytes(encode_tensor(np.array([2.0, 0.0])))
    (tmp_path / "p.json").write_text(json.dumps({"alpha": [1, 1], "gamma": 2, "y": 1}))
    out = tmp_path / "v.json"
    assert main(["loss", "focal", "--inputs", str(tmp_path / "z.tsr"), "--params", str(tmp_path / "p.json"),
                 "--out", str(out)]) == 0
    res = _json(out)
    assert res["loss"] == "focal" and res["clamped"] is False
    assert res["value"] == pytest.approx(0.0018036, abs=1e-6)


def test_loss_clamp_flag_and_missing_param(tmp_path):
    (tmp_path / "p.json").write_text(json.dumps({"d_real": 1.0, "d_fake": 1.0}))
    out = tmp_path / "v.json"
    assert main(["loss", "pix2pix-dis", "--params", str(tmp_path / "p.json"), "--out", str(out)]) == 0
    assert _json(out)["clamped"] is True
    (tmp_path / "q.json").write_text("{}")
    assert main(["loss", "pix2pix-dis", "--params", str(tmp_path / "q.json")]) == 2


def test_loss_dwt_writes_tensor(tmp_path):
    img = np.random.default_rng(0).uniform(0, 255, (4, 6)).astype(np.float32)
    (tmp_path / "x.tsr").write_bytes(encode_tensor(img))
    assert main(["loss", "dwt", "--inputs", str(tmp_path / "x.tsr"), "--tensor-out", str(tmp_path / "q.tsr"),
                 "--out", str(tmp_path / "v.json")]) == 0
    assert _json(tmp_path / "v.json")["shape"] == [2, 3, 4]
    assert (tmp_path / "q.tsr").stat().st_size == 4 + 4 + 12 + 24 * 4


def _patch_dir(tmp_path, texture):
    save_image(texture, tmp_path / "he.png")
    save_image(texture, tmp_path / "ihc.png")
    out = tmp_path / "patches"
    args = ["patchify", "--he", str(tmp_path / "he.png"), "--ihc", str(tmp_path / "ihc.png"),
            "--wsi-id", "s1", "--her2", "3+", "--split", "test", "--out", str(out), "--size", "128"]
    assert main(args) == 0
    return out


def test_patchify_outputs(tmp_path, texture):
    out = _patch_dir(tmp_path, texture)
    man = _json(out / "manifest.json")
    assert [e["patch_id"] for e in man["entries"]] == ["s1_0_0", "s1_128_0", "s1_0_128", "s1_128_128"]
    assert (out / "s1_128_0_HE.png").is_file() and (out / "s1_128_0_IHC.png").is_file()
    assert man["summary"] == {"test": 4, "train": 0, "val": 0}


def test_validate_exit_codes(tmp_path, texture):
    out = _patch_dir(tmp_path, texture)
    sub = tmp_path / "sub"
    sub.mkdir()
    for f in out.glob("*_IHC.png"):
        (sub / f.name).write_bytes(f.read_bytes())
    args = ["validate", "--pred", str(sub), "--manifest", str(out / "manifest.json"), "--out", str(tmp_path / "v.json")]
    assert main(args) == 0
    (sub / "s1_0_0_IHC.png").unlink()
    assert main(args) == 1
    assert _json(tmp_path / "v.json")["reasons"] == ["missing"]


def test_config_merge(tmp_path, texture):
    save_image(texture, tmp_path / "he.png")
    (tmp_path / "cfg.json").write_text(json.dumps({"size": 64, "patchify": {"stride": 96}}))
    base = ["patchify", "--he", str(tmp_path / "he.png"), "--ihc", str(tmp_path / "he.png"),
            "--wsi-id", "w", "--her2", "0", "--split", "train", "--config", str(tmp_path / "cfg.json")]
    assert main(base + ["--out", str(tmp_path / "a")]) == 0
    man = _json(tmp_path / "a" / "manifest.json")
    assert (man["size"], man["stride"], len(man["entries"])) == (64, 96, 9)
    assert main(base + ["--out", str(tmp_path / "b"), "--stride", "64"]) == 0
    assert len(_json(tmp_path / "b" / "manifest.json")["entries"]) == 16


def test_threads_env_fallback(tmp_path, texture, monkeypatch):
    monkeypatch.setenv("STAINBENCH_THREADS", "nope")
    assert main(["rank", "--in", str(FIXTURES / "challenge_results.json")]) == 2
    monkeypatch.setenv("STAINBENCH_THREADS", "0")
    assert main(["rank", "--in", str(FIXTURES / "challenge_results.json"), "--out", str(tmp_path / "x.json")]) == 0


def test_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["rank", "--in", str(FIXTURES / "challenge_results.json"), "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
