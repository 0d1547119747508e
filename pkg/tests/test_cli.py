import json
import subprocess
import sys
from pathlib import Path

import pytest

from maskbench import __version__
from maskbench.cli import main, parse_args, read_config
from maskbench.detection import dump_boxes
from maskbench.errors import InputError
from maskbench.raster import BBox, Detection, GroundTruth, load_manifest, read_image


def run(*argv):
    return main([str(a) for a in argv])


def files(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_version_and_help(capsys):
    with pytest.raises(SystemExit) as exc:
        run("--version")
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "maskbench.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("detect-eval", "preprocess", "verify", "identify", "checkpoint", "reference", "gradcheck", "split"):
        assert cmd in out.stdout


def test_reference(tmp_path, capsys):
    assert run("reference", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "reference.json").read_text())
    assert doc["tool"] == "maskbench" and doc["version"] == __version__ and doc["command"] == "reference"
    assert doc["config"]["out"] == str(tmp_path)
    assert [d["delta"] for d in doc["deltas"][:4]] == [0.3678, 0.3634, 0.5793, 0.6844]
    text = (tmp_path / "reference.txt").read_text()
    assert "0.9978 - 0.6300 = 0.3678  (matches quoted)" in text
    assert "1.79%" in text
    for png in ("verification_full_face", "verification_periocular", "identification", "deltas"):
        assert (tmp_path / f"{png}.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert "0.6844" in capsys.readouterr().out


def test_reference_byte_identical_reruns(tmp_path):
    assert run("reference", "--out", tmp_path) == 0
    first = files(tmp_path)
    assert run("reference", "--out", tmp_path) == 0
    assert files(tmp_path) == first


def test_identify_reference(tmp_path, capsys):
    assert run("identify", "--reference", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "identify.json").read_text())
    assert [d["delta"] for d in doc["deltas"]] == [0.5793, 0.6844]
    assert (tmp_path / "identify.csv").read_text().startswith("train,test,mean,std")
    assert "0.5793" in capsys.readouterr().out


def test_identify_requires_manifest(tmp_path, capsys):
    assert run("identify", "--out", tmp_path) == 4
    assert "ValidationError" in capsys.readouterr().err


def _boxes(tmp_path):
    gts = [GroundTruth(BBox(0, 0, 10, 10), 0, "a"), GroundTruth(BBox(20, 20, 10, 10), 1, "a")]
    dets = [Detection(BBox(0, 0, 10, 10), 0, 0.9, "a"), Detection(BBox(21, 20, 10, 10), 1, 0.8, "a")]
    (tmp_path / "gt.json").write_text(dump_boxes(gts))
    (tmp_path / "dets.json").write_text(dump_boxes(dets))
    return tmp_path / "gt.json", tmp_path / "dets.json"


def test_detect_eval(tmp_path):
    gt, dets = _boxes(tmp_path)
    out = tmp_path / "out"
    assert run("detect-eval", "--gt", gt, "--dets", dets, "--out", out) == 0
    doc = json.loads((out / "detect_eval.json").read_text())
    # class 1 box is shifted by 1 px: IoU 90/110 = 0.818 -> matched up to 0.80
    assert doc["per_class"]["0"] == 1.0
    assert doc["mAP50"] == 1.0 and doc["mAP75"] == 1.0
    assert doc["per_threshold"]["0.85"] == 0.5
    assert doc["mAP"] == pytest.approx((7 * 1.0 + 3 * 0.5) / 10)
    assert doc["counts"]["0.50"] == {"tp": 2, "fp": 0, "fn": 0}
    assert (out / "pr_curves.png").exists() and (out / "map_by_threshold.png").exists()
    assert "mAP=0.8500" in (out / "detect_eval.txt").read_text()


def test_detect_eval_custom_thresholds(tmp_path):
    gt, dets = _boxes(tmp_path)
    assert run("detect-eval", "--gt", gt, "--dets", dets, "--iou-thresholds", "0.9", "--out", tmp_path / "o") == 0
    doc = json.loads((tmp_path / "o" / "detect_eval.json").read_text())
    assert doc["mAP50"] is None and doc["mAP"] == 0.5


def test_exit_codes(tmp_path, capsys):
    assert run("detect-eval", "--gt", tmp_path / "missing.json", "--dets", tmp_path / "x.json", "--out", tmp_path) == 3
    err = capsys.readouterr().err
    assert "InputError" in err and "missing.json" in err
    gt, dets = _boxes(tmp_path)
    assert run("detect-eval", "--gt", gt, "--dets", dets, "--iou-thresholds", "1.5", "--out", tmp_path) == 4
    assert run("split", "--manifest", tmp_path / "none.csv", "--out", tmp_path) == 3
    with pytest.raises(SystemExit) as exc:
        run("gradcheck", "--loss", "nope")
    assert exc.value.code == 2


def test_gradcheck(tmp_path, capsys):
    assert run("gradcheck", "--samples", "20", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert set(doc["losses"]) == {"bce", "smooth_l1", "box", "multitask", "contrastive"}
    assert all(v["failures"] == 0 for v in doc["losses"].values())
    assert "PASS" in capsys.readouterr().out
    # an absurd tolerance makes every check fail -> nonzero exit
    assert run("gradcheck", "--loss", "bce", "--samples", "3", "--tol", "1e-30") == 1


def test_config_file_and_override(tmp_path):
    gt, dets = _boxes(tmp_path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# detection run\ngt = {gt}\ndets = {dets}\niou-thresholds = 0.5\nout = {tmp_path / 'cfg_out'}\n")
    assert run("detect-eval", "--config", cfg) == 0
    doc = json.loads((tmp_path / "cfg_out" / "detect_eval.json").read_text())
    assert list(doc["per_threshold"]) == ["0.50"]
    assert doc["config"]["iou_thresholds"] == "0.5"
    assert run("detect-eval", "--config", cfg, "--iou-thresholds", "0.75,0.9", "--out", tmp_path / "o2") == 0
    doc = json.loads((tmp_path / "o2" / "detect_eval.json").read_text())
    assert list(doc["per_threshold"]) == ["0.75", "0.90"]
    assert not (tmp_path / "cfg_out" / "o2").exists()


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert run("reference", "--config", cfg) == 3
    assert "unknown keys" in capsys.readouterr().err
    cfg.write_text("seed = many\nmanifest = x\n")
    assert run("split", "--config", cfg) == 3
    cfg.write_text("just text\n")
    with pytest.raises(InputError, match=":1:"):
        read_config(cfg)
    assert run("reference", "--config", tmp_path / "nope.cfg") == 3


def test_config_boolean_flag(tmp_path, corpus):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"masked = false\ngallery = {corpus / 'manifest.csv'}\n")
    visual = corpus / "visual" / "unmasked" / "s002_01.png"
    args = parse_args(["checkpoint", "--config", str(cfg), "--visual", str(visual)])
    assert args.masked is False


def test_synth_split_embed(tmp_path, capsys):
    corpus = tmp_path / "c"
    assert run("synth", "--subjects", 5, "--images", 2, "--seed", 3, "--out", corpus) == 0
    m = load_manifest(corpus / "manifest.csv")
    assert len(m) == 5 * 2 * 4
    assert run("split", "--manifest", corpus / "manifest.csv", "--holdout", "0.6,0.2,0.2", "--out", tmp_path / "s") == 0
    plan = json.loads((tmp_path / "s" / "split.json").read_text())
    assert sorted(plan["assignments"].values()) == ["test", "train", "train", "train", "validation"]
    counts = json.loads((tmp_path / "s" / "split_counts.json").read_text())
    assert counts["plan"]["train"]["images"] == 24
    assert run("split", "--manifest", corpus / "manifest.csv", "--folds", 5, "--out", tmp_path / "k") == 0
    plans = json.loads((tmp_path / "k" / "split.json").read_text())
    assert len(plans) == 5
    assert run("embed", "--manifest", corpus / "manifest.csv", "--features", "periocular", "--out", tmp_path / "e") == 0
    lines = (tmp_path / "e" / "embeddings.csv").read_text().splitlines()
    assert len(lines) == 41
    assert lines[0] == "image_path," + ",".join(f"v{i}" for i in range(18))


def test_preprocess(tmp_path, corpus):
    out = tmp_path / "pp"
    rc = run("preprocess", "--manifest", corpus / "manifest.csv", "--ops", "rescale,periocular,hybrid", "--seed", 4, "--out", out)
    assert rc == 0
    m = load_manifest(out / "manifest.csv")
    assert len(m) == 96
    img = read_image(m.resolve(m.entries[0])).to_array()
    assert not img[0, 0].any()  # border cell blacked out
    prov = [json.loads(line) for line in (out / "provenance.jsonl").read_text().splitlines()]
    steps = prov[0]["steps"]
    assert [s["op"] for s in steps] == ["rescale", "periocular"]
    assert len(steps[1]["mask_bits"]) == 16
    rows = (out / "hybrid_manifest.csv").read_text().splitlines()
    assert rows[0] == "path,subject_id,mask_state,visual_path,thermal_path"
    assert len(rows) == 1 + 8 * 3 * 2
    hybrid = read_image(out / rows[1].split(",")[0])
    assert hybrid.shape == (256, 256, 3)
    first = files(out)
    assert run("preprocess", "--manifest", corpus / "manifest.csv", "--ops", "rescale,periocular,hybrid", "--seed", 4, "--out", out) == 0
    assert files(out) == first
    assert run("preprocess", "--manifest", corpus / "manifest.csv", "--ops", "blur", "--out", out) == 4
    assert run("preprocess", "--manifest", corpus / "manifest.csv", "--ops", "occlude", "--fill", 300, "--out", out) == 4
    assert run("synth", "--subjects", 2, "--images", 1, "--fill", -1, "--out", tmp_path / "s") == 4


def test_verify_and_matrix(tmp_path, corpus):
    out = tmp_path / "v"
    rc = run("verify", "--manifest", corpus / "manifest.csv", "--folds", 2, "--features", "periocular", "--out", out)
    assert rc == 0
    doc = json.loads((out / "verify.json").read_text())
    assert doc["config"]["features"] == "periocular" and doc["folds"] == 2
    assert len(doc["matrix"]["cells"]) == 9
    for name in ("verify.txt", "verify.csv", "verify.png", "verify_folds.csv"):
        assert (out / name).exists()
    first = files(out)
    assert run("verify", "--manifest", corpus / "manifest.csv", "--folds", 2, "--features", "periocular", "--out", out) == 0
    assert files(out) == first
    assert run("matrix", "--results", out / "verify_folds.csv", "--title", "re-aggregated", "--out", tmp_path / "m") == 0
    again = json.loads((tmp_path / "m" / "matrix.json").read_text())
    assert again["matrix"]["cells"] == doc["matrix"]["cells"]


def test_verify_with_precomputed_embeddings_and_split(tmp_path, corpus):
    manifest = corpus / "manifest.csv"
    assert run("embed", "--manifest", manifest, "--out", tmp_path / "e") == 0
    assert run("split", "--manifest", manifest, "--folds", 2, "--seed", 1, "--out", tmp_path / "s") == 0
    rc = run(
        "verify", "--manifest", manifest, "--embeddings", tmp_path / "e" / "embeddings.csv",
        "--split", tmp_path / "s" / "split.json", "--seed", 1, "--out", tmp_path / "v",
    )
    assert rc == 0
    direct = tmp_path / "v2"
    assert run("verify", "--manifest", manifest, "--folds", 2, "--seed", 1, "--out", direct) == 0
    a = json.loads((tmp_path / "v" / "verify.json").read_text())["matrix"]
    b = json.loads((direct / "verify.json").read_text())["matrix"]
    assert a == b


def test_identify_manifest(tmp_path, corpus):
    out = tmp_path / "i"
    assert run("identify", "--manifest", corpus / "manifest.csv", "--folds", 3, "--domains", "visual,thermal,hybrid", "--out", out) == 0
    doc = json.loads((out / "identify.json").read_text())
    assert doc["matrix"]["rows"] == ["visual", "thermal", "hybrid"]
    assert (out / "identify_folds.csv").read_text().count("\n") == 1 + 3 * 9
    assert run("identify", "--manifest", corpus / "manifest.csv", "--embeddings", "x.csv", "--out", out) == 4


def test_checkpoint_cli(tmp_path, corpus, capsys):
    gallery = corpus / "manifest.csv"
    vis = corpus / "visual" / "unmasked" / "s003_02.png"
    # unmasked route must not read the thermal file, so a missing path is harmless
    rc = run("checkpoint", "--visual", vis, "--unmasked", "--thermal", tmp_path / "absent.png", "--gallery", gallery, "--out", tmp_path / "u")
    assert rc == 0
    doc = json.loads((tmp_path / "u" / "checkpoint.json").read_text())
    assert doc["route"] == "visual" and doc["identity"] == "s003" and doc["hybrid_built"] is False
    assert not (tmp_path / "u" / "hybrid.png").exists()

    mvis = corpus / "visual" / "masked" / "s003_02.png"
    th = corpus / "thermal" / "unmasked" / "s003_02.png"
    rc = run("checkpoint", "--visual", mvis, "--masked", "--thermal", th, "--gallery", gallery, "--out", tmp_path / "m")
    assert rc == 0
    doc = json.loads((tmp_path / "m" / "checkpoint.json").read_text())
    assert doc["route"] == "hybrid" and doc["identity"] == "s003"
    assert read_image(tmp_path / "m" / "hybrid.png").shape == (256, 256, 3)
    assert "route=hybrid identity=s003" in capsys.readouterr().out

    assert run("checkpoint", "--visual", mvis, "--masked", "--gallery", gallery, "--out", tmp_path / "x") == 6
    assert run("checkpoint", "--visual", mvis, "--masked", "--thermal", tmp_path / "absent.png", "--gallery", gallery, "--out", tmp_path / "x") == 3
