import hashlib
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from dtunet.cli import main
from dtunet.core import (
    DatasetManifest,
    InputImage,
    ProbabilityMap,
    load_mask,
    load_probmap,
    save_image,
    save_probmap,
)


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(out), "--num-images", "4", "--seed", "1", "--size", "32",
                 "--num-classes", "2"]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    args = ["train", "--manifest", str(corpus / "manifest.yaml"), "--out", str(out),
            "--set", "model.base_channels=4", "--set", "model.depth=2", "--set", "optimizer.batch_size=2",
            "--set", "optimizer.epochs=2", "--set", "val_fraction=0.25"]
    assert main(args) == 0
    return out / "last.pt"


def test_synth_is_reproducible(corpus, tmp_path):
    main(["synth", "--out", str(tmp_path), "--num-images", "4", "--seed", "1", "--size", "32",
          "--num-classes", "2"])
    a, b = tree_digest(corpus), tree_digest(tmp_path)
    a.pop("run_manifest.json")
    b.pop("run_manifest.json")
    assert a == b
    manifest = DatasetManifest.load(corpus / "manifest.yaml")
    assert manifest.num_classes == 2 and len(manifest.entries) == 4


def test_train_outputs(checkpoint):
    run = checkpoint.parent
    for name in ("losses.csv", "config.yaml", "run_manifest.json", "best.pt"):
        assert (run / name).exists(), name
    assert (run / "losses.csv").read_text().splitlines()[0] == "step,L_tex,L_BCE,L_tri,total"


def test_train_without_manifest_fails(tmp_path):
    with pytest.raises(SystemExit):
        main(["train", "--out", str(tmp_path)])


def test_predict_and_eval(corpus, checkpoint, tmp_path):
    before = tree_digest(corpus)
    pred = tmp_path / "pred"
    assert main(["predict", "--checkpoint", str(checkpoint), "--manifest", str(corpus / "manifest.yaml"),
                 "--out", str(pred)]) == 0
    for suffix in ("_tex.probs", "_top.probs", "_final.probs", "_mask.png"):
        assert (pred / f"0000{suffix}").exists()
    mask = load_mask(pred / "0000_mask.png")
    assert mask.labels.max() <= 2
    final = load_probmap(pred / "0000_final.probs")
    np.testing.assert_allclose(final.probs.sum(axis=0), 1, atol=1e-5)
    report_dir = tmp_path / "report"
    assert main(["eval", "--pred", str(pred), "--gt", str(corpus / "manifest.yaml"), "--out", str(report_dir),
                 "--betti-window", "16", "--betti-stride", "8"]) == 0
    header = (report_dir / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("frechet,betti_error,iou,miou")
    assert tree_digest(corpus) == before


def test_predict_omega_one_is_texture_argmax(corpus, checkpoint, tmp_path):
    image = corpus / "images" / "0001.png"
    main(["predict", "--checkpoint", str(checkpoint), "--images", str(image), "--omega", "1",
          "--out", str(tmp_path)])
    tex = load_probmap(tmp_path / "0001_tex.probs").probs
    np.testing.assert_array_equal(load_mask(tmp_path / "0001_mask.png").labels, tex.argmax(axis=0))


def test_predict_rejects_class_mismatch(checkpoint, corpus, tmp_path):
    with pytest.raises(SystemExit):
        main(["predict", "--checkpoint", str(checkpoint), "--images", str(corpus / "images" / "0000.png"),
              "--num-classes", "5", "--out", str(tmp_path)])


def test_predict_large_image_is_fully_covered(checkpoint, tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "big.png"
    save_image(InputImage(rng.random((300, 270)).astype(np.float32)), path)
    main(["predict", "--checkpoint", str(checkpoint), "--images", str(path), "--out", str(tmp_path / "p")])
    tex = load_probmap(tmp_path / "p" / "big_tex.probs").probs
    assert tex.shape == (3, 300, 270)
    np.testing.assert_allclose(tex.sum(axis=0), 1, atol=1e-5)
    assert json.loads((tmp_path / "p" / "run_manifest.json").read_text())["command"] == "predict"


def test_eval_ground_truth_against_itself(corpus, tmp_path):
    manifest = DatasetManifest.load(corpus / "manifest.yaml")
    pred = tmp_path / "pred"
    pred.mkdir()
    for entry in manifest.entries:
        shutil.copyfile(entry.mask, pred / f"{Path(entry.image).stem}_mask.png")
    main(["eval", "--pred", str(pred), "--gt", str(corpus / "manifest.yaml"), "--out", str(tmp_path / "r")])
    row = dict(zip(*[line.split(",") for line in (tmp_path / "r" / "metrics.csv").read_text().splitlines()]))
    assert float(row["frechet"]) == 0 and float(row["betti_error"]) == 0
    assert float(row["iou"]) == 100 and float(row["miou"]) == 100


def test_corrupt_lambda_zero_is_byte_identical(corpus, tmp_path):
    mask, image = corpus / "masks" / "0002.png", corpus / "images" / "0002.png"
    out = tmp_path / "c.png"
    main(["corrupt", "--mask", str(mask), "--image", str(image), "--lambda", "0", "--patch-size", "16",
          "--seed", "7", "--out", str(out)])
    assert out.read_bytes() == mask.read_bytes()
    assert (tmp_path / "c.png.run.json").exists()


def test_corrupt_changes_mask(corpus, tmp_path):
    mask, image = corpus / "masks" / "0002.png", corpus / "images" / "0002.png"
    outs = []
    for name in ("a.png", "b.png"):
        main(["corrupt", "--mask", str(mask), "--image", str(image), "--lambda", "0.5", "--patch-size", "8",
              "--seed", "7", "--out", str(tmp_path / name)])
        outs.append(load_mask(tmp_path / name).labels)
    assert np.array_equal(outs[0], outs[1])
    assert not np.array_equal(outs[0], load_mask(mask).labels)


def test_fuse_command(tmp_path):
    tex = np.array([0.5, 0.3, 0.2], np.float32).reshape(3, 1, 1) * np.ones((3, 16, 16), np.float32)
    top = np.full((1, 16, 16), 0.8, np.float32)
    save_probmap(ProbabilityMap(tex), tmp_path / "t.probs")
    save_probmap(ProbabilityMap(top), tmp_path / "o.probs")
    main(["fuse", "--tex", str(tmp_path / "t.probs"), "--top", str(tmp_path / "o.probs"), "--omega", "0.5",
          "--out", str(tmp_path / "f.probs")])
    fused = load_probmap(tmp_path / "f.probs").probs
    np.testing.assert_allclose(fused[:, 3, 3], [0.35, 0.39, 0.26], atol=1e-6)
