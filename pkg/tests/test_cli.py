import json

import pytest

from hoidiff.cli import main
from hoidiff.io import FORMAT, load_sequence, save_sequence

TINY = ["diffusion.steps=3", "diffusion.batch_size=4", "diffusion.T=10", "denoiser.latent_dim=16",
        "denoiser.heads=2", "denoiser.encoder_layers=1", "denoiser.decoder_layers=1",
        "predictor.steps=3", "predictor.batch_size=4", "predictor.width=8", "predictor.blocks=1"]


def _sets():
    return [a for kv in TINY for a in ("--set", kv)]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--scenario", "carry", "--count", "3", "--frames", "40", "--out", str(data)]) == 0
    assert main(["train-diffusion", "--data", str(data), "--out", str(root / "den.ckpt")] + _sets()) == 0
    assert main(["train-predictor", "--data", str(data), "--out", str(root / "pred.ckpt")] + _sets()) == 0
    return root


def test_gen_data_writes_clips(workspace):
    files = sorted((workspace / "data").glob("*.json"))
    assert len(files) == 3
    assert load_sequence(files[0]).num_frames == 40


def test_sample_with_correction(workspace):
    out = workspace / "samples"
    rc = main(["sample", "--denoiser", str(workspace / "den.ckpt"), "--predictor", str(workspace / "pred.ckpt"),
               "--correct", "--past", str(workspace / "data" / "clip_00000.json"), "--n", "2", "--out", str(out)])
    assert rc == 0
    s = load_sequence(out / "sample_000.json")
    assert (s.past, s.future) == (10, 25)
    rows = (out / "sample_000.corrections.jsonl").read_text().splitlines()
    assert len(rows) == 11


def test_rollout(workspace):
    out = workspace / "roll.json"
    rc = main(["rollout", "--denoiser", str(workspace / "den.ckpt"), "--past",
               str(workspace / "data" / "clip_00001.json"), "--frames", "30", "--out", str(out)])
    assert rc == 0 and load_sequence(out).future == 30


def test_eval_and_export(workspace, tmp_path):
    gt = tmp_path / "gt"
    gt.mkdir()
    seq = load_sequence(workspace / "data" / "clip_00000.json").frames(0, 35, past=10)
    assert main(["export", "--seq", str(workspace / "data" / "clip_00000.json"), "--out", str(tmp_path / "c.json")]) == 0
    save_sequence(seq, gt / "a.json")
    pred = tmp_path / "pred"
    pred.mkdir()
    save_sequence(seq, pred / "a.json")
    report = tmp_path / "r.json"
    assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--report", str(report)]) == 0
    r = json.loads(report.read_text())
    assert r["mpjpe_h"] == 0.0 and r["count"] == 1
    assert main(["export", "--seq", str(gt / "a.json"), "--format", "csv", "--out", str(tmp_path / "a.csv")]) == 0
    assert (tmp_path / "a.csv").read_text().startswith("frame,is_future")


def test_errors_return_one(workspace, tmp_path, capsys):
    assert main(["sample", "--denoiser", str(workspace / "pred.ckpt"), "--past",
                 str(workspace / "data" / "clip_00000.json"), "--out", str(tmp_path)]) == 1
    assert main(["sample", "--denoiser", str(workspace / "den.ckpt"), "--correct", "--past",
                 str(workspace / "data" / "clip_00000.json"), "--out", str(tmp_path)]) == 1
    assert main(["eval", "--pred", str(tmp_path), "--gt", str(tmp_path), "--report", str(tmp_path / "r")]) == 1
    assert main(["train-diffusion", "--data", str(workspace / "data"), "--out", str(tmp_path / "x"),
                 "--set", "bogus.key=1"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": FORMAT})[:-1])
    assert main(["export", "--seq", str(bad), "--out", str(tmp_path / "o.json")]) == 1
    assert "error:" in capsys.readouterr().err
