import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from salrank import cli, dataio
from salrank.core import rle_encode

import oracles

DATA = Path(__file__).parent / "data"
GT = DATA / "fixture_gt.json"
PRED = DATA / "fixture_pred.json"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def two_instance_gt(path, w=8, h=4):
    a = np.zeros((h, w), bool)
    a[:, :3] = True
    b = np.zeros((h, w), bool)
    b[:, 5:] = True
    img = dataio.ImageAnnotation("two", w, h, [dataio.instance_from_mask(a, rank_order=2),
                                               dataio.instance_from_mask(b, rank_order=1)])
    dataio.save_annotations([img], path, kind="gt")
    return a, b


def aggregate_line(out, metric):
    for line in out.splitlines():
        if line.startswith(f"mean\t{metric}\t"):
            return line.split("\t")[2]
    raise AssertionError(f"no aggregate for {metric}")


def test_gt_against_itself(capsys, tmp_path):
    code, out, _ = run(capsys, "evaluate", "--gt", GT, "--pred", GT, "--metric", "all", "--threads", "1")
    assert code == 0
    assert aggregate_line(out, "sa-sor") == "1.000000"
    assert aggregate_line(out, "mae") == "0.000000"
    # fixture instances overlap, which costs the pixel-based SOR and the
    # largest-intersection SSOR; with disjoint masks both are exact
    two_instance_gt(tmp_path / "gt.json")
    code, out, _ = run(capsys, "evaluate", "--gt", tmp_path / "gt.json", "--pred", tmp_path / "gt.json",
                       "--metric", "all")
    for m in ("sa-sor", "sor", "ssor"):
        assert aggregate_line(out, m) == "1.000000"


def test_empty_predictions_score_zero(capsys, tmp_path):
    gt = dataio.load_annotations(GT)
    empty = [dataio.ImageAnnotation(g.image_id, g.width, g.height, []) for g in gt]
    dataio.save_annotations(empty, tmp_path / "empty.json", kind="pred")
    code, out, _ = run(capsys, "evaluate", "--gt", GT, "--pred", tmp_path / "empty.json")
    assert code == 0 and aggregate_line(out, "sa-sor") == "0.000000"


def test_golden_report_matches_oracle_then_bytes(capsys):
    golden = (DATA / "golden_evaluate.txt").read_text()
    gts = dataio.load_annotations(GT)
    preds = {p.image_id: p for p in dataio.load_annotations(PRED, kind="pred")}
    recorded = {}
    for line in golden.splitlines():
        parts = line.split("\t")
        if len(parts) == 3 and parts[1] == "sa-sor" and parts[0] not in ("image_id", "mean"):
            recorded[parts[0]] = float(parts[2])
    assert len(recorded) == 20
    vals = []
    for g in gts:
        pt = [(p.mask, p.saliency_score, p.confidence) for p in preds[g.image_id].pred_instances()]
        gt = [(x.mask, x.rank_order) for x in g.gt_instances()]
        want = oracles.sa_sor(pt, gt)
        vals.append(want)
        assert abs(recorded[g.image_id] - want) < 5e-7
    assert float(aggregate_line(golden, "sa-sor")) == pytest.approx(math.fsum(vals) / 20, abs=5e-7)
    code, out, _ = run(capsys, "evaluate", "--gt", GT, "--pred", PRED, "--metric", "all", "--threads", "1")
    assert code == 0 and out == golden


def test_all_is_concatenation_of_single_metrics(capsys):
    _, everything, _ = run(capsys, "evaluate", "--gt", GT, "--pred", PRED, "--metric", "all")
    parts = [run(capsys, "evaluate", "--gt", GT, "--pred", PRED, "--metric", m)[1] for m in cli.METRICS]
    assert everything == "".join(parts)


def test_threads_do_not_change_output(capsys):
    one = run(capsys, "evaluate", "--gt", GT, "--pred", PRED, "--metric", "all", "--threads", "1")[1]
    many = run(capsys, "evaluate", "--gt", GT, "--pred", PRED, "--metric", "all", "--threads", "4")[1]
    assert one == many


def test_summary_file(capsys, tmp_path):
    out = tmp_path / "summary.json"
    run(capsys, "evaluate", "--gt", GT, "--pred", PRED, "--metric", "ssor", "--out", out)
    doc = json.loads(out.read_text())
    r = doc["metrics"]["ssor"]
    assert r["counted"] + r["skipped"] == 20 and len(r["per_image"]) == 20


def test_validation_errors_exit_1(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"images": [{"image_id": "z", "width": 2, "height": 2,
                                           "instances": [{"rle": [1, 2]}]}]}))
    code, _, err = run(capsys, "evaluate", "--gt", bad, "--pred", PRED)
    assert code == 1 and "'z'" in err and "rle" in err
    code, _, err = run(capsys, "evaluate", "--gt", GT, "--pred", tmp_path / "missing.json")
    assert code == 1
    code, _, err = run(capsys, "evaluate", "--gt", GT, "--pred", PRED, "--bogus")
    assert code == 1 and "usage" in err


def test_unknown_prediction_image(capsys, tmp_path):
    img = dataio.ImageAnnotation("nope", 4, 4, [])
    dataio.save_annotations([img], tmp_path / "p.json", kind="pred")
    code, _, err = run(capsys, "evaluate", "--gt", GT, "--pred", tmp_path / "p.json")
    assert code == 1 and "nope" in err


def test_render_two_instances(capsys, tmp_path):
    a, b = two_instance_gt(tmp_path / "gt.json")
    code, _, _ = run(capsys, "render", tmp_path / "gt.json", "--out-dir", tmp_path / "maps")
    assert code == 0
    m = np.round(dataio.read_gray(tmp_path / "maps" / "two.png") * 255).astype(int)
    assert set(np.unique(m[a])) == {128} and set(np.unique(m[b])) == {255}
    assert set(np.unique(m[~(a | b)])) == {0}


def test_stats(capsys, tmp_path):
    code, out, _ = run(capsys, "stats", "--gt", GT, "--categories")
    assert code == 0
    header, row = out.splitlines()[:2]
    assert header.startswith("dataset,images,1,2")
    assert row.split(",")[1] == "20"
    assert any(line.startswith("category\tperson") for line in out.splitlines())


def test_retarget_fraction(capsys, tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, size=(20, 33, 3))
    dataio.write_rgb(tmp_path / "in.png", img)
    code, _, _ = run(capsys, "retarget", "--image", tmp_path / "in.png",
                     "--target-frac", "0.7", "--out", tmp_path / "out.png")
    assert code == 0
    assert dataio.read_rgb(tmp_path / "out.png").shape == (20, round(0.7 * 33), 3)
    code, _, err = run(capsys, "retarget", "--image", tmp_path / "in.png", "--target-frac", "0.7",
                       "--target-width", "10", "--out", tmp_path / "o2.png")
    assert code == 1 and "not allowed" in err
    dataio.write_gray(tmp_path / "rank.png", np.zeros((5, 5), np.uint8))
    code, _, err = run(capsys, "retarget", "--image", tmp_path / "in.png", "--rank-map",
                       tmp_path / "rank.png", "--target-width", "10", "--out", tmp_path / "o3.png")
    assert code == 1


def test_gradcheck_seed7(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seed", "7")
    assert code == 0 and "PASS" in out and "max relative error" in out


def test_gradcheck_failure_exit_code(capsys, monkeypatch):
    from salrank import gradcheck
    monkeypatch.setattr(gradcheck, "run", lambda seed, n: [gradcheck.GradCheckReport(
        1e-2, config={"N": 2, "D": 16, "K": 1, "M": 1, "gamma": 1.0})])
    code, out, _ = run(capsys, "gradcheck")
    assert code == 3 and "FAIL" in out


def test_internal_error_exit_2(capsys, monkeypatch):
    monkeypatch.setattr(cli, "evaluate_files", lambda *a, **k: 1 / 0 and None)
    code, _, err = run(capsys, "evaluate", "--gt", GT, "--pred", PRED)
    assert code == 2 and "internal error" in err


def test_train_toy_log_and_checkpoint(capsys, tmp_path):
    code, out, _ = run(capsys, "train-toy", "--seed", "1", "--threads", "1", "--steps", "40",
                       "--samples", "20", "--eval-samples", "10", "--eval-every", "20",
                       "--log", tmp_path / "log.jsonl", "--checkpoint", tmp_path / "ck.npz")
    assert code == 0 and "held-out" in out
    recs = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert len(recs) == 41 and "eval" in recs[19] and "final_eval" in recs[-1]
    from salrank.graphnet import GraphParams
    assert GraphParams.load(tmp_path / "ck.npz").K == 4


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "salrank.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("salrank ")
