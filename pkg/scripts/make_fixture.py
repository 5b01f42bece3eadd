"""Regenerate the 20-image evaluation fixture and its golden report.

    python3 scripts/make_fixture.py            # writes tests/data/

The golden report is the output of ``salrank evaluate --metric all`` on the
fixture; tests/test_cli.py checks it against an independent oracle before
comparing byte-for-byte.
"""
import argparse
import contextlib
import io
from pathlib import Path

import numpy as np

from salrank import cli, dataio

W, H = 40, 30


def blob(rng):
    """Rectangle or ellipse mask somewhere in the frame."""
    m = np.zeros((H, W), dtype=bool)
    w, h = rng.integers(5, 16), rng.integers(4, 12)
    x0, y0 = rng.integers(0, W - w), rng.integers(0, H - h)
    if rng.random() < 0.5:
        m[y0:y0 + h, x0:x0 + w] = True
    else:
        yy, xx = np.mgrid[:H, :W]
        m[((xx - x0 - w / 2) / (w / 2)) ** 2 + ((yy - y0 - h / 2) / (h / 2)) ** 2 <= 1] = True
    return m


def jitter(m, rng):
    dx, dy = rng.integers(-2, 3, size=2)
    return np.roll(np.roll(m, dy, axis=0), dx, axis=1)


def build(seed=2024, n_images=20):
    rng = np.random.default_rng(seed)
    gts, preds = [], []
    cats = ("person", "dog", "car", "chair", "cup")
    for k in range(n_images):
        img_id = f"fx{k:02d}"
        n = int(rng.integers(2, 9))
        masks = [blob(rng) for _ in range(n)]
        ranks = rng.permutation(n) + 1
        g = dataio.ImageAnnotation(img_id, W, H)
        for m, r in zip(masks, ranks):
            cat = str(rng.choice(cats))
            g.instances.append(dataio.instance_from_mask(m, rank_order=int(r), category=cat,
                                                         is_person=cat == "person"))
        gts.append(g)

        p = dataio.ImageAnnotation(img_id, W, H)
        if k == 3:
            pass  # nothing detected
        elif k == 7:
            # rank-only predictions in perfect order
            for m, r in zip(masks, ranks):
                p.instances.append(dataio.instance_from_mask(m, rank_order=int(r)))
        else:
            for m, r in zip(masks, ranks):
                if rng.random() < 0.15:
                    continue  # missed
                score = float(n - r + 1 + rng.normal(scale=1.5))
                p.instances.append(dataio.instance_from_mask(
                    jitter(m, rng), saliency_score=round(score, 4),
                    confidence=round(float(rng.uniform(0.3, 1.0)), 3)))
            for _ in range(int(rng.integers(0, 3))):
                p.instances.append(dataio.instance_from_mask(
                    blob(rng), saliency_score=round(float(rng.normal()), 4),
                    confidence=round(float(rng.uniform(0.05, 0.6)), 3)))
        preds.append(p)
    return gts, preds


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default=str(Path(__file__).resolve().parents[1] / "tests" / "data"))
    args = ap.parse_args()
    out = dataio.ensure_dir(args.out_dir)
    gts, preds = build()
    dataio.save_annotations(gts, out / "fixture_gt.json", kind="gt")
    dataio.save_annotations(preds, out / "fixture_pred.json", kind="pred")
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli.main(["evaluate", "--gt", str(out / "fixture_gt.json"),
                         "--pred", str(out / "fixture_pred.json"), "--metric", "all", "--threads", "1"])
    if code != 0:
        raise SystemExit(f"evaluate failed with exit code {code}")
    (out / "golden_evaluate.txt").write_text(buf.getvalue())
    print(f"wrote fixture and golden report to {out}")


if __name__ == "__main__":
    main()
