"""Annotation files, rank derivation, dataset statistics and category scores.

Annotation documents are JSON, validated against
``salrank/schema/annotations.schema.json``::

    {"kind": "gt",
     "images": [{"image_id": "0001", "width": 640, "height": 480,
                 "instances": [{"rle": [...], "rank_order": 1,
                                "category": "person", "is_person": true}]}]}
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np
from PIL import Image

from .core import MaskError, RleMask, as_mask, rle_decode, rle_encode
from .metrics import GtInstance, PredInstance

MIN_GT_INSTANCES = 2
MAX_GT_INSTANCES = 8
MAX_RANK = 8


class AnnotationError(ValueError):
    pass


@dataclass
class InstanceAnnotation:
    rle: RleMask
    rank_order: Optional[int] = None
    category: Optional[str] = None
    is_person: Optional[bool] = None
    confidence: Optional[float] = None
    saliency_score: Optional[float] = None

    @property
    def mask(self) -> np.ndarray:
        return rle_decode(self.rle)


@dataclass
class ImageAnnotation:
    image_id: str
    width: int
    height: int
    instances: list = field(default_factory=list)

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    def gt_instances(self) -> list:
        return [GtInstance(a.mask, a.rank_order) for a in self.instances]

    def pred_instances(self) -> list:
        """Prediction view; rank-only instances score ``N - rank + 1`` with confidence 1."""
        n = len(self.instances)
        out = []
        for a in self.instances:
            score = a.saliency_score
            if score is None:
                score = float(n - a.rank_order + 1)
            conf = 1.0 if a.confidence is None else a.confidence
            out.append(PredInstance(a.mask, float(score), float(conf)))
        return out


_OPTIONAL_FIELDS = ("rank_order", "category", "is_person", "confidence", "saliency_score")


def _schema() -> dict:
    text = resources.files("salrank").joinpath("schema/annotations.schema.json").read_text()
    return json.loads(text)


def _where(doc, path) -> str:
    path = list(path)
    if len(path) >= 2 and path[0] == "images" and isinstance(path[1], int):
        images = doc.get("images", [])
        if path[1] < len(images) and isinstance(images[path[1]], dict):
            img_id = images[path[1]].get("image_id", f"#{path[1]}")
            rest = ".".join(str(p) for p in path[2:]) or "(image)"
            return f"image {img_id!r}, field {rest}"
    return "field " + (".".join(str(p) for p in path) or "(document)")


def _validate_gt(img: ImageAnnotation, check_count: bool) -> None:
    n = len(img.instances)
    if check_count and not MIN_GT_INSTANCES <= n <= MAX_GT_INSTANCES:
        raise AnnotationError(
            f"image {img.image_id!r}: {n} salient instances; the dataset admits "
            f"{MIN_GT_INSTANCES} to {MAX_GT_INSTANCES} per image")
    ranks = []
    for i, a in enumerate(img.instances):
        if a.rank_order is None:
            raise AnnotationError(f"image {img.image_id!r}, instances.{i}: missing rank_order")
        ranks.append(a.rank_order)
    if len(set(ranks)) != len(ranks):
        raise AnnotationError(f"image {img.image_id!r}: duplicate rank_order values {sorted(ranks)}")
    if sorted(ranks) != list(range(1, n + 1)):
        raise AnnotationError(f"image {img.image_id!r}: rank_order {sorted(ranks)} is not 1..{n}")


def _validate_pred(img: ImageAnnotation) -> None:
    for i, a in enumerate(img.instances):
        if a.saliency_score is None and a.rank_order is None:
            raise AnnotationError(
                f"image {img.image_id!r}, instances.{i}: needs saliency_score (or rank_order)")
    ranks = [a.rank_order for a in img.instances if a.saliency_score is None]
    if ranks and sorted(ranks) != list(range(1, len(img.instances) + 1)):
        raise AnnotationError(f"image {img.image_id!r}: rank-only predictions need ranks 1..N")


def parse_annotations(doc: dict, kind: Optional[str] = None, check_count: bool = True) -> list:
    """Validate a decoded document and build :class:`ImageAnnotation` objects."""
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        raise AnnotationError(f"{_where(doc, exc.absolute_path)}: {exc.message}") from None
    kind = kind or doc.get("kind", "gt")
    images, seen = [], set()
    for raw in doc["images"]:
        img_id = raw["image_id"]
        if img_id in seen:
            raise AnnotationError(f"image {img_id!r}: duplicate image_id")
        seen.add(img_id)
        img = ImageAnnotation(img_id, raw["width"], raw["height"])
        for i, inst in enumerate(raw["instances"]):
            try:
                rle = RleMask(raw["width"], raw["height"], tuple(inst["rle"]))
            except MaskError as exc:
                raise AnnotationError(f"image {img_id!r}, instances.{i}.rle: {exc}") from None
            img.instances.append(InstanceAnnotation(rle, **{k: inst[k] for k in _OPTIONAL_FIELDS if k in inst}))
        if kind == "gt":
            _validate_gt(img, check_count)
        else:
            _validate_pred(img)
        images.append(img)
    return images


def load_annotations(source, kind: Optional[str] = None, check_count: bool = True) -> list:
    """Read an annotation file (path or open text stream)."""
    if hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise AnnotationError(f"{source}: not valid JSON ({exc})") from None
    return parse_annotations(doc, kind, check_count)


def to_document(images: Sequence[ImageAnnotation], kind: Optional[str] = None) -> dict:
    doc = {}
    if kind is not None:
        doc["kind"] = kind
    doc["images"] = []
    for img in images:
        insts = []
        for a in img.instances:
            d = {"rle": list(a.rle.counts)}
            for k in _OPTIONAL_FIELDS:
                v = getattr(a, k)
                if v is not None:
                    d[k] = v
            insts.append(d)
        doc["images"].append({"image_id": img.image_id, "width": img.width,
                              "height": img.height, "instances": insts})
    return doc


def save_annotations(images: Sequence[ImageAnnotation], path, kind: Optional[str] = None) -> None:
    with open(path, "w") as fh:
        json.dump(to_document(images, kind), fh, indent=1)
        fh.write("\n")


def instance_from_mask(mask, **fields) -> InstanceAnnotation:
    return InstanceAnnotation(rle_encode(mask), **fields)


# -- ranks from saliency maps ------------------------------------------------

def derive_ranks(masks: Sequence, saliency_map) -> np.ndarray:
    """Rank instances by the peak saliency inside each mask (1 = highest peak).

    Equal peaks are ordered by mean saliency, then by instance index.
    """
    smap = np.asarray(saliency_map, dtype=float)
    keys = []
    for i, m in enumerate(masks):
        m = as_mask(m)
        if m.shape != smap.shape:
            raise MaskError(f"mask {i} shape {m.shape} != saliency map shape {smap.shape}")
        vals = smap[m]
        if vals.size == 0:
            raise MaskError(f"mask {i} is empty")
        keys.append((-float(vals.max()), -float(vals.mean()), i))
    ranks = np.empty(len(keys), dtype=int)
    for pos, (_, _, i) in enumerate(sorted(keys)):
        ranks[i] = pos + 1
    return ranks


# -- dataset statistics -------------------------------------------------------

@dataclass
class CategoryStats:
    proportions: dict  # category -> (8,) array, p[i-1] = share of rank-i instances
    scores: dict       # category -> S_j

    def log_scores(self) -> dict:
        return {c: math.log1p(s) for c, s in self.scores.items()}


def category_scores(images: Sequence[ImageAnnotation]) -> CategoryStats:
    """Per-category average saliency score ``S_j = sum_i (9 - i) p_ij``."""
    counts: dict = {}
    per_rank = np.zeros(MAX_RANK)
    for img in images:
        for a in img.instances:
            if a.category is None:
                raise AnnotationError(f"image {img.image_id!r}: instance without category")
            if a.rank_order is None or a.rank_order > MAX_RANK:
                continue
            counts.setdefault(a.category, np.zeros(MAX_RANK))[a.rank_order - 1] += 1
            per_rank[a.rank_order - 1] += 1
    weights = MAX_RANK + 1 - np.arange(1, MAX_RANK + 1)
    proportions, scores = {}, {}
    for cat in sorted(counts):
        p = np.divide(counts[cat], per_rank, out=np.zeros(MAX_RANK), where=per_rank > 0)
        proportions[cat] = p
        scores[cat] = float(weights @ p)
    return CategoryStats(proportions, scores)


STATS_COLUMNS = ("1", "2", "3", "4", "5", "6", "7", "8", "9+")


@dataclass
class StatsTable:
    n_images: int
    counts: np.ndarray       # images per column of STATS_COLUMNS
    percentages: np.ndarray  # exact

    def rounded(self, decimals: int = 1) -> np.ndarray:
        """Largest-remainder rounding so the displayed row sums to exactly 100."""
        scale = 10 ** decimals
        raw = self.percentages * scale
        floor = np.floor(raw)
        short = int(round(100 * scale - floor.sum()))
        order = np.argsort(-(raw - floor), kind="stable")
        floor[order[:short]] += 1
        return floor / scale

    def to_csv(self, label: str = "dataset") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "images", *STATS_COLUMNS])
        w.writerow([label, self.n_images, *[f"{v:.1f}" for v in self.rounded()]])
        return buf.getvalue()


def dataset_stats(images: Sequence) -> StatsTable:
    """Share of images by salient-instance count (columns 1..8 and 9+).

    Accepts :class:`ImageAnnotation` objects or plain instance counts.
    """
    if len(images) == 0:
        raise ValueError("dataset is empty")
    counts = np.zeros(len(STATS_COLUMNS), dtype=int)
    for img in images:
        n = img if isinstance(img, (int, np.integer)) else len(img.instances)
        if n >= 1:
            counts[min(n, 9) - 1] += 1
    return StatsTable(len(images), counts, 100.0 * counts / len(images))


# -- 8-bit grayscale / colour image I/O --------------------------------------

def read_gray(path) -> np.ndarray:
    """8-bit single-channel image as floats in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_gray(path, values) -> None:
    arr = np.asarray(values)
    if arr.dtype != np.uint8:
        arr = np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def write_rgb(path, values) -> None:
    arr = np.clip(np.floor(np.asarray(values, dtype=float) + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
