"""Face detection and alignment: image pyramid, three-stage scoring
cascade with pluggable per-patch scorers, IoU/NMS, bounding-box
regression, and closed-form 5-landmark similarity alignment.

The stage scorers are deliberately replaceable. Two are bundled: a
reject-everything scorer (useful as a null baseline) and a template
correlation scorer built from averaged sprite renders, which is enough to
drive the full cascade end-to-end on the synthetic corpus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import dataset as ds


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box: ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return self.width * self.height

    def center(self):
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)


@dataclass(frozen=True)
class Landmarks5:
    """Five (x, y) points: left eye, right eye, nose, mouth left, mouth right."""

    left_eye: tuple
    right_eye: tuple
    nose: tuple
    mouth_left: tuple
    mouth_right: tuple

    def __post_init__(self):
        arr = self.as_array()
        if arr.shape != (5, 2) or not np.all(np.isfinite(arr)):
            raise ValueError("landmarks must be 5 finite (x, y) points")

    def as_array(self):
        return np.array(
            [self.left_eye, self.right_eye, self.nose, self.mouth_left, self.mouth_right],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(*(tuple(p) for p in arr.reshape(5, 2)))


@dataclass
class Candidate:
    bbox: BBox
    score: float
    regression: tuple = (0.0, 0.0, 0.0, 0.0)
    landmarks: Landmarks5 | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if len(self.regression) != 4:
            raise ValueError("regression must hold 4 offsets")


def iou(a: BBox, b: BBox):
    """Intersection area over union area of two boxes."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def _overlap(a: BBox, b: BBox, mode):
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    if mode == "union":
        denom = a.area + b.area - inter
    elif mode == "min":
        denom = min(a.area, b.area)
    else:
        raise ValueError(f"unknown NMS mode {mode!r}")
    return inter / denom if denom > 0 else 0.0


def nms(candidates, iou_threshold, mode="union"):
    """Greedy non-maximum suppression.

    Candidates are visited by descending score (ties: earlier index first);
    each is kept unless its overlap with an already-kept candidate exceeds
    the threshold. Returns kept candidates in visit order.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, i))
    kept = []
    for i in order:
        c = candidates[i]
        if all(_overlap(c.bbox, k.bbox, mode) <= iou_threshold for k in kept):
            kept.append(c)
    return kept


def apply_regression(c: Candidate) -> BBox:
    """Refine a candidate's box by its normalized offsets:
    x1' = x1 + dx1*w, etc. Raises on a degenerate result."""
    b = c.bbox
    dx1, dy1, dx2, dy2 = c.regression
    w, h = b.width, b.height
    x1, y1 = b.x1 + dx1 * w, b.y1 + dy1 * h
    x2, y2 = b.x2 + dx2 * w, b.y2 + dy2 * h
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"regression degenerates box to ({x1}, {y1}, {x2}, {y2})")
    return BBox(x1, y1, x2, y2)


# ---------------------------------------------------------------------------
# scorers


class RejectAllScorer:
    """Null scorer: nothing is ever a face."""

    def score_patch(self, patch):
        return 0.0, (0.0, 0.0, 0.0, 0.0), None


# box-relative landmark layout of the rendered sprites (x, y in [0, 1])
SPRITE_LANDMARKS_NORM = np.array(
    [
        [0.325, 0.40],
        [0.675, 0.40],
        [0.50, 0.56],
        [0.36, 0.72],
        [0.64, 0.72],
    ]
)

# square framing used when cropping a face for template construction and
# for refine-stage context crops, as a multiple of the face-box height;
# the dark margin around the face is what lets the correlation reject
# face-interior crops
TEMPLATE_FRAME = 1.10


def _to_gray(image):
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    if arr.ndim != 2:
        raise ValueError(f"expected HxW or HxWxC image, got shape {arr.shape}")
    if arr.max() > 1.5:  # 8-bit input
        arr = arr / 255.0
    return arr


def _resize_gray(arr, size):
    img = Image.fromarray(arr.astype(np.float32), mode="F")
    out = img.resize((size, size), Image.BILINEAR)
    return np.asarray(out, dtype=np.float64)


def _mass_stats(patch):
    """Centroid and spread of above-mean brightness, in [0, 1] patch units."""
    size = patch.shape[0]
    weights = np.clip(patch - patch.mean(), 0.0, None)
    total = weights.sum()
    if total <= 1e-9:
        return 0.5, 0.5, 0.0, 0.0
    ys, xs = (np.mgrid[0:size, 0:size] + 0.5) / size
    cx = float((weights * xs).sum() / total)
    cy = float((weights * ys).sum() / total)
    sx = float(np.sqrt((weights * (xs - cx) ** 2).sum() / total))
    sy = float(np.sqrt((weights * (ys - cy) ** 2).sum() / total))
    return cx, cy, sx, sy


class TemplateScorer:
    """Scores a patch by normalized cross-correlation against a mean-face
    template, mapped to [0, 1] via (ncc + 1) / 2. Regression offsets come
    from the patch's brightness-mass centroid and spread, calibrated
    against the template's known face extent."""

    def __init__(self, templates, extent_factors=(3.2, 3.2)):
        self.templates = {size: np.asarray(t, dtype=np.float64) for size, t in templates.items()}
        # multipliers turning a mass spread into an estimated face box size
        self.kx, self.ky = extent_factors
        # refine-stage crops should frame a candidate like the template
        self.context_frame = TEMPLATE_FRAME

    @classmethod
    def for_sprites(cls, stage_sizes=(12, 24, 48), n_identities=8, render_size=48, seed=1234):
        """Average neutral sprite faces over several identities, cropped
        square around the face center; calibrate the spread-to-extent
        factors from the renderer's ground-truth boxes."""
        crops = []
        kx, ky = [], []
        for k in range(n_identities):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(k,))))
            ident = ds.SpriteIdentity.sample(rng)
            arr, (x1, y1, x2, y2) = ds.render_sprite(ident, "neutral", render_size)
            gray = _to_gray(arr)
            cx, cy = (x1 + x2) / 2.0, (y1 + y2) / 2.0
            side = TEMPLATE_FRAME * (y2 - y1)
            crop = _crop_square(gray, cx, cy, side, max(stage_sizes))
            crops.append(crop)
            _, _, sx, sy = _mass_stats(crop)
            if sx > 0 and sy > 0:
                kx.append(((x2 - x1) / side) / sx)
                ky.append(((y2 - y1) / side) / sy)
        mean_face = np.mean(crops, axis=0)
        templates = {s: _resize_gray(mean_face, s) for s in stage_sizes}
        return cls(templates, extent_factors=(float(np.mean(kx)), float(np.mean(ky))))

    def score_patch(self, patch):
        patch = np.asarray(patch, dtype=np.float64)
        size = patch.shape[0]
        if size not in self.templates:
            raise ValueError(f"no template for patch size {size}")
        t = self.templates[size]
        p = patch - patch.mean()
        q = t - t.mean()
        denom = np.sqrt(np.sum(p * p) * np.sum(q * q))
        ncc = float(np.sum(p * q) / denom) if denom > 1e-12 else 0.0
        prob = float(np.clip((ncc + 1.0) / 2.0, 0.0, 1.0))
        # regression: move the window onto the bright (face) mass and match
        # its extent, so overlapping windows converge onto one box
        cx, cy, sx, sy = _mass_stats(patch)
        half_w = self.kx * sx / 2.0
        half_h = self.ky * sy / 2.0
        if half_w <= 0.0 or half_h <= 0.0:
            reg = (0.0, 0.0, 0.0, 0.0)
        else:
            reg = (cx - half_w, cy - half_h, cx + half_w - 1.0, cy + half_h - 1.0)
        return prob, reg, SPRITE_LANDMARKS_NORM.copy()


# ---------------------------------------------------------------------------
# cascade


@dataclass(frozen=True)
class CascadeConfig:
    min_face: int = 20
    pyramid_factor: float = 0.709
    stage_sizes: tuple = (12, 24, 48)
    score_thresholds: tuple = (0.6, 0.7, 0.7)
    nms_thresholds: tuple = (0.5, 0.7, 0.7)
    stride: int = 2

    def __post_init__(self):
        if self.min_face < self.stage_sizes[0]:
            raise ValueError(f"min_face must be >= {self.stage_sizes[0]}, got {self.min_face}")
        if not 0.0 < self.pyramid_factor < 1.0:
            raise ValueError(f"pyramid_factor must lie in (0, 1), got {self.pyramid_factor}")


def _crop_square(gray, cx, cy, side, out_size):
    """Crop a square window (zero-padded at borders) and resize."""
    half = side / 2.0
    x1, y1 = int(np.floor(cx - half)), int(np.floor(cy - half))
    x2, y2 = int(np.ceil(cx + half)), int(np.ceil(cy + half))
    h, w = gray.shape
    canvas = np.zeros((y2 - y1, x2 - x1))
    sx1, sy1 = max(x1, 0), max(y1, 0)
    sx2, sy2 = min(x2, w), min(y2, h)
    if sx2 > sx1 and sy2 > sy1:
        canvas[sy1 - y1 : sy2 - y1, sx1 - x1 : sx2 - x1] = gray[sy1:sy2, sx1:sx2]
    return _resize_gray(canvas, out_size)


def _square_box(b: BBox) -> BBox:
    side = max(b.width, b.height)
    cx, cy = b.center()
    return BBox(cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0)


def _landmarks_in_box(norm_pts, box: BBox) -> Landmarks5:
    pts = np.asarray(norm_pts, dtype=np.float64).copy()
    pts[:, 0] = box.x1 + pts[:, 0] * box.width
    pts[:, 1] = box.y1 + pts[:, 1] * box.height
    return Landmarks5.from_array(pts)


def _stage1(gray, scorer, cfg, stats):
    h, w = gray.shape
    size = cfg.stage_sizes[0]
    scale = size / float(cfg.min_face)
    all_kept = []
    while min(h, w) * scale >= size:
        sh, sw = int(round(h * scale)), int(round(w * scale))
        scaled = np.asarray(
            Image.fromarray(gray.astype(np.float32), mode="F").resize((sw, sh), Image.BILINEAR),
            dtype=np.float64,
        )
        found = []
        for r in range(0, sh - size + 1, cfg.stride):
            for c in range(0, sw - size + 1, cfg.stride):
                stats["windows_scored"] += 1
                prob, reg, _ = scorer.score_patch(scaled[r : r + size, c : c + size])
                if prob >= cfg.score_thresholds[0]:
                    box = BBox(c / scale, r / scale, (c + size) / scale, (r + size) / scale)
                    found.append(Candidate(box, prob, tuple(reg)))
        all_kept.extend(nms(found, cfg.nms_thresholds[0]))
        scale *= cfg.pyramid_factor
    merged = nms(all_kept, 0.7)
    out = []
    for c in merged:
        try:
            out.append(Candidate(apply_regression(c), c.score))
        except ValueError:
            stats["dropped_degenerate"] += 1
    stats["stage1_kept"] = len(out)
    return out


def _refine_stage(gray, candidates, scorer, cfg, stage_index, stats):
    size = cfg.stage_sizes[stage_index]
    threshold = cfg.score_thresholds[stage_index]
    frame = getattr(scorer, "context_frame", 1.0)
    rescored = []
    for c in candidates:
        sq = _square_box(c.bbox)
        cx, cy = sq.center()
        side = sq.width * frame
        patch = _crop_square(gray, cx, cy, side, size)
        prob, reg, lm_norm = scorer.score_patch(patch)
        if prob < threshold:
            continue
        # regression offsets are relative to the scored crop window
        crop_box = BBox(cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0)
        try:
            refined = apply_regression(Candidate(crop_box, prob, tuple(reg)))
        except ValueError:
            stats["dropped_degenerate"] += 1
            continue
        lm = _landmarks_in_box(lm_norm, refined) if lm_norm is not None else None
        rescored.append(Candidate(refined, prob, landmarks=lm))
    mode = "min" if stage_index == 2 else "union"
    kept = nms(rescored, cfg.nms_thresholds[stage_index], mode=mode) if rescored else []
    stats[f"stage{stage_index + 1}_kept"] = len(kept)
    return kept


def cascade_detect(image, scorers, config: CascadeConfig | None = None, stats=None):
    """Run the three-stage cascade; returns a list of
    (BBox, Landmarks5 or None, score) sorted by descending score.

    ``scorers`` is a sequence of three per-patch scorers (one per stage).
    """
    cfg = config or CascadeConfig()
    if len(scorers) != 3:
        raise ValueError(f"expected 3 stage scorers, got {len(scorers)}")
    gray = _to_gray(image)
    if min(gray.shape) < cfg.min_face:
        raise ValueError(f"image side {min(gray.shape)} is below min_face {cfg.min_face}")
    if stats is None:
        stats = {}
    stats.setdefault("windows_scored", 0)
    stats.setdefault("dropped_degenerate", 0)

    candidates = _stage1(gray, scorers[0], cfg, stats)
    if candidates:
        candidates = _refine_stage(gray, candidates, scorers[1], cfg, 1, stats)
    if candidates:
        candidates = _refine_stage(gray, candidates, scorers[2], cfg, 2, stats)
    return [(c.bbox, c.landmarks, c.score) for c in candidates]


# ---------------------------------------------------------------------------
# alignment

# canonical frontal 5-point layout, as fractions of the output frame
_CANONICAL_NORM = np.array(
    [
        [0.30, 0.35],
        [0.70, 0.35],
        [0.50, 0.55],
        [0.33, 0.72],
        [0.67, 0.72],
    ]
)


def canonical_template(out_size=64) -> Landmarks5:
    """Frontal landmark layout scaled to an ``out_size`` square frame."""
    return Landmarks5.from_array(_CANONICAL_NORM * float(out_size))


def solve_similarity(src_pts, dst_pts):
    """Least-squares similarity transform T(p) = s*R(theta)*p + t mapping
    src points onto dst points. Returns (matrix 2x2, translation 2-vector).
    """
    p = np.asarray(src_pts, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 2)
    if p.shape != q.shape or p.shape[0] < 2:
        raise ValueError("need matching sets of at least 2 points")
    p_mean, q_mean = p.mean(axis=0), q.mean(axis=0)
    pc, qc = p - p_mean, q - q_mean
    d = float(np.sum(pc * pc))
    if d < 1e-12:
        raise ValueError("rank-deficient landmark configuration (source points coincide)")
    a = float(np.sum(pc * qc)) / d
    b = float(np.sum(pc[:, 0] * qc[:, 1] - pc[:, 1] * qc[:, 0])) / d
    matrix = np.array([[a, -b], [b, a]])
    translation = q_mean - matrix @ p_mean
    return matrix, translation


def _bilinear_sample(image, ys, xs):
    h, w = image.shape[:2]
    inside = (ys >= 0) & (ys <= h - 1) & (xs >= 0) & (xs <= w - 1)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys, 0, h - 1) - y0
    fx = np.clip(xs, 0, w - 1) - x0
    if image.ndim == 3:
        fy, fx, inside = fy[..., None], fx[..., None], inside[..., None]
    out = (
        image[y0, x0] * (1 - fy) * (1 - fx)
        + image[y1, x0] * fy * (1 - fx)
        + image[y0, x1] * (1 - fy) * fx
        + image[y1, x1] * fy * fx
    )
    return out * inside


def align_face(image, landmarks: Landmarks5, template: Landmarks5 | None = None, out_size=64):
    """Warp ``image`` so the detected landmarks land on the canonical
    template positions; returns an ``out_size`` square crop."""
    template = template or canonical_template(out_size)
    matrix, translation = solve_similarity(landmarks.as_array(), template.as_array())
    scale2 = float(np.linalg.det(matrix))
    if scale2 < 1e-12:
        raise ValueError("alignment transform collapses the image (near-zero scale)")
    inv = np.linalg.inv(matrix)
    arr = np.asarray(image, dtype=np.float64)
    ys, xs = np.mgrid[0:out_size, 0:out_size].astype(np.float64)
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1) - translation
    src = grid @ inv.T
    sample = _bilinear_sample(arr, src[:, 1].reshape(out_size, out_size), src[:, 0].reshape(out_size, out_size))
    return sample
