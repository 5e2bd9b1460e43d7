"""Coordinate frames, homographies, similarity transforms and box geometry.

Three planar frames are used throughout the package:

* ``Road``  -- the metric plane defined by the homography correspondences,
* ``Setup`` -- anchored at the sensor mount, x pointing along the road
  towards the traffic, y to the left,
* ``Map``   -- an external map frame.

Image coordinates (``u`` to the right, ``v`` down, pixels) are mapped into
``Road`` by a :class:`Homography`; the metric frames are related by
:class:`FrameTransform` instances kept in a :class:`TransformRegistry`.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    DegenerateConfiguration,
    PointAtInfinity,
    TooFewCorrespondences,
    UnknownFrame,
)

FRAMES = ("Image", "Road", "Setup", "Map")
PLANE_FRAMES = ("Road", "Setup", "Map")

# side-visibility compensation defaults
SIDE_COMPENSATION = 0.5
SIDE_THRESHOLD = math.radians(10.0)


class ImagePoint(NamedTuple):
    u: float
    v: float


class PlanePoint(NamedTuple):
    x: float
    y: float
    frame: str = "Road"


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Axis-aligned image box given by its top-left and bottom-right corners."""

    u1: float
    v1: float
    u2: float
    v2: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.u1, self.v1, self.u2, self.v2)):
            raise ValueError("box coordinates must be finite")
        if not (self.u1 < self.u2 and self.v1 < self.v2):
            raise ValueError(
                f"invalid box ({self.u1}, {self.v1})-({self.u2}, {self.v2})"
            )

    @property
    def p1(self):
        return ImagePoint(self.u1, self.v1)

    @property
    def p2(self):
        return ImagePoint(self.u2, self.v2)

    @property
    def width(self):
        return self.u2 - self.u1

    @property
    def height(self):
        return self.v2 - self.v1

    @property
    def area(self):
        return self.width * self.height

    def as_list(self):
        return [self.u1, self.v1, self.u2, self.v2]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes."""
    iw = min(a.u2, b.u2) - max(a.u1, b.u1)
    ih = min(a.v2, b.v2) - max(a.v1, b.v1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def side_shift(width, heading, optical_axis=0.0,
               coefficient=SIDE_COMPENSATION, threshold=SIDE_THRESHOLD):
    """Horizontal pixel offset from the lower-edge center to the front center.

    A vehicle seen at an angle shows one of its sides, which pulls the
    lower-edge center away from the front of the vehicle. The offset is
    ``coefficient * width * sin(view angle)`` and points towards the edge
    the vehicle is moving to. Below ``threshold`` no offset is applied.
    Positive ``u`` corresponds to negative road ``y`` for a camera looking
    along ``optical_axis``.
    """
    if heading is None:
        return 0.0
    s = math.sin(heading - optical_axis)
    if abs(s) <= math.sin(threshold):
        return 0.0
    return -coefficient * width * s


def footprint_point(box: BoundingBox, heading=None, optical_axis=0.0,
                    coefficient=SIDE_COMPENSATION,
                    threshold=SIDE_THRESHOLD) -> ImagePoint:
    """Road-contact point of a detected vehicle in the image.

    Defaults to the center of the lower box edge. When the driving
    direction is known the point is shifted by :func:`side_shift`.
    """
    u = 0.5 * (box.u1 + box.u2)
    u += side_shift(box.width, heading, optical_axis, coefficient, threshold)
    return ImagePoint(u, box.v2)


# --------------------------------------------------------------------------
# homography


@dataclass(frozen=True, eq=False)
class Homography:
    """Projective map from the image plane to the road plane."""

    h: np.ndarray
    source_frame: str = "Image"
    target_frame: str = "Road"

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(h)):
            raise DegenerateConfiguration("homography has non-finite entries")
        if abs(h[2, 2]) > 1e-15:
            h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= 1e-12:
            raise DegenerateConfiguration("homography is singular")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    def inverse(self):
        return Homography(np.linalg.inv(self.h), self.target_frame, self.source_frame)

    def apply(self, points):
        """Map an ``(n, 2)`` array of points; raises on points at infinity."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        w = self.h[2, 0] * pts[:, 0] + self.h[2, 1] * pts[:, 1] + self.h[2, 2]
        if np.any(np.abs(w) < 1e-12):
            raise PointAtInfinity("point maps to infinity")
        x = (self.h[0, 0] * pts[:, 0] + self.h[0, 1] * pts[:, 1] + self.h[0, 2]) / w
        y = (self.h[1, 0] * pts[:, 0] + self.h[1, 1] * pts[:, 1] + self.h[1, 2]) / w
        return np.column_stack([x, y])

    def to_dict(self):
        return {
            "source_frame": self.source_frame,
            "target_frame": self.target_frame,
            "h": self.h.tolist(),
        }


def apply_homography(h: Homography, p) -> PlanePoint:
    u, v = float(p[0]), float(p[1])
    m = h.h
    w = m[2, 0] * u + m[2, 1] * v + m[2, 2]
    if abs(w) < 1e-12:
        raise PointAtInfinity(f"point ({u}, {v}) maps to infinity")
    x = (m[0, 0] * u + m[0, 1] * v + m[0, 2]) / w
    y = (m[1, 0] * u + m[1, 1] * v + m[1, 2]) / w
    return PlanePoint(x, y, h.target_frame)


def _hartley_normalizer(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _check_distinct(src):
    scale = max(np.ptp(src, axis=0).max(), 1.0)
    for i, j in itertools.combinations(range(len(src)), 2):
        if np.allclose(src[i], src[j], rtol=0.0, atol=1e-12 * scale):
            raise DegenerateConfiguration(f"duplicate source point {tuple(src[i])}")


def _collinear(a, b, c, tol):
    return abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) <= tol


def estimate_homography(src, dst) -> Homography:
    """Normalized DLT estimate of the image-to-road homography.

    ``src`` and ``dst`` are ``(n, 2)`` arrays of corresponding points with
    ``n >= 4``. With exactly four points the solution is exact; with more
    it minimizes the algebraic error in normalized coordinates.
    """
    src = check_array(src, dtype=float, ensure_min_samples=1)
    dst = check_array(dst, dtype=float, ensure_min_samples=1)
    if src.shape != dst.shape or src.shape[1] != 2:
        raise ValueError("src and dst must both be (n, 2) arrays")
    n = len(src)
    if n < 4:
        raise TooFewCorrespondences(f"need at least 4 correspondences, got {n}")
    _check_distinct(src)
    span = max(np.ptp(src, axis=0).max(), 1e-300)
    tol = 1e-10 * span * span
    if n == 4:
        for a, b, c in itertools.combinations(src, 3):
            if _collinear(a, b, c, tol):
                raise DegenerateConfiguration("three source points are collinear")
    elif all(_collinear(src[0], src[1], c, tol) for c in src[2:]):
        raise DegenerateConfiguration("all source points are collinear")

    ts = _hartley_normalizer(src)
    td = _hartley_normalizer(dst)
    sn = src @ ts[:2, :2].T + ts[:2, 2]
    dn = dst @ td[:2, :2].T + td[:2, 2]

    a = np.zeros((2 * n, 9))
    for i, ((x, y), (xp, yp)) in enumerate(zip(sn, dn)):
        a[2 * i] = [-x, -y, -1.0, 0.0, 0.0, 0.0, xp * x, xp * y, xp]
        a[2 * i + 1] = [0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, yp]
    _, sv, vt = np.linalg.svd(a)
    # a second (near-)null direction means the points do not pin down H
    if sv[-2] <= 1e-10 * sv[0]:
        raise DegenerateConfiguration("correspondences do not determine a homography")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) < 1e-15:
        raise DegenerateConfiguration("estimated homography cannot be normalized")
    return Homography(h / h[2, 2])


class HomographyEstimator(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(image_points, road_points)`` then ``transform``.

    Attributes
    ----------
    homography_ : Homography
    reprojection_error_ : float
        Largest Euclidean residual over the fitted correspondences.
    """

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = check_array(y, dtype=float)
        self.homography_ = estimate_homography(X, y)
        self.reprojection_error_ = float(
            np.max(np.linalg.norm(self.homography_.apply(X) - y, axis=1))
        )
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "homography_")
        return self.homography_.apply(check_array(X, dtype=float))

    def inverse_transform(self, X):
        check_is_fitted(self, "homography_")
        return self.homography_.inverse().apply(check_array(X, dtype=float))


# --------------------------------------------------------------------------
# similarity transforms between metric frames


@dataclass(frozen=True)
class FrameTransform:
    """``p_target = scale * R(rotation) @ p_source + translation``."""

    rotation: float = 0.0
    translation: tuple = (0.0, 0.0)
    scale: float = 1.0
    source_frame: str = "Road"
    target_frame: str = "Setup"

    def __post_init__(self):
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ValueError("scale must be positive")
        tx, ty = self.translation
        object.__setattr__(self, "translation", (float(tx), float(ty)))
        object.__setattr__(self, "rotation", _wrap(float(self.rotation)))

    @property
    def matrix(self):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points):
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T + np.asarray(self.translation)

    def apply_vector(self, vectors):
        """Rotate and scale velocity-like vectors (no translation)."""
        return np.asarray(vectors, dtype=float) @ self.matrix.T

    def apply_point(self, p) -> PlanePoint:
        x, y = self.apply(np.array([p[0], p[1]], dtype=float))
        return PlanePoint(float(x), float(y), self.target_frame)

    def inverse(self):
        inv = np.linalg.inv(self.matrix)
        t = -inv @ np.asarray(self.translation)
        return FrameTransform(-self.rotation, (t[0], t[1]), 1.0 / self.scale,
                              self.target_frame, self.source_frame)

    def compose(self, inner: "FrameTransform"):
        """Return ``self ∘ inner`` (apply ``inner`` first)."""
        if inner.target_frame != self.source_frame:
            raise ValueError(
                f"cannot compose {inner.source_frame}->{inner.target_frame} "
                f"with {self.source_frame}->{self.target_frame}"
            )
        t = self.apply(np.asarray(inner.translation))
        return FrameTransform(self.rotation + inner.rotation, (t[0], t[1]),
                              self.scale * inner.scale,
                              inner.source_frame, self.target_frame)

    def to_dict(self):
        return {
            "source_frame": self.source_frame,
            "target_frame": self.target_frame,
            "rotation": self.rotation,
            "translation": list(self.translation),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d.get("rotation", 0.0)),
                   tuple(d.get("translation", (0.0, 0.0))),
                   float(d.get("scale", 1.0)),
                   d.get("source_frame", "Road"),
                   d.get("target_frame", "Setup"))


def _wrap(a):
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a == -math.pi else a


def estimate_frame_transform(src, dst, source_frame="Road",
                             target_frame="Setup") -> FrameTransform:
    """Least-squares similarity transform between two point sets.

    Points are treated as complex numbers; the optimal ``a = s*exp(i*phi)``
    and ``b`` minimizing ``sum |a*z + b - w|^2`` have a closed form.
    """
    src = check_array(src, dtype=float)
    dst = check_array(dst, dtype=float)
    if src.shape != dst.shape or src.shape[1] != 2:
        raise ValueError("src and dst must both be (n, 2) arrays")
    if len(src) < 2:
        raise TooFewCorrespondences("need at least 2 correspondences")
    z = src[:, 0] + 1j * src[:, 1]
    w = dst[:, 0] + 1j * dst[:, 1]
    zc = z - z.mean()
    denom = float(np.sum(np.abs(zc) ** 2))
    if denom <= 1e-24 * max(1.0, float(np.max(np.abs(z))) ** 2):
        raise DegenerateConfiguration("all source points coincide")
    a = np.sum(np.conj(zc) * (w - w.mean())) / denom
    if abs(a) == 0.0:
        raise DegenerateConfiguration("target points coincide")
    b = w.mean() - a * z.mean()
    return FrameTransform(float(np.angle(a)), (float(b.real), float(b.imag)),
                          float(abs(a)), source_frame, target_frame)


class SimilarityTransformEstimator(TransformerMixin, BaseEstimator):
    """``fit(source_points, target_points)`` -> ``transform_``."""

    def __init__(self, source_frame="Road", target_frame="Setup"):
        self.source_frame = source_frame
        self.target_frame = target_frame

    def fit(self, X, y):
        self.transform_ = estimate_frame_transform(
            X, y, self.source_frame, self.target_frame)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        return self.transform_.apply(check_array(X, dtype=float))

    def inverse_transform(self, X):
        check_is_fitted(self, "transform_")
        return self.transform_.inverse().apply(check_array(X, dtype=float))


class TransformRegistry:
    """Registered frame transforms; lookups chain through inverses."""

    def __init__(self, transforms=()):
        self._edges = {}
        for t in transforms:
            self.register(t)

    def register(self, t: FrameTransform):
        self._edges[(t.source_frame, t.target_frame)] = t
        self._edges[(t.target_frame, t.source_frame)] = t.inverse()

    @property
    def frames(self):
        return sorted({f for edge in self._edges for f in edge})

    def get(self, source, target) -> FrameTransform:
        if source == target:
            return FrameTransform(source_frame=source, target_frame=target)
        if (source, target) in self._edges:
            return self._edges[(source, target)]
        # breadth-first search over registered edges
        prev = {source: None}
        queue = deque([source])
        while queue:
            f = queue.popleft()
            for (a, b) in self._edges:
                if a == f and b not in prev:
                    prev[b] = f
                    queue.append(b)
        if target not in prev:
            raise UnknownFrame(f"no transform chain {source} -> {target}")
        path = [target]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        path.reverse()
        out = self._edges[(path[0], path[1])]
        for a, b in zip(path[1:], path[2:]):
            out = self._edges[(a, b)].compose(out)
        return out


# --------------------------------------------------------------------------
# correspondence / calibration documents


def load_correspondences(path_or_doc):
    """Read ``{"source_frame", "target_frame", "pairs": [[[su,sv],[tx,ty]], ...]}``.

    Returns ``(src, dst, source_frame, target_frame)``.
    """
    doc = path_or_doc
    if not isinstance(doc, dict):
        with open(path_or_doc) as fh:
            doc = json.load(fh)
    pairs = np.asarray(doc["pairs"], dtype=float)
    if pairs.ndim != 3 or pairs.shape[1:] != (2, 2):
        raise ValueError("pairs must be a list of [[sx, sy], [tx, ty]]")
    return (pairs[:, 0, :], pairs[:, 1, :],
            doc.get("source_frame", "Image"), doc.get("target_frame", "Road"))


def correspondences_to_dict(src, dst, source_frame, target_frame):
    return {
        "source_frame": source_frame,
        "target_frame": target_frame,
        "pairs": [[[float(a), float(b)], [float(c), float(d)]]
                  for (a, b), (c, d) in zip(src, dst)],
    }


@dataclass
class Calibration:
    """Everything needed to place detections in metric frames."""

    homography: Homography
    transforms: TransformRegistry
    optical_axis: float = 0.0

    @classmethod
    def from_dict(cls, doc):
        if "h" in doc:
            h = Homography(np.asarray(doc["h"], dtype=float))
        elif "pairs" in doc:
            src, dst, _, _ = load_correspondences(doc)
            h = estimate_homography(src, dst)
        else:
            raise ValueError("calibration needs either 'h' or 'pairs'")
        reg = TransformRegistry()
        for t in doc.get("transforms", []):
            if "pairs" in t:
                src, dst, sf, tf = load_correspondences(t)
                reg.register(estimate_frame_transform(src, dst, sf, tf))
            else:
                reg.register(FrameTransform.from_dict(t))
        return cls(h, reg, float(doc.get("optical_axis", 0.0)))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def road_to(self, frame):
        return self.transforms.get("Road", frame)
