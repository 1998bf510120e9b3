"""Deterministic synthetic indoor scenes with a controlled scale ambiguity.

Every scene is a fronto-parallel back wall plus one to three axis-aligned
box objects, rendered through a pinhole camera, and carries a global scale
factor drawn from {1, 2}. Doubling the scale doubles every physical length
and every depth, so the projected image is bit-identical while the depth
map doubles; only the caption's room-size word distinguishes the two.

Shading is the channel that keeps images informative about the remaining
(pre-scale) geometry: wall brightness encodes the pre-scale wall depth
through an affine map that is exact in float32, and each object class has
its own fixed albedo outside the wall's brightness range. Object depths
are chosen so the projected half-height is an integer, which makes
(caption, image) -> depth exactly invertible for unoccluded objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

SCALE_WORDS = {1: "small", 2: "large"}

# Wall depths live on a 256-point grid in [3, 6) metres pre-scale; the
# brightness map (9 - depth)/16 is exact in float32 on that grid and its
# range [0.188, 0.375] stays clear of every object albedo below.
WALL_DEPTH_BASE = 3.0
WALL_DEPTH_SPAN = 3.0
WALL_DEPTH_STEPS = 256
WALL_CLEARANCE = 0.25


@dataclass(frozen=True)
class ObjectClass:
    """A renderable object template: physical size, albedo, placement band."""

    name: str
    height_m: float
    width_m: float
    albedo: float
    depth_range: tuple[float, float]


DEFAULT_CATALOG: tuple[ObjectClass, ...] = (
    ObjectClass("chair", 1.0, 0.5, 0.65, (2.2, 6.0)),
    ObjectClass("table", 0.75, 1.5, 0.72, (3.0, 6.0)),
    ObjectClass("bed", 0.6, 2.0, 0.79, (4.0, 6.0)),
    ObjectClass("door", 2.0, 0.9, 0.86, (4.3, 6.0)),
    ObjectClass("lamp", 1.5, 0.3, 0.93, (3.2, 6.0)),
    ObjectClass("shelf", 1.8, 0.8, 1.0, (3.9, 6.0)),
)


@dataclass(frozen=True)
class Camera:
    height: int = 32
    width: int = 32
    focal_px: float = 64.0


@dataclass(frozen=True)
class GeneratorConfig:
    height: int = 32
    width: int = 32
    focal_px: float = 64.0
    min_objects: int = 1
    max_objects: int = 3

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ConfigError("image sides must be at least 8 pixels")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ConfigError("need 0 <= min_objects <= max_objects")
        if self.focal_px <= 0:
            raise ConfigError("focal length must be positive")

    @property
    def camera(self) -> Camera:
        return Camera(self.height, self.width, self.focal_px)


@dataclass(frozen=True)
class PlacedObject:
    class_id: int
    dx_m: float
    dy_m: float
    depth_m: float  # pre-scale distance from the camera


@dataclass(frozen=True)
class SceneSpec:
    """Pre-scale layout plus the global scale factor.

    All geometry fields are pre-scale; the rendered scene is this layout
    with every length multiplied by `scale`.
    """

    scale: int
    wall_depth_m: float
    objects: tuple[PlacedObject, ...] = field(default_factory=tuple)


def wall_albedo(wall_depth_m: float) -> float:
    return (9.0 - wall_depth_m) / 16.0


def wall_depth_from_albedo(albedo: float) -> float:
    return 9.0 - 16.0 * float(albedo)


def _rng(seed, salt: int) -> np.random.Generator:
    parts = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return np.random.default_rng(np.random.SeedSequence(parts + [salt]))


def _feasible_half_heights(cls: ObjectClass, wall_depth: float,
                           config: GeneratorConfig) -> list[int]:
    # Integer projected half-heights whose implied depth sits inside the
    # class band, in front of the wall, and whose box fits in frame.
    f = config.focal_px
    lo, hi = cls.depth_range
    hi = min(hi, wall_depth - WALL_CLEARANCE)
    out = []
    for hh in range(4, config.height // 2 - 1):
        z = cls.height_m * f / (2.0 * hh)
        if not lo <= z <= hi:
            continue
        hw = int(np.rint(cls.width_m * f / (2.0 * z)))
        if hw < 1 or hw > config.width // 2 - 1:
            continue
        out.append(hh)
    return out


def sample_scene(seed, catalog: tuple[ObjectClass, ...] = DEFAULT_CATALOG,
                 config: GeneratorConfig = GeneratorConfig()) -> SceneSpec:
    """Draw one scene. The layout stream is independent of the scale stream,
    so two scenes from the same seed differ only in `scale` if the scale
    draw is overridden."""
    layout = _rng(seed, 11)
    scale_rng = _rng(seed, 13)
    f = config.focal_px

    grid_step = WALL_DEPTH_SPAN / WALL_DEPTH_STEPS
    wall = WALL_DEPTH_BASE + grid_step * int(layout.integers(0, WALL_DEPTH_STEPS))
    count = int(layout.integers(config.min_objects, config.max_objects + 1))

    feasible = {i: _feasible_half_heights(c, wall, config)
                for i, c in enumerate(catalog)}
    candidates = [i for i, hhs in feasible.items() if hhs]
    chosen = []
    if count and candidates:
        take = min(count, len(candidates))
        chosen = [int(i) for i in layout.choice(candidates, size=take, replace=False)]

    objects = []
    for cid in chosen:
        cls = catalog[cid]
        hh = int(layout.choice(feasible[cid]))
        z = cls.height_m * f / (2.0 * hh)
        hw = int(np.rint(cls.width_m * f / (2.0 * z)))
        span_y = config.height // 2 - hh
        span_x = config.width // 2 - hw
        off_y = int(layout.integers(-span_y, span_y + 1)) if span_y > 0 else 0
        off_x = int(layout.integers(-span_x, span_x + 1)) if span_x > 0 else 0
        objects.append(PlacedObject(cid, off_x * z / f, off_y * z / f, z))

    scale = int(scale_rng.choice([1, 2]))
    return SceneSpec(scale=scale, wall_depth_m=wall, objects=tuple(objects))


def render(scene: SceneSpec, camera: Camera = Camera(),
           catalog: tuple[ObjectClass, ...] = DEFAULT_CATALOG):
    """Project a scene to a (1, h, w) float32 image and (h, w) float32 depth.

    Painter's algorithm, farthest object first; equal depths resolve in
    favour of the later-listed object. An object whose post-scale depth or
    the wall's is non-positive violates the camera model.
    """
    h, w, f = camera.height, camera.width, camera.focal_px
    k = scene.scale
    wall_post = scene.wall_depth_m * k
    if wall_post <= 0:
        raise ContractError("wall depth must be positive")
    for obj in scene.objects:
        if obj.depth_m * k <= 0:
            raise ContractError(
                f"object depth {obj.depth_m * k} is not in front of the camera"
            )

    image = np.full((1, h, w), np.float32(wall_albedo(scene.wall_depth_m)),
                    dtype=np.float32)
    depth = np.full((h, w), np.float32(wall_post), dtype=np.float32)

    order = sorted(range(len(scene.objects)),
                   key=lambda i: (-scene.objects[i].depth_m, i))
    for i in order:
        obj = scene.objects[i]
        cls = catalog[obj.class_id]
        z = obj.depth_m * k
        hh = int(np.rint(cls.height_m * k * f / (2.0 * z)))
        hw = int(np.rint(cls.width_m * k * f / (2.0 * z)))
        if hh < 1 or hw < 1:
            continue
        cy = h // 2 + int(np.rint(obj.dy_m * k * f / z))
        cx = w // 2 + int(np.rint(obj.dx_m * k * f / z))
        r0, r1 = max(cy - hh, 0), min(cy + hh, h)
        c0, c1 = max(cx - hw, 0), min(cx + hw, w)
        if r0 >= r1 or c0 >= c1:
            continue
        image[0, r0:r1, c0:c1] = np.float32(cls.albedo)
        depth[r0:r1, c0:c1] = np.float32(z)

    return image, depth


def caption_words(scene: SceneSpec,
                  catalog: tuple[ObjectClass, ...] = DEFAULT_CATALOG) -> list[str]:
    """Template: "a (small|large) room with a <obj> [and a <obj>]...".

    Objects are listed in catalog order regardless of draw order, so the
    caption is a pure function of the scene content.
    """
    if scene.scale not in SCALE_WORDS:
        raise ContractError(f"unknown scale factor {scene.scale}")
    words = ["a", SCALE_WORDS[scene.scale], "room"]
    ids = sorted(obj.class_id for obj in scene.objects)
    if ids:
        words.append("with")
        for pos, cid in enumerate(ids):
            if pos:
                words.append("and")
            words.extend(["a", catalog[cid].name])
    return words


def caption_string(scene: SceneSpec,
                   catalog: tuple[ObjectClass, ...] = DEFAULT_CATALOG) -> str:
    return " ".join(caption_words(scene, catalog))
