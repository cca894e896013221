"""Raw images, patch grids and the synthetic shape renderer.

Images are float arrays of shape [H, W, 3] with values in [0, 1]. Patches are
taken in row-major order (top-left to bottom-right) and flattened in
(row, column, channel) order.

The renderer draws up to four shapes on a black canvas, one per quadrant,
each in a pure primary color. ``read_scene`` recovers the scene from pixels
alone and serves as the counting oracle for synthetic labels.
"""

from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from core.errors import ConfigurationError, DimensionError


class RawImage(BaseModel):
    """An [H, W, C] image with pixels in [0, 1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    pixels: np.ndarray

    @field_validator("pixels")
    @classmethod
    def _check_pixels(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float32)
        if value.ndim != 3:
            raise ValueError(f"image pixels must be [H, W, C], got shape {value.shape}")
        if value.shape[2] != 3:
            raise ValueError(f"images must have 3 channels, got {value.shape[2]}")
        return value

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[2])


class PatchGrid(BaseModel):
    """N flattened P x P x C patches laid out on a grid_h x grid_w grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    patches: np.ndarray
    patch_size: int
    grid_h: int
    grid_w: int
    channels: int = 3

    @model_validator(mode="after")
    def _check_layout(self) -> "PatchGrid":
        expected = (self.grid_h * self.grid_w, self.patch_size * self.patch_size * self.channels)
        if self.patches.shape != expected:
            raise ValueError(f"patch matrix shape {self.patches.shape} does not match layout {expected}")
        return self

    @property
    def n(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def dim(self) -> int:
        return int(self.patches.shape[1])


def patchify(img: RawImage, patch_size: int) -> PatchGrid:
    """Split an image into row-major flattened patches."""
    h, w, c = img.pixels.shape
    if patch_size < 1 or h % patch_size or w % patch_size:
        raise ConfigurationError(f"image {h}x{w} is not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    patches = (
        img.pixels.reshape(gh, patch_size, gw, patch_size, c).transpose(0, 2, 1, 3, 4).reshape(gh * gw, -1).copy()
    )
    return PatchGrid(patches=patches, patch_size=patch_size, grid_h=gh, grid_w=gw, channels=c)


def unpatchify(grid: PatchGrid) -> RawImage:
    """Reassemble the image a grid was cut from."""
    p, c = grid.patch_size, grid.channels
    pixels = grid.patches.reshape(grid.grid_h, grid.grid_w, p, p, c).transpose(0, 2, 1, 3, 4)
    return RawImage(pixels=pixels.reshape(grid.grid_h * p, grid.grid_w * p, c))


# Synthetic scenes


class ShapeKind(str, Enum):
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"


class Color(str, Enum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"


SHAPES: Tuple[ShapeKind, ...] = tuple(ShapeKind)
COLORS: Tuple[Color, ...] = tuple(Color)

# Quadrant order: top-left, top-right, bottom-left, bottom-right.
QUADRANT_NAMES: Tuple[str, ...] = ("top left", "top right", "bottom left", "bottom right")

_CHANNEL = {Color.RED: 0, Color.GREEN: 1, Color.BLUE: 2}


class SceneObject(BaseModel):
    model_config = ConfigDict(frozen=True)

    shape: ShapeKind
    color: Color
    quadrant: int

    @field_validator("quadrant")
    @classmethod
    def _check_quadrant(cls, value: int) -> int:
        if not 0 <= value < 4:
            raise ValueError(f"quadrant must lie in [0, 4), got {value}")
        return value

    @property
    def class_index(self) -> int:
        """Joint shape x color label in [0, 9)."""
        return SHAPES.index(self.shape) * len(COLORS) + COLORS.index(self.color)


class Scene(BaseModel):
    """Objects sorted by quadrant, at most one per quadrant."""

    model_config = ConfigDict(frozen=True)

    objects: Tuple[SceneObject, ...]

    @field_validator("objects")
    @classmethod
    def _check_objects(cls, value: Tuple[SceneObject, ...]) -> Tuple[SceneObject, ...]:
        quadrants = [o.quadrant for o in value]
        if len(set(quadrants)) != len(quadrants):
            raise ValueError("a quadrant holds at most one object")
        return tuple(sorted(value, key=lambda o: o.quadrant))

    @property
    def count(self) -> int:
        return len(self.objects)

    def count_color(self, color: Color) -> int:
        return sum(1 for o in self.objects if o.color == color)

    def has(self, shape: ShapeKind, color: Color) -> bool:
        return any(o.shape == shape and o.color == color for o in self.objects)

    def at(self, quadrant: int) -> Optional[SceneObject]:
        for o in self.objects:
            if o.quadrant == quadrant:
                return o
        return None


def _shape_mask(kind: ShapeKind, size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dy, dx = yy - cy, xx - cx
    if kind == ShapeKind.CIRCLE:
        return dy * dy + dx * dx <= radius * radius
    if kind == ShapeKind.SQUARE:
        return (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    # Upward isosceles triangle inscribed in the same 2r x 2r box.
    inside_box = (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    return inside_box & (np.abs(dx) <= (dy + radius) / 2.0)


def render_scene(scene: Scene, size: int = 32, rng: Optional[np.random.Generator] = None) -> RawImage:
    """Draw the scene; ``rng`` jitters each shape's size and centre by at most one pixel."""
    if size % 2 or size < 8:
        raise ConfigurationError(f"canvas size must be even and at least 8, got {size}")
    half = size // 2
    base_radius = 0.375 * half
    pixels = np.zeros((size, size, 3), dtype=np.float32)
    for obj in scene.objects:
        qy, qx = divmod(obj.quadrant, 2)
        radius, jy, jx = base_radius, 0.0, 0.0
        if rng is not None:
            radius += float(rng.integers(-1, 1, endpoint=True)) * 0.5
            jy, jx = (float(v) for v in rng.integers(-1, 1, size=2, endpoint=True))
        cy, cx = qy * half + half / 2.0 + jy, qx * half + half / 2.0 + jx
        mask = _shape_mask(obj.shape, size, cy, cx, radius)
        pixels[mask, _CHANNEL[obj.color]] = 1.0
    return RawImage(pixels=pixels)


def _classify_region(region: np.ndarray) -> Optional[SceneObject]:
    lit = region.max(axis=2) > 0.5
    if not lit.any():
        return None
    channel = int(np.argmax(region[lit].sum(axis=0)))
    ys, xs = np.nonzero(lit)
    box = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
    fill = lit.sum() / box
    # Square fills its box, a disc about 0.79 of it, the triangle about half.
    if fill > 0.95:
        shape = ShapeKind.SQUARE
    elif fill > 0.68:
        shape = ShapeKind.CIRCLE
    else:
        shape = ShapeKind.TRIANGLE
    return SceneObject(shape=shape, color=COLORS[channel], quadrant=0)


def read_scene(img: RawImage) -> Scene:
    """Recover the scene from pixels by inspecting each quadrant."""
    if img.height != img.width or img.height % 2:
        raise DimensionError(f"scene images are square with even side, got {img.height}x{img.width}")
    half = img.height // 2
    objects: List[SceneObject] = []
    for quadrant in range(4):
        qy, qx = divmod(quadrant, 2)
        region = img.pixels[qy * half : (qy + 1) * half, qx * half : (qx + 1) * half]
        found = _classify_region(region)
        if found is not None:
            objects.append(found.model_copy(update={"quadrant": quadrant}))
    return Scene(objects=tuple(objects))
