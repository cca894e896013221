"""Deterministic synthetic datasets of colored shapes.

Every example is a pure function of ``(seed, task, index)``: the generator for
index ``i`` is ``default_rng([seed, task_code, i])``, so datasets can be
generated in any order, in any number of worker processes, and always agree
bit for bit. Labels come from the sampled scene, and ``read_scene`` recovers
the same scene from the rendered pixels.
"""

import itertools
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from core.errors import UsageError

from .images import COLORS, QUADRANT_NAMES, SHAPES, Color, RawImage, Scene, SceneObject, ShapeKind, render_scene


class DataTask(str, Enum):
    """Kinds of synthetic dataset."""

    PAIRS = "pairs"
    IMAGES = "images"
    TEXTS = "texts"
    VQA = "vqa"
    NLVR = "nlvr"
    RETRIEVAL = "retrieval"
    IMGCLS = "imgcls"


_TASK_CODE: Dict[DataTask, int] = {task: code for code, task in enumerate(DataTask)}

ANSWERS: Tuple[str, ...] = (
    "zero",
    "one",
    "two",
    "three",
    "red",
    "green",
    "blue",
    "circle",
    "square",
    "triangle",
    "yes",
    "no",
)
NUMBER_WORDS: Tuple[str, ...] = ("zero", "one", "two", "three")
PLURALS: Dict[ShapeKind, str] = {
    ShapeKind.CIRCLE: "circles",
    ShapeKind.SQUARE: "squares",
    ShapeKind.TRIANGLE: "triangles",
}
NUM_CLASSES = len(SHAPES) * len(COLORS)


class SyntheticExample(BaseModel):
    """One generated record: images, text and an integer label (-1 when unused)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    task: DataTask
    index: int
    images: Tuple[RawImage, ...] = ()
    text: str = ""
    label: int = -1
    scenes: Tuple[Scene, ...] = ()


def parse_task(task: Union[str, DataTask]) -> DataTask:
    try:
        return DataTask(task)
    except ValueError as e:
        choices = ", ".join(t.value for t in DataTask)
        raise UsageError(f"unknown dataset task '{task}' (choose from {choices})") from e


def example_rng(seed: int, task: DataTask, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, _TASK_CODE[task], index])


def sample_scene(rng: np.random.Generator, min_objects: int = 1, max_objects: int = 3) -> Scene:
    n = int(rng.integers(min_objects, max_objects, endpoint=True))
    quadrants = rng.choice(4, size=n, replace=False)
    objects = [
        SceneObject(shape=SHAPES[int(rng.integers(len(SHAPES)))], color=COLORS[int(rng.integers(len(COLORS)))], quadrant=int(q))
        for q in quadrants
    ]
    return Scene(objects=tuple(objects))


@lru_cache(maxsize=1)
def scene_space() -> Tuple[Scene, ...]:
    """Every scene with one to three objects, in a fixed enumeration order."""
    cells: List[Optional[Tuple[ShapeKind, Color]]] = [None] + [(s, c) for s in SHAPES for c in COLORS]
    scenes = []
    for layout in itertools.product(cells, repeat=4):
        objects = tuple(
            SceneObject(shape=cell[0], color=cell[1], quadrant=q) for q, cell in enumerate(layout) if cell is not None
        )
        if 1 <= len(objects) <= 3:
            scenes.append(Scene(objects=objects))
    return tuple(scenes)


@lru_cache(maxsize=8)
def _retrieval_order(seed: int) -> np.ndarray:
    return np.random.default_rng([seed, _TASK_CODE[DataTask.RETRIEVAL]]).permutation(len(scene_space()))


def describe(scene: Scene) -> str:
    """Counting caption, e.g. ``one red circle and two blue squares``."""
    groups = []
    for shape in SHAPES:
        for color in COLORS:
            n = sum(1 for o in scene.objects if o.shape == shape and o.color == color)
            if n:
                noun = shape.value if n == 1 else PLURALS[shape]
                groups.append(f"{NUMBER_WORDS[n]} {color.value} {noun}")
    return " and ".join(groups)


def positional_caption(scene: Scene) -> str:
    """Caption naming every object with its quadrant; distinct scenes get distinct captions."""
    return " and ".join(f"{o.color.value} {o.shape.value} {QUADRANT_NAMES[o.quadrant]}" for o in scene.objects)


def ask_question(scene: Scene, rng: np.random.Generator) -> Tuple[str, int]:
    """A question about the scene and the index of its answer in ``ANSWERS``."""
    kind = int(rng.integers(5))
    if kind == 0:
        return "how many shapes", ANSWERS.index(NUMBER_WORDS[scene.count])
    if kind == 1:
        color = COLORS[int(rng.integers(len(COLORS)))]
        return f"how many {color.value} shapes", ANSWERS.index(NUMBER_WORDS[scene.count_color(color)])
    if kind in (2, 3):
        obj = scene.objects[int(rng.integers(scene.count))]
        where = QUADRANT_NAMES[obj.quadrant]
        if kind == 2:
            return f"what color is the shape {where}", ANSWERS.index(obj.color.value)
        return f"what shape is {where}", ANSWERS.index(obj.shape.value)
    if rng.random() < 0.5:
        obj = scene.objects[int(rng.integers(scene.count))]
        shape, color = obj.shape, obj.color
    else:
        shape, color = SHAPES[int(rng.integers(len(SHAPES)))], COLORS[int(rng.integers(len(COLORS)))]
    answer = "yes" if scene.has(shape, color) else "no"
    return f"is there a {color.value} {shape.value}", ANSWERS.index(answer)


def make_statement(left: Scene, right: Scene, rng: np.random.Generator) -> Tuple[str, bool]:
    """A statement about an image pair and whether it holds."""
    kind = int(rng.integers(5))
    if kind == 0:
        return "left image has more shapes", left.count > right.count
    if kind == 1:
        return "right image has more shapes", right.count > left.count
    if kind == 2:
        return "the images have the same number of shapes", left.count == right.count
    color = COLORS[int(rng.integers(len(COLORS)))]
    if kind == 3:
        return f"both images contain a {color.value} shape", left.count_color(color) > 0 and right.count_color(color) > 0
    shape = SHAPES[int(rng.integers(len(SHAPES)))]
    return f"left image contains a {color.value} {shape.value}", left.has(shape, color)


def generate_example(seed: int, task: Union[str, DataTask], index: int, image_size: int = 32) -> SyntheticExample:
    """The ``index``-th example of ``task`` under ``seed``."""
    task = parse_task(task)
    rng = example_rng(seed, task, index)

    if task == DataTask.TEXTS:
        scene = sample_scene(rng)
        return SyntheticExample(task=task, index=index, text=describe(scene), scenes=(scene,))

    if task == DataTask.IMAGES:
        scene = sample_scene(rng)
        return SyntheticExample(task=task, index=index, images=(render_scene(scene, image_size, rng),), scenes=(scene,))

    if task == DataTask.PAIRS:
        scene = sample_scene(rng)
        image = render_scene(scene, image_size, rng)
        return SyntheticExample(task=task, index=index, images=(image,), text=describe(scene), scenes=(scene,))

    if task == DataTask.VQA:
        scene = sample_scene(rng)
        image = render_scene(scene, image_size, rng)
        question, answer = ask_question(scene, rng)
        return SyntheticExample(task=task, index=index, images=(image,), text=question, label=answer, scenes=(scene,))

    if task == DataTask.NLVR:
        left, right = sample_scene(rng), sample_scene(rng)
        images = (render_scene(left, image_size, rng), render_scene(right, image_size, rng))
        statement, truth = make_statement(left, right, rng)
        return SyntheticExample(task=task, index=index, images=images, text=statement, label=int(truth), scenes=(left, right))

    if task == DataTask.RETRIEVAL:
        space = scene_space()
        scene = space[int(_retrieval_order(seed)[index % len(space)])]
        image = render_scene(scene, image_size, rng)
        return SyntheticExample(
            task=task, index=index, images=(image,), text=positional_caption(scene), label=index, scenes=(scene,)
        )

    scene = sample_scene(rng, 1, 1)
    image = render_scene(scene, image_size, rng)
    return SyntheticExample(task=task, index=index, images=(image,), label=scene.objects[0].class_index, scenes=(scene,))


def gen_synthetic(
    seed: int, n: int, task: Union[str, DataTask], image_size: int = 32, start: int = 0
) -> List[SyntheticExample]:
    """Examples ``start .. start+n-1`` of ``task``."""
    task = parse_task(task)
    if n < 0:
        raise UsageError(f"dataset size must be non-negative, got {n}")
    return [generate_example(seed, task, i, image_size) for i in range(start, start + n)]


def noise_image(rng: np.random.Generator, image_size: int = 32) -> RawImage:
    """Uniform noise image for the cross-modal probe."""
    return RawImage(pixels=rng.random((image_size, image_size, 3)).astype(np.float32))
