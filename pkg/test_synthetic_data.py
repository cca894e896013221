#!/usr/bin/env python3
"""
Tests for the synthetic shape datasets, the scene reader used as their
labeling oracle, and the process-pool generation service.
"""

import numpy as np
import pytest

from core.errors import UsageError
from core.workflow_executor import MIN_CHUNK, DataGenerationService
from pipeline.images import Color, Scene, SceneObject, ShapeKind, read_scene, render_scene
from pipeline.synthetic import ANSWERS, NUM_CLASSES, DataTask, describe, gen_synthetic, generate_example, parse_task


def same_examples(a, b) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if (x.index, x.text, x.label, x.scenes) != (y.index, y.text, y.label, y.scenes):
            return False
        if len(x.images) != len(y.images):
            return False
        if any(not np.array_equal(i.pixels, j.pixels) for i, j in zip(x.images, y.images)):
            return False
    return True


@pytest.mark.parametrize("task", list(DataTask))
def test_same_seed_same_dataset(task):
    assert same_examples(gen_synthetic(7, 6, task), gen_synthetic(7, 6, task))


def test_different_seed_different_dataset():
    a, b = gen_synthetic(7, 8, DataTask.PAIRS), gen_synthetic(8, 8, DataTask.PAIRS)
    assert [e.text for e in a] != [e.text for e in b]


def test_examples_do_not_depend_on_range():
    whole = gen_synthetic(3, 10, DataTask.VQA)
    tail = gen_synthetic(3, 4, DataTask.VQA, start=6)
    assert same_examples(whole[6:], tail)
    assert same_examples([generate_example(3, "vqa", 8)], whole[8:9])


def test_imgcls_covers_nine_classes():
    labels = {e.label for e in gen_synthetic(0, 300, DataTask.IMGCLS)}
    assert NUM_CLASSES == 9
    assert labels == set(range(9))


def test_pixels_are_binary():
    for e in gen_synthetic(1, 10, DataTask.PAIRS):
        assert set(np.unique(e.images[0].pixels)) <= {0.0, 1.0}


def test_read_scene_recovers_rendered_scene():
    rng = np.random.default_rng(0)
    for e in gen_synthetic(2, 60, DataTask.PAIRS):
        assert read_scene(e.images[0]) == e.scenes[0]
    scene = Scene(
        objects=(
            SceneObject(shape=ShapeKind.TRIANGLE, color=Color.BLUE, quadrant=3),
            SceneObject(shape=ShapeKind.CIRCLE, color=Color.RED, quadrant=0),
        )
    )
    assert read_scene(render_scene(scene, 32, rng)) == scene


def test_nlvr_labels_match_pixel_counts():
    for e in gen_synthetic(4, 80, DataTask.NLVR):
        left, right = (read_scene(img) for img in e.images)
        if e.text == "left image has more shapes":
            assert e.label == int(left.count > right.count)
        elif e.text == "right image has more shapes":
            assert e.label == int(right.count > left.count)
        elif e.text == "the images have the same number of shapes":
            assert e.label == int(left.count == right.count)


def test_vqa_counting_answers_match_pixels():
    for e in gen_synthetic(5, 80, DataTask.VQA):
        if e.text == "how many shapes":
            assert ANSWERS[e.label] == ("zero", "one", "two", "three")[read_scene(e.images[0]).count]
        assert 0 <= e.label < len(ANSWERS)


def test_pairs_caption_names_the_image():
    for e in gen_synthetic(6, 10, DataTask.PAIRS):
        assert e.text == describe(read_scene(e.images[0]))


def test_retrieval_captions_are_distinct():
    captions = [e.text for e in gen_synthetic(0, 64, DataTask.RETRIEVAL)]
    assert len(set(captions)) == 64


def test_texts_have_no_images():
    assert all(e.images == () and e.text for e in gen_synthetic(0, 5, DataTask.TEXTS))


def test_unknown_task_and_negative_size():
    with pytest.raises(UsageError):
        parse_task("captions")
    with pytest.raises(UsageError):
        gen_synthetic(0, -1, DataTask.PAIRS)


def test_service_chunks_cover_range_in_order():
    service = DataGenerationService(max_workers=3)
    chunks = service.chunks(3 * MIN_CHUNK + 5, start=10)
    assert chunks[0][0] == 10
    assert sum(c for _, c in chunks) == 3 * MIN_CHUNK + 5
    for (s1, c1), (s2, _) in zip(chunks, chunks[1:]):
        assert s1 + c1 == s2
    assert service.chunks(10) == [(0, 10)]


@pytest.mark.slow
def test_pool_generation_matches_serial():
    n = 2 * MIN_CHUNK
    with DataGenerationService(max_workers=2) as service:
        pooled = service.generate(9, n, DataTask.NLVR, 32)
        assert service.get_status()["started"]
    assert same_examples(pooled, gen_synthetic(9, n, DataTask.NLVR, 32))


def test_small_requests_stay_serial():
    with DataGenerationService(max_workers=4) as service:
        examples = service.generate(9, 5, "pairs")
        assert not service.get_status()["started"]
    assert same_examples(examples, gen_synthetic(9, 5, DataTask.PAIRS))
