"""Recognition pipeline tests over a small procedurally built index."""

import time

import numpy as np
import pytest

from cloudtrack.evaluation import make_reference_corpus
from cloudtrack.image import ImageGray8
from cloudtrack.recognizer import ObjectIdAssigner, recognize_frame
from cloudtrack.refindex import build_reference_index
from cloudtrack.synth import generate_sequence, place_row, place_single, static_script


@pytest.fixture(scope="module")
def corpus():
    return make_reference_corpus(12)


@pytest.fixture(scope="module")
def index(corpus):
    return build_reference_index(corpus)


@pytest.fixture(scope="module")
def images(corpus):
    return {ref_id: img for ref_id, _, img in corpus}


class TestRecognizeFrame:
    def test_single_poster_found_with_accurate_corners(self, index, images):
        seq = generate_sequence([place_single(4, images[4])], static_script(1))
        outcome = recognize_frame(index, seq.frames[0])
        assert [r.ref_id for r in outcome.recognized] == [4]
        assert np.abs(outcome.recognized[0].corners - seq.truth[4][0]).max() < 2.0

    def test_noise_frame_rejected(self, index):
        rng = np.random.default_rng(7)
        noise = ImageGray8(rng.integers(0, 256, (360, 640)).astype(np.uint8))
        outcome = recognize_frame(index, noise)
        assert outcome.recognized == []

    def test_two_posters_distinct_refs(self, index, images):
        seq = generate_sequence(place_row([(2, images[2]), (9, images[9])]), static_script(1))
        outcome = recognize_frame(index, seq.frames[0])
        assert sorted(r.ref_id for r in outcome.recognized) == [2, 9]
        ids = [r.object_id for r in outcome.recognized]
        assert len(set(ids)) == 2

    def test_deterministic(self, index, images):
        seq = generate_sequence([place_single(6, images[6])], static_script(1))
        a = recognize_frame(index, seq.frames[0], ids=ObjectIdAssigner())
        b = recognize_frame(index, seq.frames[0], ids=ObjectIdAssigner())
        assert [(r.object_id, r.ref_id) for r in a.recognized] == [
            (r.object_id, r.ref_id) for r in b.recognized
        ]
        for ra, rb in zip(a.recognized, b.recognized):
            assert np.array_equal(ra.corners, rb.corners)

    def test_timings_cover_wall_clock(self, index, images):
        seq = generate_sequence([place_single(3, images[3])], static_script(1))
        t0 = time.perf_counter()
        outcome = recognize_frame(index, seq.frames[0])
        wall_ms = (time.perf_counter() - t0) * 1000.0
        total = sum(outcome.timings.values())
        assert abs(total - wall_ms) / wall_ms < 0.05

    def test_stable_object_ids_across_cycles(self, index, images):
        ids = ObjectIdAssigner()
        seq = generate_sequence([place_single(5, images[5])], static_script(1))
        first = recognize_frame(index, seq.frames[0], ids=ids, cycle_id=0)
        second = recognize_frame(index, seq.frames[0], ids=ids, cycle_id=1)
        assert first.recognized[0].object_id == second.recognized[0].object_id

    def test_empty_frame_empty_outcome(self, index):
        outcome = recognize_frame(index, ImageGray8.constant(640, 360, 128), cycle_id=9)
        assert outcome.recognized == [] and outcome.cycle_id == 9


class TestObjectIdAssigner:
    def test_stable_and_distinct(self):
        ids = ObjectIdAssigner()
        a = ids.object_id(100)
        b = ids.object_id(200)
        assert a != b
        assert ids.object_id(100) == a
