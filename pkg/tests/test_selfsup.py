import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tttlab.errors import InputError, ShapeError
from tttlab.selfsup import (
    NUM_ROTATIONS, all_rotations, augment, augment_batch, make_test_batch, random_rotations, rotate90, rotate_batch,
)

square_images = st.integers(1, 6).flatmap(
    lambda s: arrays(np.float64, st.tuples(st.integers(1, 3), st.just(s), st.just(s)),
                     elements=st.floats(-10, 10, allow_nan=False))
)


class TestRotate90:
    def test_two_by_two_example(self):
        img = np.array([[[1.0, 2.0], [3.0, 4.0]]])  # [[a, b], [c, d]]
        np.testing.assert_array_equal(rotate90(img, 1)[0], [[2.0, 4.0], [1.0, 3.0]])

    def test_identity(self, rng):
        img = rng.random((3, 5, 5))
        np.testing.assert_array_equal(rotate90(img, 0), img)

    def test_pixel_mapping(self, rng):
        img = rng.random((1, 4, 4))
        out = rotate90(img, 1)
        for r in range(4):
            for c in range(4):
                assert out[0, r, c] == img[0, c, 3 - r]

    @settings(max_examples=50, deadline=None)
    @given(square_images, st.integers(0, 3), st.integers(0, 3))
    def test_group_law(self, img, j, k):
        np.testing.assert_array_equal(rotate90(rotate90(img, j), k), rotate90(img, (j + k) % 4))

    @settings(max_examples=50, deadline=None)
    @given(square_images)
    def test_four_quarter_turns(self, img):
        out = img
        for _ in range(4):
            out = rotate90(out, 1)
        np.testing.assert_array_equal(out, img)
        np.testing.assert_array_equal(rotate90(rotate90(img, 2), 2), img)

    @settings(max_examples=50, deadline=None)
    @given(square_images, st.integers(0, 3))
    def test_pixel_multiset(self, img, k):
        np.testing.assert_array_equal(np.sort(rotate90(img, k), axis=None), np.sort(img, axis=None))

    @pytest.mark.parametrize("k", [-1, 4, 1.5])
    def test_bad_index(self, k):
        with pytest.raises(InputError):
            rotate90(np.zeros((1, 2, 2)), k)

    def test_bad_rank(self):
        with pytest.raises(ShapeError):
            rotate90(np.zeros((2, 2)), 1)

    def test_batch_matches_single(self, rng):
        imgs = rng.random((6, 2, 4, 4))
        ks = np.array([0, 1, 2, 3, 1, 2])
        out = rotate_batch(imgs, ks)
        for i, k in enumerate(ks):
            np.testing.assert_array_equal(out[i], rotate90(imgs[i], k))


class TestAugment:
    def test_zero_pad_without_flip_is_identity(self, rng):
        img = rng.random((3, 8, 8))
        outs = [augment(img, np.random.default_rng(s), pad=0) for s in range(20)]
        assert any(np.array_equal(o, img) for o in outs)
        assert all(np.array_equal(o, img) or np.array_equal(o, img[:, :, ::-1]) for o in outs)

    def test_shape_and_dtype(self, rng):
        img = rng.random((3, 32, 32)).astype(np.float32)
        out = augment(img, rng)
        assert out.shape == img.shape and out.dtype == img.dtype

    def test_crop_is_window_of_padded(self, rng):
        img = rng.random((1, 6, 6))
        padded = np.pad(img, ((0, 0), (2, 2), (2, 2)), mode="reflect")
        out = augment(img, rng, pad=2)
        windows = [padded[:, y:y + 6, x:x + 6] for y in range(5) for x in range(5)]
        assert any(np.array_equal(out, w) or np.array_equal(out, w[:, :, ::-1]) for w in windows)

    def test_values_from_source(self, rng):
        img = rng.random((3, 8, 8))
        assert np.isin(augment(img, rng), img).all()

    def test_batch_draws_differ(self, rng):
        imgs = np.broadcast_to(rng.random((3, 8, 8)), (16, 3, 8, 8))
        out = augment_batch(imgs, rng)
        assert len({o.tobytes() for o in out}) > 1

    def test_non_square(self, rng):
        with pytest.raises(ShapeError):
            augment(np.zeros((1, 4, 6)), rng)


class TestTestBatch:
    @pytest.mark.parametrize("copies", [1, 4, 8])
    def test_structure(self, rng, copies):
        batch = make_test_batch(rng.random((3, 8, 8)), copies, rng)
        assert len(batch) == 4 * copies
        assert batch.images.shape == (4 * copies, 3, 8, 8)
        np.testing.assert_array_equal(np.bincount(batch.rotation_labels), [copies] * 4)

    def test_rows_are_rotations_of_one_copy(self, rng):
        batch = make_test_batch(rng.random((3, 8, 8)), 3, rng)
        for i in range(3):
            base = batch.images[4 * i]
            for k in range(4):
                np.testing.assert_array_equal(batch.images[4 * i + k], rotate90(base, k))

    def test_without_augmentation(self, rng):
        img = rng.random((3, 8, 8))
        batch = make_test_batch(img, 2, rng, augmentation=False)
        np.testing.assert_array_equal(batch.images[4], img)

    def test_deterministic(self):
        img = np.random.default_rng(0).random((3, 8, 8))
        a = make_test_batch(img, 4, np.random.default_rng(7))
        b = make_test_batch(img, 4, np.random.default_rng(7))
        np.testing.assert_array_equal(a.images, b.images)

    def test_zero_copies(self, rng):
        with pytest.raises(InputError):
            make_test_batch(np.zeros((1, 4, 4)), 0, rng)


class TestRotationSets:
    def test_all_rotations_layout(self, rng):
        imgs = rng.random((2, 1, 4, 4))
        batch = all_rotations(imgs)
        assert len(batch) == 8
        np.testing.assert_array_equal(batch.rotation_labels, [0, 1, 2, 3, 0, 1, 2, 3])
        np.testing.assert_array_equal(batch.images[6], rotate90(imgs[1], 2))

    def test_random_rotations_labels_consistent(self, rng):
        imgs = rng.random((50, 1, 4, 4))
        batch = random_rotations(imgs, rng)
        assert set(np.unique(batch.rotation_labels)) <= set(range(NUM_ROTATIONS))
        for i in range(50):
            np.testing.assert_array_equal(batch.images[i], rotate90(imgs[i], batch.rotation_labels[i]))
