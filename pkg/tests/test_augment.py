import numpy as np
import pytest

from replaykit import imaging
from replaykit.augment import AugmentationSpec, NotAnImage, augment, augment_batch, augment_image
from replaykit.streams import TaggedExample

FLIP_ALWAYS = AugmentationSpec(("horizontal_flip",), flip_p=1.0)


def image(seed=0, h=6, w=5, c=1):
    return np.random.default_rng(seed).random((h, w, c))


def test_double_hflip_is_identity():
    img = image()
    rng = np.random.default_rng(0)
    twice = augment_image(augment_image(img, FLIP_ALWAYS, rng), FLIP_ALWAYS, rng)
    np.testing.assert_array_equal(twice, img)


def test_rotation_by_zero_is_identity():
    img = image(1, 8, 8, 3)
    out = augment_image(img, AugmentationSpec(("rotation",)), np.random.default_rng(0), angle=0.0)
    np.testing.assert_allclose(out, img, atol=1e-9)


def test_hflip_two_by_two():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    img = np.array([[a, b], [c, d]])[:, :, None]
    out = augment_image(img, FLIP_ALWAYS, np.random.default_rng(0))
    np.testing.assert_array_equal(out[:, :, 0], [[b, a], [d, c]])


def test_vflip_and_rotate_180_agree():
    img = image(2, 5, 5)
    flipped = imaging.vflip(imaging.hflip(img))
    np.testing.assert_allclose(imaging.rotate(img, 180.0), flipped, atol=1e-9)


def test_full_crop_is_identity():
    img = image(3)
    np.testing.assert_allclose(imaging.crop_resize(img, 0.0, 0.0, 6.0, 5.0), img, atol=1e-12)


@pytest.mark.parametrize("transforms", [("horizontal_flip",), ("vertical_flip",), ("resize_crop",), ("rotation",),
                                        ("horizontal_flip", "vertical_flip", "resize_crop", "rotation")])
def test_label_task_shape_preserved(transforms):
    spec = AugmentationSpec(transforms)
    rng = np.random.default_rng(4)
    for k in range(20):
        ex = TaggedExample(image(k, 7, 9, 2), label=k % 3, task_id=k % 2, sample_id=k)
        out = augment(ex, spec, rng)
        assert out.features.shape == ex.features.shape
        assert (out.label, out.task_id, out.sample_id) == (ex.label, ex.task_id, ex.sample_id)
        assert np.all(np.isfinite(out.features))


def test_augmentation_is_seeded():
    spec = AugmentationSpec(("resize_crop", "rotation"))
    x = np.stack([image(k) for k in range(4)])
    a = augment_batch(x, spec, np.random.default_rng(9))
    b = augment_batch(x, spec, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, x)


def test_disabled_spec_is_passthrough():
    x = np.zeros((2, 5))
    assert augment_batch(x, AugmentationSpec(), np.random.default_rng(0)) is x


def test_flat_features_rejected():
    ex = TaggedExample(np.zeros(16), 0, 0, 0)
    with pytest.raises(NotAnImage):
        augment(ex, FLIP_ALWAYS, np.random.default_rng(0))
    with pytest.raises(NotAnImage):
        augment_batch(np.zeros((2, 16)), FLIP_ALWAYS, np.random.default_rng(0))


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentationSpec(("shear",))
    with pytest.raises(ValueError):
        AugmentationSpec(apply_to="stream")
    with pytest.raises(ValueError):
        AugmentationSpec(crop_scale=(0.0, 1.0))
    spec = AugmentationSpec()
    assert (spec.flip_p, spec.crop_scale, spec.max_rotation, spec.apply_to) == (0.5, (0.6, 1.0), 15.0, "buffer")
