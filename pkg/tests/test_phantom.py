import dataclasses

import numpy as np
import pytest

from cycleseg.phantom import (
    STYLE_BRIGHT_CORE,
    STYLE_HALO,
    PackingError,
    PhantomConfig,
    make_phantom,
)

from conftest import label_is_single_component

SMALL = PhantomConfig(shape=(32, 48, 48), n_instances=10, radius_range=(3.0, 6.0), seed=7)


def test_deterministic_in_seed():
    l1, a1, b1 = make_phantom(SMALL)
    l2, a2, b2 = make_phantom(SMALL)
    np.testing.assert_array_equal(l1, l2)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(b1, b2)


def test_empty_phantom():
    cfg = dataclasses.replace(SMALL, n_instances=0)
    labels, a, b = make_phantom(cfg)
    assert labels.max() == 0
    assert a.shape == cfg.shape and b.shape == cfg.shape
    assert 0.0 <= a.min() and a.max() <= 1.0


def test_instance_count_and_connectivity():
    labels, _, _ = make_phantom(SMALL)
    ids = np.unique(labels)
    ids = ids[ids != 0]
    assert len(ids) == 10
    assert list(ids) == list(range(1, 11))
    for i in ids:
        assert label_is_single_component(labels, i), f"instance {i} disconnected"


def test_nontouching_instances_are_separated():
    labels, _, _ = make_phantom(SMALL)
    # no two different ids may share a face
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(0, -1)
        b[axis] = slice(1, None)
        la, lb = labels[tuple(a)], labels[tuple(b)]
        contact = (la > 0) & (lb > 0) & (la != lb)
        assert not contact.any()


def test_labels_independent_of_style():
    alt = dataclasses.replace(SMALL, style_a=STYLE_HALO, style_b=STYLE_BRIGHT_CORE)
    l1, a1, b1 = make_phantom(SMALL)
    l2, a2, b2 = make_phantom(alt)
    np.testing.assert_array_equal(l1, l2)
    # the two styles must actually look different
    assert abs(a1.mean() - b1.mean()) > 0.05


def test_touch_fraction_approximate():
    cfg = dataclasses.replace(
        SMALL,
        shape=(48, 64, 64),
        n_instances=20,
        allow_touching=True,
        touch_fraction=0.4,
        seed=3,
    )
    labels, _, _ = make_phantom(cfg)
    touching = set()
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(0, -1)
        b[axis] = slice(1, None)
        la, lb = labels[tuple(a)], labels[tuple(b)]
        m = (la > 0) & (lb > 0) & (la != lb)
        touching |= set(np.unique(la[m]).tolist()) | set(np.unique(lb[m]).tolist())
    frac = len(touching) / 20
    assert 0.2 <= frac <= 0.6, f"touching fraction {frac}"


def test_infeasible_packing_raises():
    cfg = PhantomConfig(
        shape=(20, 20, 20),
        n_instances=200,
        radius_range=(4.0, 6.0),
        seed=0,
        max_attempts_per_instance=20,
    )
    with pytest.raises(PackingError):
        make_phantom(cfg)


def test_touch_fraction_requires_allow_touching():
    with pytest.raises(ValueError):
        PhantomConfig(allow_touching=False, touch_fraction=0.5)


def test_radii_must_fit():
    with pytest.raises(ValueError):
        PhantomConfig(shape=(16, 64, 64), radius_range=(8.0, 10.0))
