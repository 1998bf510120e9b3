"""The verification battery itself: primitives, loss graphs, detach pins."""

import numpy as np
import pytest

from langdepth import autodiff as ad
from langdepth.gradcheck import check_gradients
from langdepth.verify import (
    DEFAULT_SEEDS,
    check_caption_loss,
    check_image_loss,
    frozen_leaf_names,
    primitive_checks,
    run_full_battery,
    _toy_problem,
)


def test_every_primitive_check_passes():
    checks = primitive_checks(seed=0)
    assert len(checks) >= 20
    for name, report in checks.items():
        assert report.passed, f"{name}: worst={report.worst:.3e}"


def test_primitive_checks_cover_the_conv_variants():
    names = set(primitive_checks(seed=1))
    assert {"conv2d_k1_s1", "conv2d_k3_s1", "conv2d_k3_s2"} <= names


def test_caption_loss_gradients_verify_with_margin():
    report = check_caption_loss(seed=DEFAULT_SEEDS[0])
    assert report.passed
    assert report.worst <= 1e-6  # an order of margin under the tolerance
    assert all(k.startswith(("text.", "decoder.")) for k in report.errors)
    assert any(k.startswith("text.") for k in report.errors)
    assert any(k.startswith("decoder.") for k in report.errors)


def test_image_loss_gradients_verify_and_freeze_the_caption_head():
    report = check_image_loss(seed=DEFAULT_SEEDS[0])
    assert report.passed
    groups = {k.split(".", 1)[0] for k in report.errors}
    assert groups == {"text", "sampler", "decoder"}
    params, *_ = _toy_problem(DEFAULT_SEEDS[0])
    frozen = frozen_leaf_names(params)
    assert frozen and all(report.errors[k] == 0.0 for k in frozen)


def test_full_battery_runs_every_named_check():
    out = run_full_battery(seeds=(5,), h=1e-6)
    assert "caption_loss_seed5" in out and "image_loss_seed5" in out
    assert "conv2d_k3_s2" in out
    assert all(r.passed for r in out.values())


def test_checker_flags_a_genuine_slope_disagreement():
    """relu pinned exactly at its kink: the tape answers one-sided slope 0,
    the central difference measures 1/2, and the check must fail."""
    def fn(leaves):
        return ad.tsum(ad.relu(leaves["x"]))

    report = check_gradients(fn, {"x": np.zeros(3)}, h=1e-6)
    assert not report.passed
    assert report.errors["x"] == pytest.approx(1.0)


def test_toy_problem_is_deterministic_per_seed():
    a = _toy_problem(7)
    b = _toy_problem(7)
    np.testing.assert_array_equal(a[3], b[3])
    for (n1, t1), (n2, t2) in zip(a[0].named().items(), b[0].named().items()):
        assert n1 == n2
        np.testing.assert_array_equal(t1.data, t2.data)
