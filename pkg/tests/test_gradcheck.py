from __future__ import annotations

import numpy as np
import pytest

from scene_dialog_dmn.errors import ContractError, InputError
from scene_dialog_dmn.gradcheck import (
    SELECTORS,
    BlockResult,
    GradInstance,
    GradcheckReport,
    build_instance,
    check_instance,
    gradcheck,
    relative_error,
)
from scene_dialog_dmn.tensor import Tensor, sum as tensor_sum


def test_affine_is_near_exact():
    report = gradcheck(["affine"], trials=3, tolerance=1e-7)
    assert report.passed, report.to_dict()


@pytest.mark.parametrize("selector", [s for s in SELECTORS if s != "pipeline"])
def test_each_block_passes_on_every_coordinate(selector):
    report = gradcheck([selector], trials=2, tolerance=1e-5, seed=11)
    assert report.passed, report.to_dict()
    instance = build_instance(selector, seed=11)
    sizes = {f"{selector}[11].{name}": tensor.size for name, tensor in instance.blocks}
    for block in report.blocks:
        if block.name in sizes:
            assert block.checked == sizes[block.name]


def test_pipeline_sampled_coordinates():
    report = gradcheck(["pipeline"], trials=1, tolerance=1e-5, seed=0, max_coords=8)
    assert report.passed, report.to_dict()
    assert all(block.checked <= 8 for block in report.blocks)


@pytest.mark.slow
def test_full_pipeline_over_five_seeds():
    report = gradcheck(["pipeline"], trials=5, tolerance=1e-5, seed=0)
    assert report.passed, report.to_dict()
    assert report.max_rel_error < 1e-5
    assert any(block.name.startswith("pipeline[4].decoder") for block in report.blocks)
    gate = next(block for block in report.blocks if block.name == "pipeline[0].visual.dmn.gate.hidden_map.W")
    assert gate.checked == 128


def test_zero_parameters_flag_boundary_blocks():
    report = gradcheck(["dmn"], trials=1, tolerance=1e-5, zero_params=True)
    assert report.passed
    assert report.boundary_blocks


def test_wrong_gradient_is_caught():
    x = Tensor(np.array([0.5, -1.0, 2.0]))
    # the detached factor hides half of the true gradient 2x
    instance = GradInstance(lambda: tensor_sum(x.detach() * x), [("x", x)])
    (result,) = check_instance(instance, rng=np.random.default_rng(0))
    assert result.max_rel_error == pytest.approx(0.5, abs=1e-6)
    assert not result.passed(1e-5)
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0


def test_report_summary():
    report = GradcheckReport(
        tolerance=1e-5,
        blocks=[BlockResult("a", 1e-7, 4), BlockResult("b", 0.3, 4, boundary=True)],
    )
    assert report.passed
    assert report.max_rel_error == 1e-7
    assert report.to_dict()["boundary_blocks"] == ["b"]
    failing = GradcheckReport(tolerance=1e-5, blocks=[BlockResult("a", 2e-5, 4)])
    assert not failing.passed


def test_non_positive_tolerance():
    with pytest.raises(ContractError):
        gradcheck(["affine"], tolerance=0.0)


def test_unknown_selector():
    with pytest.raises(InputError):
        build_instance("transformer", seed=0)


def test_relative_error_is_per_coordinate():
    # a small coordinate that is badly wrong is not hidden by a large neighbour
    analytic = np.array([10.0, 0.02])
    numeric = np.array([10.0, 0.01])
    assert relative_error(analytic, numeric) == pytest.approx(0.5)
    # both below the floor: compared on an absolute scale
    assert relative_error(np.array([2e-9]), np.array([1e-9])) == pytest.approx(1e-6)


def test_fresh_gate_scorer_still_gets_gradients():
    instance = build_instance("dmn", seed=3)
    blocks = dict(instance.blocks)
    assert np.any(blocks["dmn.gate.score.W"].data)
