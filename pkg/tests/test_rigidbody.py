import re
from importlib import resources

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_difference, homogeneous_fk, jacobi_singular_values
from pdik import bundled_model, forward_kinematics, load_model, point_jacobian
from pdik.rigidbody import (
    BASE,
    LimitError,
    ModelError,
    TopologyError,
    attached_points,
    frame_positions,
    min_singular_value,
)

PLANAR_TEXT = """
# hand-written planar arm
joint { name = j1, parent = base, axis = [0, 0, 1], origin_xyz = [0, 0, 0], origin_rpy = [0, 0, 0], limits = [-3, 3], vel_limit = 2 }
joint { name = j2, parent = j1, axis = [0, 0, 1], origin_xyz = [0.3, 0, 0], origin_rpy = [0, 0, 0], limits = [-3, 3], vel_limit = 2 }
frame { name = end, parent_joint = j2, offset_xyz = [0.3, 0, 0] }
frame { name = fixed, parent_joint = base, offset_xyz = [0.1, 0.2, 0.3] }
"""


def _model_rows(name):
    """(parent, axis, xyz, rpy) per joint read straight from the model file text."""
    text = resources.files("pdik").joinpath("models", f"{name}.model").read_text()
    names, rows = [], []
    for body in re.findall(r"joint\s*\{([^}]*)\}", text):
        fields = dict(re.findall(r"(\w+)\s*=\s*(\[[^\]]*\]|[^,\s]+)", body))
        vec = lambda key: np.array(eval(fields[key]), dtype=float) if key in fields else np.zeros(3)  # noqa: E731
        parent = -1 if fields["parent"] == "base" else names.index(fields["parent"])
        names.append(fields["name"])
        rows.append((parent, vec("axis"), vec("origin_xyz"), vec("origin_rpy")))
    return rows


# --------------------------------------------------------------------------
# load_model


def test_load_handwritten_planar():
    m = load_model(PLANAR_TEXT)
    assert m.dof == 2
    assert m.joint_names == ["j1", "j2"]
    assert set(m.frames) == {"end", "fixed"}


def test_parent_equal_to_own_index_is_topology_error():
    text = PLANAR_TEXT.replace("parent = j1", "parent = j2")
    with pytest.raises(TopologyError):
        load_model(text)


def test_numeric_parent_index_equal_to_self_rejected():
    text = PLANAR_TEXT.replace("parent = j1", "parent = 1")
    with pytest.raises(TopologyError):
        load_model(text)


def test_seven_joint_limits_bit_exact():
    m = bundled_model("arm7")
    assert m.dof == 7
    assert np.all(m.lower == -2.8) and np.all(m.upper == 2.8)


def test_limit_error_and_parse_error_location():
    with pytest.raises(LimitError):
        load_model(PLANAR_TEXT.replace("limits = [-3, 3], vel_limit = 2 }\njoint", "limits = [3, -3], vel_limit = 2 }\njoint", 1))
    with pytest.raises(ModelError) as err:
        load_model(PLANAR_TEXT.replace("axis = [0, 0, 1], origin_xyz = [0.3", "axis = [0, zero, 1], origin_xyz = [0.3"))
    assert "line" in str(err.value)


def test_prismatic_rejected():
    with pytest.raises(ModelError):
        load_model(PLANAR_TEXT.replace("name = j1,", "name = j1, type = prismatic,"))


def test_non_unit_axis_rejected():
    with pytest.raises(ModelError):
        load_model(PLANAR_TEXT.replace("axis = [0, 0, 1], origin_xyz = [0, 0, 0]", "axis = [0, 0, 2], origin_xyz = [0, 0, 0]"))


# --------------------------------------------------------------------------
# forward kinematics


def test_planar_zero_configuration(planar):
    assert np.allclose(forward_kinematics(planar, [0, 0])["end"].translation, [0.6, 0, 0], atol=1e-15)


def test_planar_quarter_turn(planar):
    assert np.allclose(forward_kinematics(planar, [np.pi / 2, 0])["end"].translation, [0, 0.6, 0], atol=1e-15)


@pytest.mark.parametrize("name", ["arm7", "desk_dual_arm", "planar_2r"])
def test_fk_matches_homogeneous_chain(name, rng):
    m = bundled_model(name)
    rows = _model_rows(name)
    for _ in range(10):
        q = rng.uniform(m.lower, m.upper)
        poses = forward_kinematics(m, q)
        for fname, frame in m.frames.items():
            T = homogeneous_fk(rows, q, frame.parent, frame.offset)
            assert np.allclose(poses[fname].translation, T[:3, 3], atol=1e-12)


def test_fk_dimension_mismatch(planar):
    with pytest.raises(ValueError):
        forward_kinematics(planar, [0.0, 0.0, 0.0])


def test_fk_sanity_bound(planar):
    with pytest.raises(ValueError):
        forward_kinematics(planar, [2e3, 0.0])


def test_rotations_valid_and_deterministic(desk, rng):
    q = rng.uniform(desk.lower, desk.upper)
    a, b = forward_kinematics(desk, q), forward_kinematics(desk, q)
    for name in a:
        R = a[name].rotation
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(R) - 1) < 1e-9
        assert np.array_equal(R, b[name].rotation) and np.array_equal(a[name].translation, b[name].translation)


# --------------------------------------------------------------------------
# point Jacobian


def test_planar_jacobian_at_zero(planar):
    J = point_jacobian(planar, [0, 0], "end")
    assert np.allclose(J[:2], [[0, 0], [0.6, 0.3]], atol=1e-15)
    assert np.all(J[2] == 0)


def test_base_frame_jacobian_is_zero():
    m = load_model(PLANAR_TEXT)
    assert np.array_equal(point_jacobian(m, [0.3, -0.2], "fixed"), np.zeros((3, 2)))


def test_unknown_frame(planar):
    with pytest.raises(KeyError):
        point_jacobian(planar, [0, 0], "nope")


@pytest.mark.parametrize("name", ["planar_2r", "arm7", "desk_dual_arm"])
def test_jacobian_finite_difference_and_locality(name, rng):
    m = bundled_model(name)
    for _ in range(5):
        q = rng.uniform(m.lower + 1e-3, m.upper - 1e-3)
        for fname, frame in m.frames.items():
            J = point_jacobian(m, q, fname)
            fd = central_difference(lambda x: forward_kinematics(m, x)[fname].translation, q)
            assert np.abs(J - fd).max() < 1e-6
            off_chain = ~m.chain(frame.parent)
            assert np.all(J[:, off_chain] == 0.0)


@given(arrays(float, 7, elements=st.floats(-2.79, 2.79)))
def test_jacobian_fd_property_arm7(q):
    m = bundled_model("arm7")
    J = point_jacobian(m, q, "hand")
    fd = central_difference(lambda x: forward_kinematics(m, x)["hand"].translation, q)
    assert np.abs(J - fd).max() < 1e-6


def test_batched_points_match_single_frame_calls(desk, rng):
    q = rng.uniform(desk.lower, desk.upper)
    names = list(desk.frames)
    pos, jac = attached_points(desk, q, [(desk.frame(f).parent, desk.frame(f).offset) for f in names])
    fk = forward_kinematics(desk, q)
    for i, f in enumerate(names):
        assert np.allclose(pos[i], fk[f].translation, atol=1e-13)
        assert np.allclose(jac[i], point_jacobian(desk, q, f), atol=1e-13)
    assert np.allclose(frame_positions(desk, q, names), pos, atol=1e-13)
    assert BASE == -1


# --------------------------------------------------------------------------
# min singular value


def test_min_singular_value_examples(rng):
    assert min_singular_value(np.array([[1.0, 0], [0, 1], [0, 0]])) == pytest.approx(1.0, abs=1e-15)
    assert min_singular_value(np.zeros((3, 4))) == 0.0
    for _ in range(20):
        J = rng.normal(size=(3, 7))
        assert abs(min_singular_value(J) - jacobi_singular_values(J)[0]) < 1e-10
