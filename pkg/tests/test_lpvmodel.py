import numpy as np
import pytest
from conftest import lti_affine_model, max_fd_violation
from hypothesis import given, settings
from hypothesis import strategies as st

from lpvss import lpvmodel
from lpvss.autodiff import Tape
from lpvss.errors import CorruptFile, FormatVersionMismatch, NonFiniteState, ShapeMismatch
from lpvss.lpvmodel import LpvLfrModel, LpvSsModel

SMALL_MLP = {"kind": "mlp", "hidden": [6], "mode": "per-component"}


def signals(seed, T=30, n_u=1, n_p=3, B=None):
    rng = np.random.default_rng(seed)
    lead = (T,) if B is None else (B, T)
    return rng.uniform(-1, 1, lead + (n_u,)), rng.uniform(-1, 1, lead + (n_p,))


def test_unvec_is_column_major_inverse_of_vec():
    tape = Tape()
    M = np.arange(6.0).reshape(2, 3)
    flat = tape.const(M.flatten(order="F")[:, None])
    np.testing.assert_array_equal(lpvmodel.unvec(flat, 2, 3).value, M)
    np.testing.assert_array_equal(lpvmodel.vec(M)[:, 0], M.flatten(order="F"))


def test_lti_matches_convolution_oracle():
    rng = np.random.default_rng(0)
    A = np.array([[0.5, 0.1], [-0.2, 0.3]])
    B, C, D = rng.standard_normal((2, 1)), rng.standard_normal((1, 2)), np.array([[0.7]])
    m = lti_affine_model(A, B, C, D)
    u, p = signals(1, T=40)
    y, _ = m.simulate(np.zeros(2), u, p)
    h = [D[0, 0]] + [(C @ np.linalg.matrix_power(A, k - 1) @ B)[0, 0] for k in range(1, 40)]
    ref = np.convolve(u[:, 0], h)[:40]
    np.testing.assert_allclose(y[:, 0], ref, atol=1e-12)


@pytest.mark.parametrize("variant", ["contracting", "lipschitz", "affine"])
def test_superposition_for_fixed_schedule(variant):
    m = LpvSsModel(variant, 3, 1, 1, 3, coeff=SMALL_MLP, seed=2)
    # zero the output layer of the bias network so the model is linear in (x0, u)
    m.params["phi.b.W1"][:] = 0.0
    m.params["phi.b.b1"][:] = 0.0
    rng = np.random.default_rng(3)
    u1, p = signals(4)
    u2, _ = signals(5)
    x1, x2 = rng.standard_normal(3), rng.standard_normal(3)
    a, b = 0.7, -1.3
    y1, _ = m.simulate(x1, u1, p)
    y2, _ = m.simulate(x2, u2, p)
    y12, _ = m.simulate(a * x1 + b * x2, a * u1 + b * u2, p)
    np.testing.assert_allclose(y12, a * y1 + b * y2, atol=1e-10)


@pytest.mark.parametrize("variant", ["contracting", "lipschitz"])
def test_bias_does_not_change_increments(variant):
    """Output differences for a shared schedule do not depend on b(p)."""
    m = LpvSsModel(variant, 3, 1, 1, 3, coeff=SMALL_MLP, seed=4)
    u1, p = signals(6)
    u2, _ = signals(7)
    x1, x2 = np.ones(3), -np.ones(3)
    d0 = m.simulate(x1, u1, p)[0] - m.simulate(x2, u2, p)[0]
    m.params["phi.b.b1"] += 5.0
    d1 = m.simulate(x1, u1, p)[0] - m.simulate(x2, u2, p)[0]
    np.testing.assert_allclose(d1, d0, atol=1e-10)


def test_batch_and_single_simulation_agree():
    m = LpvSsModel("lipschitz", 3, 1, 1, 3, coeff=SMALL_MLP, seed=5)
    u, p = signals(8, B=4)
    x0 = np.random.default_rng(0).standard_normal((4, 3))
    yb, xb = m.simulate(x0, u, p)
    assert yb.shape == (4, 30, 1) and xb.shape == (4, 31, 3)
    for i in range(4):
        np.testing.assert_allclose(m.simulate(x0[i], u[i], p[i])[0], yb[i], atol=1e-13)


@pytest.mark.parametrize("make", [
    lambda: LpvSsModel("contracting", 2, 1, 1, 3, coeff=SMALL_MLP, seed=1),
    lambda: LpvSsModel("lipschitz", 2, 1, 1, 3, coeff=SMALL_MLP, seed=1),
    lambda: LpvLfrModel(2, 1, 1, 3, n_w=4, seed=1),
], ids=["contracting", "lipschitz", "lfr"])
def test_rollout_op_matches_numeric_simulation(make):
    m = make()
    u, p = signals(9, B=2, T=12)
    x0 = np.random.default_rng(1).uniform(-1, 1, (2, m.n_x))
    tape = Tape()
    y, xs = m.rollout_op(m.leaves(tape), tape.const(x0[..., None]), tape.const(u[..., None]),
                         tape.const(p[..., None]))
    y_ref, x_ref = m.simulate(x0, u, p)
    np.testing.assert_allclose(y.value[..., 0], y_ref, atol=1e-12)
    np.testing.assert_allclose(xs.value[..., 0], x_ref, atol=1e-12)


@pytest.mark.parametrize("variant", ["contracting", "lipschitz"])
def test_rollout_gradient_200_steps(variant):
    """Gradient of a 200-step simulation loss against central differences."""
    m = LpvSsModel(variant, 2, 1, 1, 3, coeff={"kind": "affine"}, seed=3)
    u, p = signals(10, B=1, T=200)
    x0 = np.array([[0.3, -0.2]])
    target = np.sin(np.arange(200) / 7.0)[None, :, None]
    names = list(m.params)

    def fn(tape, leaves):
        y, _ = m.rollout_op(leaves, tape.const(x0[..., None]), tape.const(u[..., None]),
                            tape.const(p[..., None]))
        r = y - tape.const(target[..., None])
        return (r * r).sum()

    params = {k: m.params[k] for k in names}
    assert max_fd_violation(fn, params, rtol=1e-4) <= 1.0


def test_lfr_gradient_with_relu():
    m = LpvLfrModel(2, 1, 1, 3, n_w=3, seed=0)
    u, p = signals(11, B=1, T=20)
    x0 = np.zeros((1, 2))

    def fn(tape, leaves):
        y, _ = m.rollout_op(leaves, tape.const(x0[..., None]), tape.const(u[..., None]),
                            tape.const(p[..., None]))
        return (y * y).sum()

    assert max_fd_violation(fn, dict(m.params), rtol=1e-4) <= 1.0


def test_blow_up_raises_with_prefix():
    m = lti_affine_model(1.5 * np.eye(1), np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1)))
    u, p = signals(0, T=400)
    with pytest.raises(NonFiniteState) as exc:
        m.simulate(np.ones(1), u, p)
    assert exc.value.step < 400
    assert exc.value.prefix.shape == (exc.value.step, 1)
    assert np.all(np.isfinite(exc.value.prefix))


def test_shape_mismatch_on_schedule_length():
    m = LpvSsModel("lipschitz", 2, 1, 1, 3, coeff=SMALL_MLP)
    with pytest.raises(ShapeMismatch):
        m.simulate(np.zeros(2), np.zeros((10, 1)), np.zeros((9, 3)))


def test_default_coefficient_map_is_two_hidden_layers_of_50():
    m = LpvSsModel("lipschitz", 3, 1, 1, 3)
    assert m.params["phi.X.W0"].shape == (50, 3)
    assert m.params["phi.X.W1"].shape == (50, 50)
    assert m.params["phi.X.W2"].shape == (16, 50)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(["contracting", "lipschitz", "affine", "lfr"]), st.integers(0, 1000))
def test_save_load_is_byte_identical(tmp_path_factory, variant, seed):
    d = tmp_path_factory.mktemp("m")
    if variant == "lfr":
        m = LpvLfrModel(3, 1, 1, 3, n_w=5, seed=seed)
    else:
        m = LpvSsModel(variant, 3, 1, 2, 3, coeff=SMALL_MLP, gamma=2.5, seed=seed)
    lpvmodel.save_model(m, d / "a.lpvss")
    m2 = lpvmodel.load_model(d / "a.lpvss")
    lpvmodel.save_model(m2, d / "b.lpvss")
    assert (d / "a.lpvss").read_bytes() == (d / "b.lpvss").read_bytes()
    for k in m.params:
        np.testing.assert_array_equal(m.params[k], m2.params[k])


def test_truncated_or_edited_file_is_rejected():
    text = lpvmodel.dumps_model(LpvSsModel("lipschitz", 2, 1, 1, 3, coeff=SMALL_MLP))
    with pytest.raises(CorruptFile):
        lpvmodel.loads_model(text[: len(text) // 2])
    with pytest.raises(CorruptFile):
        lpvmodel.loads_model(text.replace('"gamma": 1.0', '"gamma": 9.0'))
    with pytest.raises(CorruptFile):
        lpvmodel.loads_model("garbage")
    with pytest.raises(FormatVersionMismatch):
        lpvmodel.loads_model(text.replace("format_version = 1", "format_version = 2"))
