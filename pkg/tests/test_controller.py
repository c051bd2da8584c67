import numpy as np
import pytest
from scipy.optimize import brentq

from teleosim.controller import (
    SATURATION_GAIN,
    CartesianError,
    ControllerFault,
    ImpedanceConfig,
    cartesian_error,
    damped_pinv,
    damping_matrix,
    impedance_torque,
    nullspace_torque,
    saturated_stiffness,
    task_inertia,
)
from teleosim.dynamics import RobotState, compute_terms, franka_like_7dof
from teleosim.geometry import (
    SpatialAccel,
    Transform,
    Twist,
    quat_from_axis_angle,
    quat_mul,
)


# --- saturation constant -----------------------------------------------------


def test_saturation_gain_oracle():
    # max of x / cosh(x)^2 found independently: coarse scan + derivative root
    xs = np.linspace(0.0, 3.0, 30_001)
    ys = xs / np.cosh(xs) ** 2
    x0 = xs[np.argmax(ys)]
    # stationarity: d/dx [x sech^2 x] = sech^2 x (1 - 2 x tanh x) = 0
    x_star = brentq(lambda x: 1.0 - 2.0 * x * np.tanh(x), x0 - 1e-3, x0 + 1e-3)
    peak = x_star / np.cosh(x_star) ** 2
    assert abs(peak - SATURATION_GAIN) < 1e-14


def test_spring_force_never_exceeds_bound():
    cfg = ImpedanceConfig()
    errs = np.linspace(-2.0, 2.0, 4001)
    bound = SATURATION_GAIN * cfg.f_max[0]
    for e in errs:
        K = saturated_stiffness(np.array([e, 0, 0, 0, 0, 0]), cfg)
        f = K[0, 0] * e
        assert abs(f) <= bound + 1e-12


def test_spring_force_peaks_at_analytic_error():
    # peak force occurs where p = K e / F_max solves p tanh p = 1/2
    cfg = ImpedanceConfig(k_trans=400.0)
    p_star = brentq(lambda x: 1.0 - 2.0 * x * np.tanh(x), 0.1, 2.0)
    e_star = p_star * cfg.f_max[0] / cfg.k_trans
    K = saturated_stiffness(np.array([e_star, 0, 0, 0, 0, 0]), cfg)
    assert abs(K[0, 0] * e_star - SATURATION_GAIN * cfg.f_max[0]) < 1e-9


def test_stiffness_tends_to_nominal_at_small_error():
    cfg = ImpedanceConfig()
    K = saturated_stiffness(np.zeros(6), cfg)
    np.testing.assert_allclose(np.diag(K), cfg.k_nom, atol=1e-12)


def test_force_decays_at_large_error():
    # the sech^2 spring is non-monotone: far past the peak the force falls off
    cfg = ImpedanceConfig()
    K1 = saturated_stiffness(np.array([0.1, 0, 0, 0, 0, 0]), cfg)
    K2 = saturated_stiffness(np.array([1.0, 0, 0, 0, 0, 0]), cfg)
    assert K2[0, 0] * 1.0 < K1[0, 0] * 0.1


def test_rotational_axes_use_torque_scale():
    cfg = ImpedanceConfig()
    e = np.zeros(6)
    e[4] = 3.0
    K = saturated_stiffness(e, cfg)
    tq = K[4, 4] * 3.0
    assert abs(tq) <= SATURATION_GAIN * cfg.tau_max[1] + 1e-12


def test_product_form_switch_changes_argument():
    cfg_a = ImpedanceConfig(dimensionless_saturation=True)
    cfg_b = ImpedanceConfig(dimensionless_saturation=False)
    e = np.array([0.01, 0, 0, 0, 0, 0])
    Ka = saturated_stiffness(e, cfg_a)
    Kb = saturated_stiffness(e, cfg_b)
    assert Ka[0, 0] != Kb[0, 0]


# --- error computation -------------------------------------------------------


def test_cartesian_error_translation():
    T = Transform.from_translation([0.1, 0.2, 0.3])
    T_d = Transform.from_translation([0.4, 0.2, 0.3])
    err = cartesian_error(T_d, T, Twist(), Twist())
    np.testing.assert_allclose(err.e, [0.3, 0, 0, 0, 0, 0], atol=1e-12)


def test_cartesian_error_rotation_world_frame():
    # desired is the current pose rotated by a world-frame rotation about z
    q0 = quat_from_axis_angle([1, 0, 0], 0.7)
    dq = quat_from_axis_angle([0, 0, 1], 0.2)
    T = Transform(q0, np.zeros(3))
    T_d = Transform(quat_mul(dq, q0), np.zeros(3))
    err = cartesian_error(T_d, T, Twist(), Twist())
    np.testing.assert_allclose(err.e[3:], [0, 0, 0.2], atol=1e-9)


def test_cartesian_error_twist_part():
    err = cartesian_error(
        Transform.identity(), Transform.identity(), Twist([1, 0, 0], [0, 0, 2]), Twist([0.5, 0, 0], [0, 0, 0])
    )
    np.testing.assert_allclose(err.edot, [0.5, 0, 0, 0, 0, 2], atol=1e-12)


# --- damping design ----------------------------------------------------------


@pytest.fixture(scope="module")
def terms7():
    model = franka_like_7dof()
    return model, compute_terms(model, model.q_rest, np.zeros(7))


def test_damping_matrix_spd(terms7):
    _, terms = terms7
    cfg = ImpedanceConfig()
    K = saturated_stiffness(np.full(6, 0.02), cfg)
    Lam = task_inertia(terms.M, terms.J)
    D, fallback = damping_matrix(K, Lam, cfg)
    assert not fallback
    np.testing.assert_allclose(D, D.T, atol=1e-10)
    assert np.linalg.eigvalsh(D)[0] >= -1e-10


def test_damping_scales_with_ratio(terms7):
    _, terms = terms7
    K = saturated_stiffness(np.zeros(6), ImpedanceConfig())
    Lam = task_inertia(terms.M, terms.J)
    D1, _ = damping_matrix(K, Lam, ImpedanceConfig(damping_ratio=0.5))
    D2, _ = damping_matrix(K, Lam, ImpedanceConfig(damping_ratio=1.0))
    np.testing.assert_allclose(D2, 2.0 * D1, atol=1e-9)


def test_damping_scalar_case_matches_textbook():
    # 1x1 system: D = 2 zeta sqrt(k m)
    K = np.array([[100.0]])
    Lam = np.array([[4.0]])
    cfg = ImpedanceConfig()
    D, fallback = damping_matrix(K, Lam, cfg)
    assert not fallback
    assert abs(D[0, 0] - 2.0 * np.sqrt(100.0 * 4.0)) < 1e-9


def test_damping_fallback_on_singular_inertia():
    K = np.diag(np.full(6, 400.0))
    Lam = np.zeros((6, 6))
    D, fallback = damping_matrix(K, Lam, ImpedanceConfig())
    assert fallback
    np.testing.assert_allclose(np.diag(D), 2.0 * np.sqrt(np.full(6, 400.0)), atol=1e-12)


def test_task_inertia_oracle(terms7):
    _, terms = terms7
    Lam = task_inertia(terms.M, terms.J)
    A = terms.J @ np.linalg.solve(terms.M, terms.J.T)
    np.testing.assert_allclose(Lam @ A, np.eye(6), atol=1e-6)


# --- pseudoinverse and nullspace ---------------------------------------------


def test_damped_pinv_matches_exact_when_well_conditioned():
    rng = np.random.default_rng(0)
    J = rng.normal(size=(6, 7))
    np.testing.assert_allclose(damped_pinv(J), np.linalg.pinv(J), atol=1e-9)


def test_damped_pinv_bounded_near_singularity():
    J = np.zeros((6, 7))
    J[0, 0] = 1.0
    J[1, 1] = 1e-12  # effectively rank 1
    Jp = damped_pinv(J)
    assert np.all(np.isfinite(Jp))
    assert np.abs(Jp).max() < 1e7


def test_nullspace_torque_orthogonal_to_task(terms7):
    model, terms = terms7
    st = RobotState(q=model.q_rest + 0.3, qdot=np.full(7, 0.1))
    tau_ns = nullspace_torque(st, terms.J, ImpedanceConfig(), model.q_rest)
    # projected torque produces no task-space acceleration through M^-1
    xdd = terms.J @ np.linalg.solve(terms.M, tau_ns)
    # not exactly zero (projector is J^T-orthogonal, not dynamically consistent),
    # but the J-row component of tau must vanish
    np.testing.assert_allclose(damped_pinv(terms.J).T @ tau_ns, np.zeros(6), atol=1e-8)
    assert np.all(np.isfinite(xdd))


def test_nullspace_torque_zero_at_rest(terms7):
    model, terms = terms7
    st = RobotState(q=model.q_rest.copy(), qdot=np.zeros(7))
    np.testing.assert_allclose(
        nullspace_torque(st, terms.J, ImpedanceConfig(), model.q_rest), np.zeros(7), atol=1e-12
    )


# --- full torque -------------------------------------------------------------


def test_impedance_torque_gravity_only_at_zero_error(terms7):
    model, terms = terms7
    st = RobotState(q=model.q_rest.copy(), qdot=np.zeros(7))
    err = CartesianError(np.zeros(6), np.zeros(6))
    tau, info = impedance_torque(st, err, SpatialAccel(), model, ImpedanceConfig(), terms)
    np.testing.assert_allclose(tau, terms.gravity, atol=1e-9)
    assert not info["saturation_active"].any()
    assert not info["damping_fallback"]


def test_impedance_torque_direction(terms7):
    # positive x error must push the tool toward +x: J M^-1 (tau - g) has +x linear part
    model, terms = terms7
    st = RobotState(q=model.q_rest.copy(), qdot=np.zeros(7))
    err = CartesianError(np.array([0.05, 0, 0, 0, 0, 0]), np.zeros(6))
    tau, _ = impedance_torque(st, err, SpatialAccel(), model, ImpedanceConfig(), terms)
    xdd = terms.J @ np.linalg.solve(terms.M, tau - terms.gravity)
    assert xdd[0] > 0


def test_saturation_flag_reported(terms7):
    model, terms = terms7
    st = RobotState(q=model.q_rest.copy(), qdot=np.zeros(7))
    err = CartesianError(np.array([0.5, 0, 0, 0, 0, 0]), np.zeros(6))
    _, info = impedance_torque(st, err, SpatialAccel(), model, ImpedanceConfig(), terms)
    assert info["saturation_active"][0]
    assert not info["saturation_active"][1:].any()


def test_fault_on_nan_input(terms7):
    model, terms = terms7
    st = RobotState(q=model.q_rest.copy(), qdot=np.zeros(7))
    err = CartesianError(np.array([np.nan, 0, 0, 0, 0, 0]), np.zeros(6))
    with pytest.raises(ControllerFault):
        impedance_torque(st, err, SpatialAccel(), model, ImpedanceConfig(), terms)


def test_config_validation():
    with pytest.raises(ValueError):
        ImpedanceConfig(k_trans=-1.0)
    with pytest.raises(ValueError):
        ImpedanceConfig(damping_ratio=0.0)


def test_feedforward_pinv_switch(terms7):
    model, terms = terms7
    st = RobotState(q=model.q_rest.copy(), qdot=np.zeros(7))
    err = CartesianError(np.zeros(6), np.zeros(6))
    xdd = SpatialAccel([1.0, 0, 0], [0, 0, 0])
    tau_a, _ = impedance_torque(st, err, xdd, model, ImpedanceConfig(feedforward_pinv=False), terms)
    tau_b, _ = impedance_torque(st, err, xdd, model, ImpedanceConfig(feedforward_pinv=True), terms)
    assert not np.allclose(tau_a, tau_b)
    # the pinv route reproduces the commanded task acceleration exactly
    xdd_real = terms.J @ np.linalg.solve(terms.M, tau_b - terms.gravity - terms.coriolis)
    np.testing.assert_allclose(xdd_real, xdd.as_vector(), atol=1e-6)
