import numpy as np
import pytest

from teleosim.dynamics import (
    ContactScene,
    HalfSpace,
    Joint,
    ModelError,
    RobotModel,
    RobotState,
    bias_terms,
    compute_terms,
    contact_wrench,
    coriolis_matrix,
    coriolis_transpose_qdot,
    franka_like_7dof,
    jacobian,
    kinetic_energy,
    load_model,
    mass_matrix,
    mdot_matrix,
    named_model,
    planar_3dof,
    rnea,
    save_model,
    step,
    tool_pose,
    tool_twist,
    total_energy,
)
from teleosim.geometry import Transform, Twist, quat_conj, quat_mul, quat_rotate, rot_err


def pendulum(length=1.0, mass=2.0):
    """Single rod hinged at the origin, swinging in the x-z plane (axis y)."""
    return RobotModel(
        joints=[
            Joint(
                axis=[0, 1, 0],
                origin=Transform.identity(),
                mass=mass,
                com=[length / 2, 0, 0],
                inertia=np.diag([1e-8, mass * length**2 / 12, mass * length**2 / 12]),
            )
        ],
        tool=Transform.from_translation([length, 0, 0]),
    )


# --- analytic oracles -------------------------------------------------------


def test_pendulum_gravity_torque_oracle():
    # torque to hold the rod horizontal: m g L/2
    m, L = 2.0, 1.0
    model = pendulum(L, m)
    tau = rnea(model, np.array([0.0]), np.zeros(1), np.zeros(1))
    assert abs(tau[0] - (-m * 9.81 * L / 2)) < 1e-12


def test_pendulum_mass_matrix_oracle():
    m, L = 2.0, 1.0
    model = pendulum(L, m)
    # I_hinge = I_com + m (L/2)^2 = mL^2/3
    M = mass_matrix(model, np.array([0.7]))
    assert abs(M[0, 0] - m * L**2 / 3) < 1e-9


def test_pendulum_small_oscillation_period():
    # physical pendulum: omega^2 = m g (L/2) / I_hinge = 3g/(2L)
    L = 1.0
    model = pendulum(L, 1.0)
    model = RobotModel(joints=model.joints, tool=model.tool)  # hangs along -z at q offset
    # equilibrium: com below the hinge; R_y(q) sends +x to -z at q = +pi/2
    q_eq = np.pi / 2
    st = RobotState(q=np.array([q_eq + 0.01]), qdot=np.zeros(1))
    dt = 1e-4
    prev = st.q[0] - q_eq
    crossings = []
    for i in range(int(6.0 / dt)):
        st = step(model, st, np.zeros(1), np.zeros(6), dt)
        cur = st.q[0] - q_eq
        if prev < 0 <= cur:
            crossings.append(i * dt)
        prev = cur
    period = np.mean(np.diff(crossings))
    expected = 2 * np.pi / np.sqrt(3 * 9.81 / (2 * L))
    assert abs(period - expected) / expected < 2e-3


def two_link_planar(m1=1.5, m2=0.8, l1=0.6, l2=0.4):
    """Two-link arm in the x-y plane; closed-form mass matrix available."""
    joints = [
        Joint(axis=[0, 0, 1], origin=Transform.identity(), mass=m1,
              com=[l1 / 2, 0, 0], inertia=np.diag([1e-8, m1 * l1**2 / 12, m1 * l1**2 / 12])),
        Joint(axis=[0, 0, 1], origin=Transform.from_translation([l1, 0, 0]), mass=m2,
              com=[l2 / 2, 0, 0], inertia=np.diag([1e-8, m2 * l2**2 / 12, m2 * l2**2 / 12])),
    ]
    return RobotModel(joints=joints, tool=Transform.from_translation([l2, 0, 0]),
                      gravity=np.zeros(3))


def test_two_link_mass_matrix_closed_form():
    m1, m2, l1, l2 = 1.5, 0.8, 0.6, 0.4
    model = two_link_planar(m1, m2, l1, l2)
    lc1, lc2 = l1 / 2, l2 / 2
    I1, I2 = m1 * l1**2 / 12, m2 * l2**2 / 12
    for q2 in [0.0, 0.4, -1.1, 2.2]:
        q = np.array([0.3, q2])
        c2 = np.cos(q2)
        m11 = I1 + I2 + m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * c2)
        m12 = I2 + m2 * (lc2**2 + l1 * lc2 * c2)
        m22 = I2 + m2 * lc2**2
        M = mass_matrix(model, q)
        np.testing.assert_allclose(M, [[m11, m12], [m12, m22]], atol=1e-9)


def test_two_link_coriolis_closed_form():
    m1, m2, l1, l2 = 1.5, 0.8, 0.6, 0.4
    model = two_link_planar(m1, m2, l1, l2)
    lc2 = l2 / 2
    q = np.array([0.3, 0.9])
    qd = np.array([0.7, -1.2])
    h = m2 * l1 * lc2 * np.sin(q[1])
    expected = np.array(
        [-h * qd[1] ** 2 - 2 * h * qd[0] * qd[1], h * qd[0] ** 2]
    )
    cor, _ = bias_terms(model, q, qd)
    np.testing.assert_allclose(cor, expected, atol=1e-9)


# --- structural identities --------------------------------------------------


@pytest.fixture(scope="module")
def f7():
    return franka_like_7dof()


def test_mass_matrix_symmetric_positive_definite(f7):
    rng = np.random.default_rng(0)
    for _ in range(10):
        q = rng.uniform(-1.5, 1.5, 7)
        M = mass_matrix(f7, q)
        np.testing.assert_allclose(M, M.T, atol=1e-12)
        assert np.linalg.eigvalsh(M)[0] > 0


def test_rnea_equals_assembled_equation(f7):
    rng = np.random.default_rng(1)
    for _ in range(10):
        q, qd, qdd = rng.uniform(-1, 1, 7), rng.normal(size=7), rng.normal(size=7)
        M = mass_matrix(f7, q)
        cor, g = bias_terms(f7, q, qd)
        np.testing.assert_allclose(rnea(f7, q, qd, qdd), M @ qdd + cor + g, atol=1e-9)


def test_coriolis_transpose_is_energy_gradient(f7):
    rng = np.random.default_rng(2)
    q, qd = rng.uniform(-1, 1, 7), rng.normal(size=7)
    ct = coriolis_transpose_qdot(f7, q, qd)
    h = 1e-6
    fd = np.array(
        [
            (kinetic_energy(f7, q + h * e, qd) - kinetic_energy(f7, q - h * e, qd)) / (2 * h)
            for e in np.eye(7)
        ]
    )
    np.testing.assert_allclose(ct, fd, atol=1e-6)


def test_mdot_minus_2c_skew_symmetric(f7):
    rng = np.random.default_rng(3)
    q, qd = rng.uniform(-1, 1, 7), rng.normal(size=7)
    C = coriolis_matrix(f7, q, qd)
    Md = mdot_matrix(f7, q, qd)
    S = Md - 2 * C
    np.testing.assert_allclose(S, -S.T, atol=1e-5)


def test_coriolis_matrix_consistent_with_rnea(f7):
    rng = np.random.default_rng(4)
    q, qd = rng.uniform(-1, 1, 7), rng.normal(size=7)
    cor, _ = bias_terms(f7, q, qd)
    np.testing.assert_allclose(coriolis_matrix(f7, q, qd) @ qd, cor, atol=1e-6)


def test_power_balance(f7):
    # qd . C qd == qd . C^T qd always
    rng = np.random.default_rng(5)
    q, qd = rng.uniform(-1, 1, 7), rng.normal(size=7)
    cor, _ = bias_terms(f7, q, qd)
    ct = coriolis_transpose_qdot(f7, q, qd)
    assert abs(qd @ cor - qd @ ct) < 1e-8


def test_jacobian_finite_difference(f7):
    rng = np.random.default_rng(6)
    q = rng.uniform(-1, 1, 7)
    J = jacobian(f7, q)
    T0 = tool_pose(f7, q)
    eps = 1e-7
    for i in range(7):
        qp = q.copy()
        qp[i] += eps
        Tp = tool_pose(f7, qp)
        np.testing.assert_allclose(J[:3, i], (Tp.p - T0.p) / eps, atol=1e-6)
        w = quat_rotate(T0.q, rot_err(quat_mul(quat_conj(T0.q), Tp.q))) / eps
        np.testing.assert_allclose(J[3:, i], w, atol=1e-6)


def test_tool_twist_matches_jacobian(f7):
    rng = np.random.default_rng(7)
    q, qd = rng.uniform(-1, 1, 7), rng.normal(size=7)
    v = tool_twist(f7, q, qd).as_vector()
    np.testing.assert_allclose(v, jacobian(f7, q) @ qd, atol=1e-12)


def test_jdot_by_product_rule(f7):
    # d/dt (J qd) with qdd=0 equals Jdot qd
    rng = np.random.default_rng(8)
    q, qd = rng.uniform(-1, 1, 7), rng.normal(size=7)
    _, Jdot = jacobian(f7, q, qd)
    h = 1e-6
    Jp = jacobian(f7, q + h * qd)
    Jm = jacobian(f7, q - h * qd)
    np.testing.assert_allclose(Jdot, (Jp - Jm) / (2 * h), atol=1e-6)


# --- integration ------------------------------------------------------------


def test_energy_conserved_free_swing():
    model = planar_3dof()
    st = RobotState(q=np.array([0.3, 0.5, -0.2]), qdot=np.array([0.4, -0.3, 0.6]))
    E0 = total_energy(model, st)
    dt = 2e-5
    for _ in range(25_000):  # 0.5 s
        st = step(model, st, np.zeros(3), np.zeros(6), dt)
    assert abs(total_energy(model, st) - E0) < 0.02 * abs(E0) + 0.02


def test_step_rejects_bad_dt_and_nan():
    model = planar_3dof()
    st = RobotState(q=np.zeros(3), qdot=np.zeros(3))
    with pytest.raises(ValueError):
        step(model, st, np.zeros(3), np.zeros(6), 0.01)
    with pytest.raises(ValueError):
        step(model, st, np.array([np.nan, 0, 0]), np.zeros(6), 1e-3)


def test_joint_limits_clamp():
    model = pendulum()
    model.joints[0].q_min, model.joints[0].q_max = -0.1, 0.1
    st = RobotState(q=np.array([0.09]), qdot=np.array([5.0]))
    for _ in range(100):
        st = step(model, st, np.zeros(1), np.zeros(6), 1e-3)
    assert st.q[0] <= 0.1 + 1e-12
    assert st.qdot[0] <= 0.0 + 1e-12


def test_external_wrench_enters_dynamics(f7):
    q = f7.q_rest.copy()
    st = RobotState(q=q, qdot=np.zeros(7))
    terms = compute_terms(f7, q, np.zeros(7))
    tau_hold = terms.gravity
    W = np.array([0, 0, -30.0, 0, 0, 0])
    st1 = step(f7, st.copy(), tau_hold, np.zeros(6), 1e-3)
    st2 = step(f7, st.copy(), tau_hold, W, 1e-3)
    dv = st2.qdot - st1.qdot
    np.testing.assert_allclose(dv, 1e-3 * np.linalg.solve(terms.M, terms.J.T @ W), atol=1e-9)


# --- contacts ---------------------------------------------------------------


def test_contact_inactive_outside():
    scene = ContactScene([HalfSpace(normal=[0, 0, 1], offset=0.0)])
    W = contact_wrench(scene, Transform.from_translation([0, 0, 0.1]), Twist())
    np.testing.assert_array_equal(W, np.zeros(6))


def test_contact_spring_oracle():
    k = 5000.0
    scene = ContactScene([HalfSpace(normal=[0, 0, 1], offset=0.0, stiffness=k, damping=0.0)])
    W = contact_wrench(scene, Transform.from_translation([0, 0, -0.01]), Twist())
    np.testing.assert_allclose(W[:3], [0, 0, k * 0.01], atol=1e-12)


def test_contact_never_adhesive():
    scene = ContactScene([HalfSpace(normal=[0, 0, 1], offset=0.0, stiffness=1e4, damping=1e3)])
    # fast separation while barely penetrating: damper would pull, must clamp to zero
    W = contact_wrench(scene, Transform.from_translation([0, 0, -1e-4]), Twist([0, 0, 5.0], [0, 0, 0]))
    np.testing.assert_array_equal(W, np.zeros(6))


def test_contact_friction_opposes_sliding():
    scene = ContactScene([HalfSpace(normal=[0, 0, 1], offset=0.0, friction=0.3)])
    W = contact_wrench(scene, Transform.from_translation([0, 0, -0.005]), Twist([1.0, 0, 0], [0, 0, 0]))
    assert W[2] > 0 and W[0] < 0


# --- models, validation, file I/O -------------------------------------------


def test_invalid_inertia_rejected():
    with pytest.raises(ModelError):
        Joint(axis=[0, 0, 1], origin=Transform.identity(), mass=1.0,
              com=[0, 0, 0], inertia=np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ModelError):
        Joint(axis=[0, 0, 0], origin=Transform.identity(), mass=1.0,
              com=[0, 0, 0], inertia=np.eye(3))


def test_named_model_and_file_round_trip(tmp_path):
    model = named_model("planar3")
    path = tmp_path / "robot.json"
    save_model(model, str(path))
    loaded = load_model(str(path))
    rng = np.random.default_rng(9)
    q, qd = rng.uniform(-1, 1, 3), rng.normal(size=3)
    np.testing.assert_allclose(mass_matrix(model, q), mass_matrix(loaded, q), atol=1e-12)
    np.testing.assert_allclose(
        rnea(model, q, qd, qd), rnea(loaded, q, qd, qd), atol=1e-12
    )
    assert tool_pose(model, q).is_close(tool_pose(loaded, q), tol=1e-12)


def test_unknown_named_model():
    with pytest.raises(ModelError):
        named_model("nonexistent-arm")
