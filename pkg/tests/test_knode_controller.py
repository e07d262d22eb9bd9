import numpy as np
import pytest

from swarmlearn.info_network import infos_from_arrays, shift_operator, info_structure
from swarmlearn.knode_controller import (
    ControllerMeta,
    ControllerParams,
    controller_gradients,
    hybrid_derivative_2d,
    hybrid_derivative_3d,
    init_controller,
    mlp_forward,
    predict_rollout,
)
from swarmlearn.knowledge import repulsive_force, wall_obstacles
from swarmlearn.sim_core import RngSpec, SwarmState


def meta_2d(k=6, hidden=128, **kw):
    return ControllerMeta(space="2d", k=k, d=4, hidden=hidden, d_cr=5.0, tau=0,
                          d0_neighbor=1.0, gain_form="offset_square", a=0.5, **kw)


def meta_3d(k=6, hidden=128, **kw):
    return ControllerMeta(space="3d", k=k, d=6, hidden=hidden, d_cr=2.0, tau=1,
                          d0_neighbor=1.0, d0_wall=1.0, gain_form="square",
                          a=0.5, cube_half_side=5.0, **kw)


def zeroed(params: ControllerParams) -> ControllerParams:
    out = params.copy()
    out.W1 = np.zeros_like(out.W1)
    out.b1 = np.zeros_like(out.b1)
    out.W2 = np.zeros_like(out.W2)
    out.b2 = np.zeros_like(out.b2)
    return out


def infos_for(Z: SwarmState, meta: ControllerMeta, Z_del: SwarmState = None):
    Z_del = Z_del or Z
    Y, _ = infos_from_arrays(Z.states, Z_del.states, meta.d_cr, meta.k, meta.pos_dim)
    return Y


class TestMlpForward:
    def test_zero_parameters_give_zero_output(self):
        p = zeroed(init_controller(meta_2d(), RngSpec(1)))
        y = RngSpec(2).generator().normal(size=24)
        assert np.array_equal(mlp_forward(p, y), np.zeros(2))

    def test_2d_default_sizing(self):
        p = init_controller(meta_2d(), RngSpec(1))
        assert p.W1.shape == (128, 24)
        assert p.b1.shape == (128,)
        assert p.W2.shape == (2, 128)
        assert p.b2.shape == (2,)
        out = mlp_forward(p, np.zeros(24))
        assert out.shape == (2,)

    def test_3d_default_sizing(self):
        p = init_controller(meta_3d(), RngSpec(1))
        assert p.W1.shape == (128, 36)
        assert mlp_forward(p, np.zeros(36)).shape == (3,)

    def test_matches_independent_oracle(self):
        # duplicate implementation with explicit loops
        p = init_controller(meta_2d(k=3, hidden=7), RngSpec(5))
        rng = RngSpec(6).generator()
        for _ in range(5):
            y = rng.normal(size=12)
            hidden = np.zeros(7)
            for j in range(7):
                acc = p.b1[j]
                for i in range(12):
                    acc += p.W1[j, i] * y[i]
                hidden[j] = np.tanh(acc)
            expect = np.zeros(2)
            for o in range(2):
                acc = p.b2[o]
                for j in range(7):
                    acc += p.W2[o, j] * hidden[j]
                expect[o] = acc
            assert np.abs(mlp_forward(p, y) - expect).max() < 1e-12

    def test_shape_mismatch_raises(self):
        p = init_controller(meta_2d(), RngSpec(1))
        with pytest.raises(ValueError):
            mlp_forward(p, np.zeros(23))

    def test_output_norm_bound(self):
        # tanh entries are bounded by 1: |out| <= ||W2||_F sqrt(hidden) + |b2|
        p = init_controller(meta_2d(), RngSpec(7))
        bound = np.linalg.norm(p.W2) * np.sqrt(128) + np.linalg.norm(p.b2)
        rng = RngSpec(8).generator()
        for scale in (0.1, 1.0, 100.0):
            y = rng.normal(0, scale, size=24)
            assert np.linalg.norm(mlp_forward(p, y)) <= bound + 1e-12


class TestControllerGradients:
    def test_zero_upstream(self):
        p = init_controller(meta_2d(k=2, hidden=5), RngSpec(9))
        grads, g_y = controller_gradients(p, np.ones(8), np.zeros(2))
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads.values())
        assert np.array_equal(g_y, np.zeros(8))

    def test_b2_gradient_equals_upstream(self):
        p = init_controller(meta_2d(k=2, hidden=5), RngSpec(10))
        up = np.array([0.3, -1.7])
        grads, _ = controller_gradients(p, np.ones(8), up)
        assert np.array_equal(grads["b2"], up)

    def test_matches_finite_differences(self):
        rng = RngSpec(11).generator()
        p = init_controller(meta_2d(k=2, hidden=6), RngSpec(12))
        eps = 1e-6
        for _ in range(20):
            y = rng.normal(size=8)
            up = rng.normal(size=2)
            grads, g_y = controller_gradients(p, y, up)

            def f(params, yy):
                return float(mlp_forward(params, yy) @ up)

            for name in ("W1", "b1", "W2", "b2"):
                arr = getattr(p, name)
                flat = arr.reshape(-1)
                idx = rng.integers(flat.size)
                orig = flat[idx]
                flat[idx] = orig + eps
                fp = f(p, y)
                flat[idx] = orig - eps
                fm = f(p, y)
                flat[idx] = orig
                fd = (fp - fm) / (2 * eps)
                an = np.asarray(grads[name]).reshape(-1)[idx]
                assert abs(fd - an) / max(abs(fd), abs(an), 1e-9) < 1e-6
            for idx in range(8):
                yy = y.copy()
                yy[idx] += eps
                fp = f(p, yy)
                yy[idx] -= 2 * eps
                fm = f(p, yy)
                fd = (fp - fm) / (2 * eps)
                assert abs(fd - g_y[idx]) / max(abs(fd), abs(g_y[idx]), 1e-9) < 1e-6


class TestHybrid2D:
    def test_zero_network_no_neighbor_is_pure_drift(self):
        meta = meta_2d(k=2)
        p = zeroed(init_controller(meta, RngSpec(13)))
        Z = SwarmState([[0.0, 0, 1.0, 2.0], [10.0, 0, -1.0, 0.5]])
        dZ = hybrid_derivative_2d(Z, infos_for(Z, meta), p)
        assert np.array_equal(dZ.states[:, 0:2], Z.velocities)
        assert np.array_equal(dZ.states[:, 2:4], np.zeros((2, 2)))

    def test_zero_network_recovers_knowledge_force_bitwise(self):
        meta = meta_2d(k=2)
        p = zeroed(init_controller(meta, RngSpec(14)))
        Z = SwarmState([[0.0, 0, 0, 0], [0.5, 0, 0, 0]])
        dZ = hybrid_derivative_2d(Z, infos_for(Z, meta), p)
        lam = p.lambda_neighbor()
        expect0 = repulsive_force([0.0, 0.0], [0.5, 0.0], lam, meta.d0_neighbor)
        expect1 = repulsive_force([0.5, 0.0], [0.0, 0.0], lam, meta.d0_neighbor)
        assert np.array_equal(dZ.states[0, 2:4], expect0)
        assert np.array_equal(dZ.states[1, 2:4], expect1)

    def test_derivative_shape(self):
        meta = meta_2d()
        p = init_controller(meta, RngSpec(15))
        Z = SwarmState(RngSpec(16).generator().normal(size=(10, 4)))
        dZ = hybrid_derivative_2d(Z, infos_for(Z, meta), p)
        assert dZ.states.shape == (10, 4)

    def test_sum_structure(self):
        # hybrid field = network-only field + knowledge-only field (drift once)
        meta = meta_2d(k=3)
        p = init_controller(meta, RngSpec(17))
        Z = SwarmState(RngSpec(18).generator().normal(0, 0.7, size=(4, 4)))
        infos = infos_for(Z, meta)
        full = hybrid_derivative_2d(Z, infos, p)
        knowledge_only = hybrid_derivative_2d(Z, infos, zeroed(p))
        p_nogain = p.copy()
        p_nogain.phi_neighbor = 0.0
        p_nogain.meta = ControllerMeta(**{**meta.__dict__, "a": 1e-300})
        network_only = hybrid_derivative_2d(Z, infos, p_nogain)
        accel_sum = knowledge_only.states[:, 2:4] + network_only.states[:, 2:4]
        assert np.allclose(full.states[:, 2:4], accel_sum, atol=1e-12)

    def test_permutation_equivariance(self):
        meta = meta_2d(k=4)
        p = init_controller(meta, RngSpec(19))
        rng = RngSpec(20).generator()
        Z = SwarmState(rng.normal(0, 2, size=(7, 4)))
        perm = rng.permutation(7)
        d_orig = hybrid_derivative_2d(Z, infos_for(Z, meta), p).states
        Zp = SwarmState(Z.states[perm])
        d_perm = hybrid_derivative_2d(Zp, infos_for(Zp, meta), p).states
        assert np.allclose(d_perm, d_orig[perm])


class TestHybrid3D:
    def test_zero_network_isolated_mid_cube(self):
        meta = meta_3d(k=2)
        p = zeroed(init_controller(meta, RngSpec(21)))
        Z = SwarmState([[0.0, 0, 0, 1.0, 0, 0]])
        v = hybrid_derivative_3d(Z, Z, infos_for(Z, meta), p)
        assert np.array_equal(v, np.zeros((1, 3)))

    def test_zero_network_near_wall_points_away(self):
        meta = meta_3d(k=2)
        p = zeroed(init_controller(meta, RngSpec(22)))
        Z = SwarmState([[4.5, 0, 0, 1.0, 0, 0]])
        v = hybrid_derivative_3d(Z, Z, infos_for(Z, meta), p)
        lam = p.lambda_wall()
        expect = repulsive_force([4.5, 0, 0], wall_obstacles([4.5, 0, 0], 5.0, 1.0)[0],
                                 lam, 1.0)
        assert np.allclose(v[0], expect)
        assert v[0, 0] < 0  # away from the +x face

    def test_network_sizing(self):
        meta = meta_3d()
        p = init_controller(meta, RngSpec(23))
        assert meta.input_dim == 36
        Z = SwarmState(np.hstack([np.zeros((5, 3)), np.tile([1.0, 0, 0], (5, 1))]))
        v = hybrid_derivative_3d(Z, Z, infos_for(Z, meta), p)
        assert v.shape == (5, 3)

    def test_neighbor_obstacle_uses_delayed_positions(self):
        meta = meta_3d(k=2)
        p = zeroed(init_controller(meta, RngSpec(24)))
        now = np.array([[0.0, 0, 0, 1, 0, 0], [3.0, 0, 0, 1, 0, 0]])
        delayed = np.array([[0.0, 0, 0, 1, 0, 0], [0.5, 0, 0, 1, 0, 0]])
        v = hybrid_derivative_3d(SwarmState(now), SwarmState(delayed),
                                 infos_for(SwarmState(now), meta,
                                           SwarmState(delayed)), p)
        # robot 0 sees robot 1 at its delayed position 0.5 away -> repulsion
        assert v[0, 0] < 0


class TestPredictRollout:
    def test_zero_steps_returns_initial(self):
        meta = meta_2d(k=2)
        p = init_controller(meta, RngSpec(25))
        Z0 = SwarmState(RngSpec(26).generator().normal(size=(3, 4)))
        traj = predict_rollout(p, Z0, steps=0, h=0.01)
        assert len(traj) == 1
        assert np.array_equal(traj.states[0], Z0.states)

    def test_deterministic(self):
        meta = meta_2d(k=3)
        p = init_controller(meta, RngSpec(27))
        Z0 = SwarmState(RngSpec(28).generator().normal(size=(5, 4)))
        a = predict_rollout(p, Z0, steps=20, h=0.01)
        b = predict_rollout(p, Z0, steps=20, h=0.01)
        assert np.array_equal(a.states, b.states)

    def test_3d_headings_stay_unit(self):
        meta = meta_3d(k=3)
        p = init_controller(meta, RngSpec(29))
        gen = RngSpec(30).generator()
        pos = gen.uniform(-2, 2, size=(6, 3))
        hd = gen.normal(size=(6, 3))
        hd /= np.linalg.norm(hd, axis=1, keepdims=True)
        Z0 = SwarmState(np.hstack([pos, hd]))
        traj = predict_rollout(p, Z0, steps=50, h=0.02)
        norms = np.linalg.norm(traj.states[:, :, 3:6], axis=2)
        assert np.abs(norms - 1.0).max() < 1e-9

    def test_2d_single_step_matches_manual_rk4(self):
        # rollout semantics: infos frozen inside the step
        from swarmlearn.knode_controller import one_step_2d
        meta = meta_2d(k=3)
        p = init_controller(meta, RngSpec(31))
        Z0 = SwarmState(RngSpec(32).generator().normal(0, 1.5, size=(4, 4)))
        traj = predict_rollout(p, Z0, steps=1, h=0.01)
        Y, _ = infos_from_arrays(Z0.states, Z0.states, meta.d_cr, meta.k, 2)
        expect, _ = one_step_2d(p, Z0.states, Y, 0.01)
        assert np.array_equal(traj.states[1], expect)

    def test_delay_history_is_used(self):
        meta = meta_3d(k=2)
        p = init_controller(meta, RngSpec(33))
        gen = RngSpec(34).generator()
        pos = gen.uniform(-1, 1, size=(3, 3))
        hd = np.tile([1.0, 0, 0], (3, 1))
        Z0 = SwarmState(np.hstack([pos, hd]))
        Zh = SwarmState(np.hstack([pos + 0.3, hd]))
        a = predict_rollout(p, Z0, steps=3, h=0.02)
        b = predict_rollout(p, Z0, steps=3, h=0.02, delay_history=[Zh])
        assert not np.array_equal(a.states[1], b.states[1])
