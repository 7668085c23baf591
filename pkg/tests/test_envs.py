import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prft import envs
from prft.envs import (ACTION_LEFT, ACTION_STAY, ACTION_UP, DomainSpec,
                       EnvConfig, EnvState)
from prft.errors import ContractViolationError

CFG = EnvConfig()


def test_reset_deterministic():
    d = envs.make_domain(0.3, 5)
    s1, o1 = envs.reset(CFG, d, 123)
    s2, o2 = envs.reset(CFG, d, 123)
    assert s1 == s2
    assert np.array_equal(o1, o2)


def test_reset_seed_sensitivity():
    differing = 0
    for seed in range(100):
        a, _ = envs.reset(CFG, DomainSpec(), seed)
        b, _ = envs.reset(CFG, DomainSpec(), seed + 1)
        if a.agent_pos != b.agent_pos or a.goal_pos != b.goal_pos:
            differing += 1
    assert differing >= 99


def test_reset_positions_in_bounds_and_separated():
    for seed in range(50):
        s, _ = envs.reset(CFG, DomainSpec(), seed)
        for p in (s.agent_pos, s.goal_pos):
            assert 0.1 <= p[0] <= 0.9 and 0.1 <= p[1] <= 0.9
        assert math.dist(s.agent_pos, s.goal_pos) >= 0.3
        assert s.step_count == 0


def test_same_state_different_observation_across_domains():
    d0 = envs.make_domain(0.0, 9)
    d5 = envs.make_domain(0.5, 9)
    s0, o0 = envs.reset(CFG, d0, 7)
    s5, o5 = envs.reset(CFG, d5, 7)
    assert s0 == s5
    assert not np.array_equal(o0, o5)


def test_step_reward_at_goal():
    s = EnvState(agent_pos=(0.5, 0.5), goal_pos=(0.5, 0.5), step_count=0)
    _, _, r, _ = envs.step(s, ACTION_STAY, CFG, DomainSpec())
    assert r == 1.0


def test_step_boundary_clamp():
    s = EnvState(agent_pos=(0.0, 0.5), goal_pos=(0.8, 0.8), step_count=0)
    s2, _, _, _ = envs.step(s, ACTION_LEFT, CFG, DomainSpec())
    assert s2.agent_pos == (0.0, 0.5)


def test_step_reward_hand_arithmetic():
    s = EnvState(agent_pos=(0.5, 0.5), goal_pos=(0.5, 0.9), step_count=0)
    s2, _, r, _ = envs.step(s, ACTION_UP, CFG, DomainSpec())
    assert s2.agent_pos[1] == pytest.approx(0.58)
    assert r == pytest.approx(1.0 - 0.32 / math.sqrt(2.0), abs=1e-12)


def test_step_terminal_raises():
    s = EnvState(agent_pos=(0.5, 0.5), goal_pos=(0.8, 0.8), step_count=CFG.horizon)
    with pytest.raises(ContractViolationError):
        envs.step(s, ACTION_STAY, CFG, DomainSpec())


def test_done_at_horizon():
    cfg = EnvConfig(horizon=2)
    s, _ = envs.reset(cfg, DomainSpec(), 0)
    s, _, _, done = envs.step(s, ACTION_STAY, cfg, DomainSpec())
    assert not done
    s, _, _, done = envs.step(s, ACTION_STAY, cfg, DomainSpec())
    assert done


def test_state_trajectory_identical_across_domains():
    rng = np.random.default_rng(4)
    actions = rng.integers(0, 5, size=30)
    trajectories = []
    for domain in (envs.make_domain(0.0, 1), envs.make_domain(0.3, 1),
                   envs.make_domain(1.0, 2)):
        s, _ = envs.reset(CFG, domain, 11)
        traj = [(s, None)]
        for a in actions:
            s, _, r, _ = envs.step(s, int(a), CFG, domain)
            traj.append((s, r))
        trajectories.append(traj)
    assert trajectories[0] == trajectories[1] == trajectories[2]


def test_render_blob_mass_kappa_zero():
    # Blobs well inside the grid: discrete mass ~ continuous Gaussian integral.
    s = EnvState(agent_pos=(0.5, 0.5), goal_pos=(0.3, 0.7), step_count=0)
    img = envs.render(s, DomainSpec(), CFG)
    analytic = 2.0 * 2.0 * math.pi * envs.BLOB_SIGMA_PX**2
    assert img.sum() == pytest.approx(analytic, rel=0.05)
    h, w = CFG.image_size
    assert img.reshape(3, h, w)[2].sum() == 0.0


def test_render_identity_domain_only_background_blend():
    # Identity mix, zero offset, no distractors: the only active stage is
    # the background blend.
    d = DomainSpec(intensity=0.3, background_seed=77)
    s = EnvState(agent_pos=(0.4, 0.6), goal_pos=(0.7, 0.3), step_count=0)
    base = envs.render(s, DomainSpec(), CFG).reshape(3, *CFG.image_size)
    noise = envs.value_noise(77, *CFG.image_size)
    expected = np.clip((1 - 0.18) * base + 0.18 * noise, 0.0, 1.0)
    assert np.allclose(envs.render(s, d, CFG), expected.ravel())


def test_render_distractors_move_with_step_count():
    d = DomainSpec(intensity=0.5, background_seed=3, distractor_count=4)
    s1 = EnvState(agent_pos=(0.4, 0.4), goal_pos=(0.8, 0.8), step_count=0)
    s2 = EnvState(agent_pos=(0.4, 0.4), goal_pos=(0.8, 0.8), step_count=5)
    assert not np.array_equal(envs.render(s1, d, CFG), envs.render(s2, d, CFG))


@settings(max_examples=30, deadline=None)
@given(kappa=st.floats(0.0, 1.0), seed=st.integers(0, 1000),
       x=st.floats(0.0, 1.0), y=st.floats(0.0, 1.0))
def test_render_always_in_unit_range(kappa, seed, x, y):
    d = envs.make_domain(kappa, seed)
    s = EnvState(agent_pos=(x, y), goal_pos=(0.5, 0.5), step_count=seed % 64)
    img = envs.render(s, d, CFG)
    assert img.shape == (CFG.obs_dim,)
    assert np.all(img >= 0.0) and np.all(img <= 1.0)


@settings(max_examples=30, deadline=None)
@given(ax=st.floats(0.0, 1.0), ay=st.floats(0.0, 1.0),
       gx=st.floats(0.0, 1.0), gy=st.floats(0.0, 1.0))
def test_reward_range(ax, ay, gx, gy):
    s = EnvState(agent_pos=(ax, ay), goal_pos=(gx, gy))
    assert 0.0 <= envs.true_reward(s, CFG) <= 1.0


def test_make_domain_kappa_zero_canonical():
    for seed in (0, 5, 99):
        assert envs.make_domain(0.0, seed) == DomainSpec()


def test_make_domain_deterministic():
    assert envs.make_domain(0.5, 7) == envs.make_domain(0.5, 7)


def test_make_domain_distractor_count():
    # The spec field holds the kappa=1 maximum; render scales it by kappa.
    assert envs.make_domain(0.5, 7).distractor_count == 8
    assert envs.make_domain(1.0, 7).distractor_count == 8


def test_make_domain_color_rows_sum_to_one():
    d = envs.make_domain(0.7, 13)
    mix = np.asarray(d.color_mix)
    assert np.allclose(mix.sum(axis=1), 1.0)
    assert all(-3 <= v <= 3 for v in d.camera_offset)


def test_make_domain_rejects_bad_intensity():
    with pytest.raises(ContractViolationError):
        envs.make_domain(-0.1, 0)
    with pytest.raises(ContractViolationError):
        envs.make_domain(1.5, 0)


def test_ppm_export(tmp_path):
    s, obs = envs.reset(CFG, DomainSpec(), 3)
    path = tmp_path / "obs.ppm"
    envs.write_ppm(obs, CFG, str(path))
    data = path.read_bytes()
    h, w = CFG.image_size
    assert data.startswith(f"P6\n{w} {h}\n255\n".encode())
    assert len(data) == len(f"P6\n{w} {h}\n255\n") + 3 * h * w
    paths = envs.write_pgm_channels(obs, CFG, str(tmp_path / "obs"))
    assert len(paths) == 3
