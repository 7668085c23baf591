"""Point-mass reacher environments with domain-shifted pixel rendering.

The hidden state (agent and goal positions on the unit square) and its
dynamics are identical in every domain; only the observation renderer
changes. A `DomainSpec` parameterizes the renderer: background noise,
moving distractor blobs, per-pixel color mixing, and an integer camera
offset, all scaled by a single distraction intensity `kappa`.

All operations are pure and deterministic: the same inputs always yield
bit-identical outputs. The composition order of the distraction stages is
fixed (noise, distractors, color mixing, camera offset) and must not be
reordered; downstream diagnostics depend on it being stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError

N_ACTIONS = 5
ACTION_UP, ACTION_DOWN, ACTION_LEFT, ACTION_RIGHT, ACTION_STAY = range(N_ACTIONS)
BLOB_SIGMA_PX = 1.5
MAX_DIST = math.sqrt(2.0)
_MIN_START_SEPARATION = 0.3


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 64
    action_step: float = 0.08
    action_count: int = N_ACTIONS
    image_size: tuple[int, int] = (16, 16)
    reward_kind: str = "dense"

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractViolationError("horizon must be >= 1")
        if self.action_step <= 0:
            raise ContractViolationError("action_step must be positive")
        if self.action_count != N_ACTIONS:
            raise ContractViolationError("action_count is fixed at 5")

    @property
    def obs_dim(self) -> int:
        h, w = self.image_size
        return 3 * h * w


@dataclass(frozen=True)
class EnvState:
    agent_pos: tuple[float, float]
    goal_pos: tuple[float, float]
    step_count: int = 0


@dataclass(frozen=True)
class DomainSpec:
    intensity: float = 0.0
    background_seed: int = 0
    color_mix: tuple = field(default=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)))
    camera_offset: tuple[int, int] = (0, 0)
    distractor_count: int = 0


def make_domain(intensity: float, master_seed: int) -> DomainSpec:
    """Deterministic map from (intensity, master seed) to a renderer spec.

    intensity 0 always yields the canonical source domain, regardless of
    the master seed.
    """
    if not 0.0 <= intensity <= 1.0:
        raise ContractViolationError(f"intensity must be in [0, 1], got {intensity}")
    if intensity == 0.0:
        return DomainSpec()
    rng = np.random.default_rng([int(master_seed) & 0xFFFFFFFF, 0x5EED])
    perturb = rng.uniform(-0.5, 0.5, size=(3, 3))
    mix = np.eye(3) + intensity * perturb
    mix = mix / mix.sum(axis=1, keepdims=True)
    offset = rng.integers(-3, 4, size=2)
    background_seed = int(rng.integers(0, 2**31 - 1))
    return DomainSpec(
        intensity=float(intensity),
        background_seed=background_seed,
        color_mix=tuple(tuple(float(v) for v in row) for row in mix),
        camera_offset=(int(offset[0]), int(offset[1])),
        distractor_count=8,  # kappa=1 maximum; render scales by intensity
    )


def reset(env_config: EnvConfig, domain: DomainSpec, episode_seed: int) -> tuple[EnvState, np.ndarray]:
    """Start an episode: agent and goal uniform on [0.1, 0.9]^2, >= 0.3 apart."""
    rng = np.random.default_rng([int(episode_seed) & 0xFFFFFFFFFFFFFFFF, 0xEA])
    while True:
        agent = rng.uniform(0.1, 0.9, size=2)
        goal = rng.uniform(0.1, 0.9, size=2)
        if np.linalg.norm(agent - goal) >= _MIN_START_SEPARATION:
            break
    state = EnvState(agent_pos=(float(agent[0]), float(agent[1])),
                     goal_pos=(float(goal[0]), float(goal[1])),
                     step_count=0)
    return state, render(state, domain, env_config)


_ACTION_DELTAS = {
    ACTION_UP: (0.0, 1.0),
    ACTION_DOWN: (0.0, -1.0),
    ACTION_LEFT: (-1.0, 0.0),
    ACTION_RIGHT: (1.0, 0.0),
    ACTION_STAY: (0.0, 0.0),
}


def step_state(state: EnvState, action: int, env_config: EnvConfig) -> EnvState:
    """Advance the hidden state only; never touches rewards or rendering."""
    if state.step_count >= env_config.horizon:
        raise ContractViolationError("step called on a terminal state")
    if not 0 <= action < env_config.action_count:
        raise ContractViolationError(f"action {action} outside [0, {env_config.action_count})")
    dx, dy = _ACTION_DELTAS[action]
    x = min(1.0, max(0.0, state.agent_pos[0] + dx * env_config.action_step))
    y = min(1.0, max(0.0, state.agent_pos[1] + dy * env_config.action_step))
    return EnvState(agent_pos=(x, y), goal_pos=state.goal_pos,
                    step_count=state.step_count + 1)


def true_reward(state: EnvState, env_config: EnvConfig) -> float:
    """Dense shaped reward 1 - d/d_max for the current agent/goal distance."""
    d = math.dist(state.agent_pos, state.goal_pos)
    return 1.0 - d / MAX_DIST


def step(state: EnvState, action: int, env_config: EnvConfig,
         domain: DomainSpec) -> tuple[EnvState, np.ndarray, float, bool]:
    """Full transition: new state, re-rendered observation, reward, done flag."""
    nxt = step_state(state, action, env_config)
    obs = render(nxt, domain, env_config)
    reward = true_reward(nxt, env_config)
    done = nxt.step_count >= env_config.horizon
    return nxt, obs, reward, done


def _blob(rows: np.ndarray, cols: np.ndarray, pos: tuple[float, float],
          h: int, w: int) -> np.ndarray:
    # pos is (x, y) in [0,1]^2; x maps to columns, y to rows with y up.
    c0 = pos[0] * (w - 1)
    r0 = (1.0 - pos[1]) * (h - 1)
    return np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2.0 * BLOB_SIGMA_PX**2))


def value_noise(seed: int, h: int, w: int, channels: int = 3,
                lattice: int = 4) -> np.ndarray:
    """Smooth procedural noise: bilinear interpolation of a random lattice."""
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    grid = rng.uniform(0.0, 1.0, size=(channels, lattice, lattice))
    rr = np.linspace(0.0, lattice - 1.0, h)
    cc = np.linspace(0.0, lattice - 1.0, w)
    r0 = np.floor(rr).astype(int)
    c0 = np.floor(cc).astype(int)
    r1 = np.minimum(r0 + 1, lattice - 1)
    c1 = np.minimum(c0 + 1, lattice - 1)
    fr = (rr - r0)[:, None]
    fc = (cc - c0)[None, :]
    out = np.empty((channels, h, w))
    for ch in range(channels):
        g = grid[ch]
        top = g[r0][:, c0] * (1 - fc) + g[r0][:, c1] * fc
        bot = g[r1][:, c0] * (1 - fc) + g[r1][:, c1] * fc
        out[ch] = top * (1 - fr) + bot * fr
    return out


def _distractor_centers(domain: DomainSpec, step_count: int,
                        count: int) -> np.ndarray:
    rng = np.random.default_rng([int(domain.background_seed), 0xD157])
    base = rng.uniform(0.15, 0.85, size=(count, 2))
    omega = rng.uniform(0.2, 0.6, size=count)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=count)
    angle = phase + omega * step_count
    centers = base + 0.2 * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return np.clip(centers, 0.0, 1.0)


def render(state: EnvState, domain: DomainSpec, env_config: EnvConfig) -> np.ndarray:
    """Render the state under a domain; returns a flat (3*H*W,) float vector.

    Stage order for kappa > 0: background noise blend, distractor blobs,
    color mixing, camera offset, final clamp.
    """
    h, w = env_config.image_size
    rows = np.arange(h, dtype=float)[:, None]
    cols = np.arange(w, dtype=float)[None, :]
    img = np.zeros((3, h, w))
    img[0] = _blob(rows, cols, state.agent_pos, h, w)
    img[1] = _blob(rows, cols, state.goal_pos, h, w)

    kappa = domain.intensity
    if kappa > 0.0:
        weight = kappa * 0.6
        noise = value_noise(domain.background_seed, h, w)
        img = (1.0 - weight) * img + weight * noise

        n_distractors = int(round(kappa * domain.distractor_count))
        if n_distractors > 0:
            centers = _distractor_centers(domain, state.step_count, n_distractors)
            for cx, cy in centers:
                img[2] += _blob(rows, cols, (cx, cy), h, w)

        mix = np.asarray(domain.color_mix)
        img = (1.0 - kappa) * img + kappa * np.einsum("ij,jhw->ihw", mix, img)

        dr = int(round(kappa * domain.camera_offset[0]))
        dc = int(round(kappa * domain.camera_offset[1]))
        if dr or dc:
            shifted = np.zeros_like(img)
            src_r = slice(max(0, -dr), h - max(0, dr))
            dst_r = slice(max(0, dr), h - max(0, -dr))
            src_c = slice(max(0, -dc), w - max(0, dc))
            dst_c = slice(max(0, dc), w - max(0, -dc))
            shifted[:, dst_r, dst_c] = img[:, src_r, src_c]
            img = shifted

    return np.clip(img, 0.0, 1.0).ravel()


def write_ppm(obs: np.ndarray, env_config: EnvConfig, path: str) -> None:
    """Dump an observation as an 8-bit binary PPM (channels interleaved)."""
    h, w = env_config.image_size
    img = obs.reshape(3, h, w)
    quantized = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    interleaved = np.transpose(quantized, (1, 2, 0))
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(interleaved.tobytes())


def write_pgm_channels(obs: np.ndarray, env_config: EnvConfig, path_prefix: str) -> list[str]:
    """Dump each channel as an 8-bit binary PGM; returns the written paths."""
    h, w = env_config.image_size
    img = obs.reshape(3, h, w)
    paths = []
    for ch in range(3):
        quantized = np.clip(np.round(img[ch] * 255.0), 0, 255).astype(np.uint8)
        path = f"{path_prefix}_c{ch}.pgm"
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            f.write(quantized.tobytes())
        paths.append(path)
    return paths
