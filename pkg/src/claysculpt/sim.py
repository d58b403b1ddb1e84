"""Deterministic particle clay simulator.

The clay is a fixed-size particle set on the elevated stage. A grasp closes
two finger planes symmetrically about the grasp center; particles swept by a
finger are projected onto its final plane and redistributed sideways and
upward in proportion to how far they were displaced, which keeps the
deformation visibly plastic. There are no forces or elasticity: the action
abstraction carries no force information, so the dynamics are purely
kinematic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .dataset import GraspAction, Trajectory
from .geometry import PointCloud, StageFrame, add_base_plane, downsample

SHAPE_NAMES = ("Line", "X", "Cone")


@dataclass
class ClayConfig:
    particle_count: int = 4096
    initial_shape: str = "cylinder"  # cylinder | sphere
    radius: float = 0.03
    height: float = 0.025  # cylinder only
    finger_width: float = 0.02
    finger_height: float = 0.03
    skin: float = 0.001
    bulge_gain: float = 0.5
    surface_neighbor_threshold: int = 45
    surface_radius_factor: float = 2.5
    observation_views: int = 12

    def __post_init__(self):
        for name in ("radius", "height", "finger_width", "finger_height", "skin", "bulge_gain"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.particle_count <= 0:
            raise ValueError("particle_count must be > 0")
        if self.initial_shape not in ("cylinder", "sphere"):
            raise ValueError(f"unknown initial shape {self.initial_shape!r}")

    @property
    def volume(self) -> float:
        if self.initial_shape == "cylinder":
            return np.pi * self.radius**2 * self.height
        return 4.0 / 3.0 * np.pi * self.radius**3

    @property
    def spacing(self) -> float:
        """Nominal inter-particle spacing for a uniform fill."""
        return float((self.volume / self.particle_count) ** (1.0 / 3.0))


@dataclass
class ClayState:
    particles: np.ndarray  # (n, 3) float64
    seed: int
    config: ClayConfig
    frame: StageFrame = field(default_factory=StageFrame)


def _shape_mask(cfg: ClayConfig, frame: StageFrame, pts: np.ndarray) -> np.ndarray:
    cx, cy = frame.center
    if cfg.initial_shape == "cylinder":
        r = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
        return (r <= cfg.radius) & (pts[:, 2] >= frame.surface_z) & (
            pts[:, 2] <= frame.surface_z + cfg.height
        )
    center = np.array([cx, cy, frame.surface_z + cfg.radius])
    return np.linalg.norm(pts - center, axis=1) <= cfg.radius


def init(config: ClayConfig, frame: StageFrame, seed: int = 0) -> ClayState:
    """Seeded near-uniform particle fill of the initial shape.

    Particles sit on a jittered lattice: uniform density keeps the
    neighbor-count surface classifier stable, the jitter avoids grid
    artifacts in observations. Lattice pitch shrinks until the shape holds at
    least `particle_count` candidates, then a seeded subset is kept.
    """
    rng = np.random.default_rng(seed)
    cx, cy = frame.center
    if config.initial_shape == "cylinder":
        lo = np.array([cx - config.radius, cy - config.radius, frame.surface_z])
        hi = np.array([cx + config.radius, cy + config.radius, frame.surface_z + config.height])
    else:
        lo = np.array([cx - config.radius, cy - config.radius, frame.surface_z])
        hi = np.array(
            [cx + config.radius, cy + config.radius, frame.surface_z + 2 * config.radius]
        )
    # Undershoot the lattice slightly and top up with seeded random points:
    # vacancies would distort local neighbor counts, surplus random points
    # only thicken them, which keeps the shell classifier stable.
    pitch = config.spacing * 1.02
    while True:
        axes = [np.arange(lo[d] + pitch / 2, hi[d], pitch) for d in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        jitter = rng.uniform(-0.18 * pitch, 0.18 * pitch, size=pts.shape)
        pts = pts + jitter
        pts = pts[_shape_mask(config, frame, pts)]
        if len(pts) <= config.particle_count:
            break
        pitch *= 1.02
    extras = []
    missing = config.particle_count - len(pts)
    while missing > 0:
        cand = rng.uniform(lo, hi, size=(4 * missing + 16, 3))
        cand = cand[_shape_mask(config, frame, cand)][:missing]
        if len(cand):
            extras.append(cand)
            missing -= len(cand)
    pts = np.concatenate([pts, *extras], axis=0) if extras else pts
    # clamp the jitter back inside the shape so the fill is exact by construction
    r = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
    if config.initial_shape == "cylinder":
        over = r > config.radius
        scale = np.where(over, config.radius / np.maximum(r, 1e-12), 1.0)
        pts[:, 0] = (pts[:, 0] - cx) * scale + cx
        pts[:, 1] = (pts[:, 1] - cy) * scale + cy
        pts[:, 2] = np.clip(pts[:, 2], frame.surface_z, frame.surface_z + config.height)
    else:
        center = np.array([cx, cy, frame.surface_z + config.radius])
        d = np.linalg.norm(pts - center, axis=1)
        over = d > config.radius
        scale = np.where(over, config.radius / np.maximum(d, 1e-12), 1.0)
        pts = (pts - center) * scale[:, None] + center
        pts[:, 2] = np.maximum(pts[:, 2], frame.surface_z)
    return ClayState(particles=pts, seed=seed, config=config, frame=frame)


def apply_grasp(state: ClayState, action: GraspAction) -> ClayState:
    """Close the fingers to `action.width` and return the deformed state.

    The closing axis points along rot + pi/2 in the xy-plane; the finger
    footprint spans `finger_width` along the gripper's long axis and
    `finger_height` vertically, centered on the grasp point. Particles swept
    by a finger land on that finger's final plane (offset by the contact
    skin) and pick up a sideways-plus-upward bulge displacement proportional
    to their penetration depth.
    """
    cfg = state.config
    rot = action.rot
    closing = np.array([np.cos(rot + np.pi / 2), np.sin(rot + np.pi / 2)])
    tangent = np.array([np.cos(rot), np.sin(rot)])
    rel_xy = state.particles[:, :2] - np.array([action.x, action.y])
    u = rel_xy @ closing
    t = rel_xy @ tangent
    dz = state.particles[:, 2] - action.z
    half = action.width / 2.0 + cfg.skin
    in_footprint = (np.abs(t) <= cfg.finger_width / 2.0) & (
        np.abs(dz) <= cfg.finger_height / 2.0
    )
    penetration = np.abs(u) - half
    swept = in_footprint & (penetration > 0)
    if not swept.any():
        return ClayState(state.particles.copy(), state.seed, cfg, state.frame)
    pts = state.particles.copy()
    pen = penetration[swept]
    new_u = np.sign(u[swept]) * half
    new_t = t[swept] + cfg.bulge_gain * pen * np.sign(t[swept])
    new_z = pts[swept, 2] + cfg.bulge_gain * pen
    base = np.array([action.x, action.y])
    pts[swept, 0] = base[0] + new_u * closing[0] + new_t * tangent[0]
    pts[swept, 1] = base[1] + new_u * closing[1] + new_t * tangent[1]
    pts[swept, 2] = new_z
    pts[:, 2] = np.maximum(pts[:, 2], state.frame.surface_z)
    return ClayState(pts, state.seed, cfg, state.frame)


def _view_directions(n_azimuth: int) -> np.ndarray:
    """Orthographic capture directions: a ring of side views, a tilted ring, top."""
    az = np.arange(n_azimuth) * 2 * np.pi / n_azimuth
    ring = np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=1)
    tilt = np.stack([np.cos(az) / np.sqrt(2), np.sin(az) / np.sqrt(2),
                     np.full_like(az, 1 / np.sqrt(2))], axis=1)
    top = np.array([[0.0, 0.0, 1.0]])
    return np.concatenate([ring, tilt, top], axis=0)


def surface_shell(state: ClayState) -> np.ndarray:
    """Boolean mask of particles forming the observable outer shell.

    Two complementary criteria are unioned: sparse local neighborhoods
    (boundary particles see fewer neighbors within r_surf than interior
    ones) and direct visibility from a bank of orthographic view directions
    (keeps squeezed regions observable even where projection has locally
    densified the particles). A particle is visible along a direction when
    no neighbor shadows it inside a narrow cone toward the viewer.
    """
    cfg = state.config
    pts = state.particles
    spacing = cfg.spacing
    tree = cKDTree(pts)
    counts = tree.query_ball_point(pts, r=cfg.surface_radius_factor * spacing,
                                   return_length=True)
    mask = counts < cfg.surface_neighbor_threshold

    cell = spacing
    band = 0.3 * spacing
    slope = 0.5 * cell  # per-cell front relaxation, allows ~27 deg surfaces
    for d in _view_directions(cfg.observation_views):
        ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(d, ref)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(d, e1)
        a = np.floor(pts @ e1 / cell).astype(np.int64)
        b = np.floor(pts @ e2 / cell).astype(np.int64)
        a -= a.min()
        b -= b.min()
        depth = pts @ d
        front = np.full((a.max() + 1, b.max() + 1), -np.inf)
        np.maximum.at(front, (a, b), depth)
        # A ragged sparse column can under-report its own front; let every
        # cell inherit the fronts of its 8 neighbors minus a slope allowance
        # so only genuinely frontmost particles survive the depth test.
        padded = np.pad(front, 1, constant_values=-np.inf)
        eff = front.copy()
        for da in (-1, 0, 1):
            for db in (-1, 0, 1):
                if da == 0 and db == 0:
                    continue
                shift = padded[1 + da : padded.shape[0] - 1 + da,
                               1 + db : padded.shape[1] - 1 + db]
                np.maximum(eff, shift - slope * np.hypot(da, db), out=eff)
        mask |= depth >= eff[a, b] - band
    return mask


def observe(state: ClayState, n: int, frame: StageFrame, seed: int = 0) -> PointCloud:
    """Point-cloud observation: outer shell plus base plane, downsampled to n."""
    if n <= 0:
        raise ValueError("observation size must be > 0")
    shell = PointCloud(state.particles[surface_shell(state)])
    with_base = add_base_plane(shell, frame, grid_step=state.config.spacing)
    return downsample(with_base, n, method="uniform-random", seed=seed)


def _line_script(rng, cfg: ClayConfig, frame: StageFrame) -> list[GraspAction]:
    cx, cy = frame.center
    z = frame.surface_z + cfg.height / 2
    xs = [0.0, -0.015, 0.015, -0.028, 0.028, -0.038, 0.038]
    widths = [0.022, 0.018, 0.018, 0.015, 0.015, 0.014, 0.014]
    actions = []
    for x, w in zip(xs, widths):
        actions.append(
            GraspAction(
                x=cx + x + rng.uniform(-0.0015, 0.0015),
                y=cy + rng.uniform(-0.001, 0.001),
                z=z,
                rot=float(np.mod(rng.uniform(-0.02, 0.02), np.pi)),
                width=w + rng.uniform(-0.001, 0.001),
            )
        )
    return actions


def _x_script(rng, cfg: ClayConfig, frame: StageFrame) -> list[GraspAction]:
    cx, cy = frame.center
    z = frame.surface_z + cfg.height / 2
    actions = []
    for rot_base, offsets in ((np.pi / 4, (-0.018, 0.018)), (3 * np.pi / 4, (-0.018, 0.018))):
        along = np.array([np.cos(rot_base), np.sin(rot_base)])
        for s in offsets:
            actions.append(
                GraspAction(
                    x=cx + s * along[0] + rng.uniform(-0.0015, 0.0015),
                    y=cy + s * along[1] + rng.uniform(-0.0015, 0.0015),
                    z=z,
                    rot=float(np.mod(rot_base + rng.uniform(-0.02, 0.02), np.pi)),
                    width=0.022 + rng.uniform(-0.001, 0.001),
                )
            )
    return actions


def _cone_script(rng, cfg: ClayConfig, frame: StageFrame) -> list[GraspAction]:
    cx, cy = frame.center
    actions = []
    n_ring = 5
    for i in range(n_ring):
        rot = np.mod(i * np.pi / n_ring + rng.uniform(-0.02, 0.02), np.pi)
        actions.append(
            GraspAction(
                x=cx + rng.uniform(-0.001, 0.001),
                y=cy + rng.uniform(-0.001, 0.001),
                z=frame.surface_z + cfg.height * 0.75,
                rot=float(rot),
                width=0.034 + rng.uniform(-0.001, 0.001),
            )
        )
    for i in range(n_ring):
        rot = np.mod(i * np.pi / n_ring + np.pi / (2 * n_ring) + rng.uniform(-0.02, 0.02), np.pi)
        actions.append(
            GraspAction(
                x=cx + rng.uniform(-0.001, 0.001),
                y=cy + rng.uniform(-0.001, 0.001),
                z=frame.surface_z + cfg.height * 0.95,
                rot=float(rot),
                width=0.026 + rng.uniform(-0.001, 0.001),
            )
        )
    return actions


_SCRIPTS = {"Line": _line_script, "X": _x_script, "Cone": _cone_script}


def scripted_demo(
    goal_recipe: str,
    frame: StageFrame,
    seed: int = 0,
    config: ClayConfig | None = None,
    cloud_size: int = 2048,
) -> Trajectory:
    """Run a hand-authored grasp script and package it as a demonstration.

    The goal cloud is the final observation, so scripted demos are complete
    (goal, states, actions) training items without a human in the loop.
    """
    if goal_recipe not in _SCRIPTS:
        raise ValueError(f"unknown shape {goal_recipe!r}; expected one of {SHAPE_NAMES}")
    cfg = config or ClayConfig()
    rng = np.random.default_rng(seed)
    state = init(cfg, frame, seed=seed)
    actions = _SCRIPTS[goal_recipe](rng, cfg, frame)
    states = [observe(state, cloud_size, frame, seed=seed)]
    for i, action in enumerate(actions):
        state = apply_grasp(state, action)
        states.append(observe(state, cloud_size, frame, seed=seed + i + 1))
    traj = Trajectory(goal=states[-1].copy(), states=states, actions=actions,
                      shape_label=goal_recipe)
    traj.validate(cloud_size=cloud_size)
    return traj
