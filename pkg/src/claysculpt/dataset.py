"""Trajectories, on-disk demonstration storage, rotation augmentation, splits.

A demonstration lives on disk as one directory holding `manifest.json`, one
SDPC file per state cloud and one for the goal. Rotation-augmented copies are
grouped under their source demo's directory so train/val membership can be
audited by provenance.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PointCloud, StageFrame, load_sdpc, rotate_z, save_sdpc

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
ACTION_DIM = 5


@dataclass
class Workspace:
    """Axis-aligned reachable box for grasp centers, plus the width limit."""

    x: tuple[float, float] = (-0.08, 0.08)
    y: tuple[float, float] = (-0.08, 0.08)
    z: tuple[float, float] = (0.0, 0.12)
    width_max: float = 0.08

    def contains(self, action: "GraspAction") -> bool:
        return (
            self.x[0] <= action.x <= self.x[1]
            and self.y[0] <= action.y <= self.y[1]
            and self.z[0] <= action.z <= self.z[1]
            and 0.0 < action.width <= self.width_max
        )


@dataclass
class GraspAction:
    """One parameterized parallel-jaw squeeze.

    (x, y, z) locate the grasp center in the stage frame, `rot` is the
    gripper rotation about z in [0, pi) (a parallel jaw is symmetric under a
    half turn), and `width` is the final fingertip separation.
    """

    x: float
    y: float
    z: float
    rot: float
    width: float

    def __post_init__(self):
        vals = [self.x, self.y, self.z, self.rot, self.width]
        if not all(np.isfinite(vals)):
            raise ValueError("action fields must be finite")
        if not 0.0 <= self.rot < np.pi:
            raise ValueError(f"rot must lie in [0, pi), got {self.rot}")
        if self.width <= 0.0:
            raise ValueError("width must be > 0")

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.rot, self.width], dtype=np.float64)

    @classmethod
    def from_vector(cls, v) -> "GraspAction":
        v = np.asarray(v, dtype=np.float64)
        return cls(float(v[0]), float(v[1]), float(v[2]), float(v[3]), float(v[4]))

    def rotated(self, angle: float, center: tuple[float, float]) -> "GraspAction":
        """Grasp pose rotated rigidly about the vertical stage axis."""
        c, s = np.cos(angle), np.sin(angle)
        dx, dy = self.x - center[0], self.y - center[1]
        return GraspAction(
            x=c * dx - s * dy + center[0],
            y=s * dx + c * dy + center[1],
            z=self.z,
            rot=float(np.mod(self.rot + angle, np.pi)),
            width=self.width,
        )


@dataclass
class Trajectory:
    """Goal cloud plus the alternating states/actions of one demonstration."""

    goal: PointCloud
    states: list[PointCloud]
    actions: list[GraspAction]
    shape_label: str = ""

    def validate(self, cloud_size: int | None = None) -> None:
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(
                f"states must equal actions + 1, got {len(self.states)} states "
                f"and {len(self.actions)} actions"
            )
        sizes = {len(s) for s in self.states} | {len(self.goal)}
        if len(sizes) != 1:
            raise ValueError(f"states and goal must share one cloud size, got {sizes}")
        if cloud_size is not None and sizes != {cloud_size}:
            raise ValueError(
                f"clouds must have exactly {cloud_size} points, got {sizes.pop()}"
            )

    @property
    def n_grasps(self) -> int:
        return len(self.actions)


@dataclass
class DatasetSplit:
    """Raw-demo train/val partition; augmentation happens per side afterwards."""

    train: list[Trajectory]
    val: list[Trajectory]
    seed: int
    train_ids: list[int] = field(default_factory=list)
    val_ids: list[int] = field(default_factory=list)


def augment_rotations(demo: Trajectory, increment: float, frame: StageFrame) -> list[Trajectory]:
    """All whole-turn rotated copies of a demonstration.

    Copy k has every cloud rotated by k*increment about the stage axis and
    every action pose rotated identically (gripper rot wraps modulo pi).
    `increment` must divide a full turn.
    """
    if increment <= 0:
        raise ValueError("increment must be > 0")
    turns = 2.0 * np.pi / increment
    n = int(round(turns))
    if n < 1 or abs(turns - n) > 1e-9 * max(1.0, turns):
        raise ValueError(f"increment {increment} does not divide a full turn")
    out = []
    for k in range(n):
        angle = k * increment
        if k == 0:
            out.append(
                Trajectory(
                    goal=demo.goal.copy(),
                    states=[s.copy() for s in demo.states],
                    actions=list(demo.actions),
                    shape_label=demo.shape_label,
                )
            )
            continue
        out.append(
            Trajectory(
                goal=rotate_z(demo.goal, angle, frame.center),
                states=[rotate_z(s, angle, frame.center) for s in demo.states],
                actions=[a.rotated(angle, frame.center) for a in demo.actions],
                shape_label=demo.shape_label,
            )
        )
    return out


def split(demos: list[Trajectory], train_fraction: float, seed: int) -> DatasetSplit:
    """Seeded raw-demo partition, applied before any augmentation."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if len(demos) < 2:
        raise ValueError("need at least 2 demos to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(demos))
    n_train = int(round(len(demos) * train_fraction))
    n_train = min(max(n_train, 1), len(demos) - 1)
    train_ids = sorted(int(i) for i in order[:n_train])
    val_ids = sorted(int(i) for i in order[n_train:])
    return DatasetSplit(
        train=[demos[i] for i in train_ids],
        val=[demos[i] for i in val_ids],
        seed=seed,
        train_ids=train_ids,
        val_ids=val_ids,
    )


def save(traj: Trajectory, path) -> Path:
    """Write a trajectory directory (manifest + SDPC clouds); returns the manifest path."""
    traj.validate()
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    state_names = [f"s_{i:03d}.sdpc" for i in range(len(traj.states))]
    for name, state in zip(state_names, traj.states):
        save_sdpc(state, root / name)
    save_sdpc(traj.goal, root / "goal.sdpc")
    manifest = {
        "shape": traj.shape_label,
        "actions": [[float(np.float32(v)) for v in a.as_vector()] for a in traj.actions],
        "states": state_names,
        "goal": "goal.sdpc",
        "version": MANIFEST_VERSION,
    }
    manifest_path = root / "manifest.json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest_path


def load(path) -> Trajectory:
    """Load a trajectory from its directory or manifest path."""
    p = Path(path)
    manifest_path = p / "manifest.json" if p.is_dir() else p
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {version!r}")
    root = manifest_path.parent
    for key in ("shape", "actions", "states", "goal"):
        if key not in manifest:
            raise ValueError(f"manifest missing field {key!r}")
    states = [load_sdpc(root / name) for name in manifest["states"]]
    goal = load_sdpc(root / manifest["goal"])
    actions = [GraspAction.from_vector(v) for v in manifest["actions"]]
    traj = Trajectory(goal=goal, states=states, actions=actions, shape_label=manifest["shape"])
    traj.validate()
    return traj


@dataclass
class ActionStats:
    """Per-dimension min/max of the 5-D action over a training set."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_actions(cls, actions: list[GraspAction]) -> "ActionStats":
        mat = np.stack([a.as_vector() for a in actions])
        return cls(lo=mat.min(axis=0), hi=mat.max(axis=0))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionStats":
        return cls(lo=np.asarray(d["lo"], dtype=np.float64), hi=np.asarray(d["hi"], dtype=np.float64))


def normalize_actions(actions: list[GraspAction], stats: ActionStats) -> np.ndarray:
    """Affine map of each action dimension onto [-1, 1].

    Dimensions with no spread in the stats collapse to 0 and emit a warning.
    """
    mat = np.stack([a.as_vector() for a in actions])
    return normalize_vectors(mat, stats)


def normalize_vectors(mat: np.ndarray, stats: ActionStats) -> np.ndarray:
    span = stats.hi - stats.lo
    degenerate = span <= 0
    if degenerate.any():
        warnings.warn(
            f"degenerate action dimensions {np.flatnonzero(degenerate).tolist()} map to 0",
            stacklevel=2,
        )
    safe = np.where(degenerate, 1.0, span)
    out = 2.0 * (mat - stats.lo) / safe - 1.0
    out[..., degenerate] = 0.0
    return out


def denormalize_vectors(mat: np.ndarray, stats: ActionStats) -> np.ndarray:
    """Inverse of `normalize_vectors`; degenerate dimensions return their min."""
    span = stats.hi - stats.lo
    degenerate = span <= 0
    out = (np.asarray(mat, dtype=np.float64) + 1.0) / 2.0 * span + stats.lo
    if degenerate.any():
        out[..., degenerate] = stats.lo[degenerate]
    return out


def denormalize_actions(mat: np.ndarray, stats: ActionStats) -> list[GraspAction]:
    vecs = denormalize_vectors(mat, stats)
    out = []
    for v in np.atleast_2d(vecs):
        v = v.copy()
        v[3] = np.mod(v[3], np.pi)
        v[4] = max(v[4], 1e-6)
        out.append(GraspAction.from_vector(v))
    return out
