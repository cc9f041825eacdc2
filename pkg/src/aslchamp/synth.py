"""Synthetic sign generator.

Hand-authored parametric templates stand in for the unpublished recordings.
They are not claimed to be citation-form ASL; they preserve the contrasts the
recognizer has to care about: one-handed vs two-handed signs, a stationary
base hand under a moving dominant hand, distinct handshapes, and the rotation
direction of circular movements (COFFEE vs the COFFEE_REVERSED control class).

Coordinates are headset-local: x to the signer's right, y up, z forward.
Templates are authored right-hand-dominant; left-handed productions are made
by mirroring the finished sample across the sagittal plane.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import gesture
from .gesture import (
    GestureDataset,
    GestureSample,
    HandFrame,
    JointFrame,
    NUM_JOINTS,
    SignClass,
    mirror_handedness,
    require_valid,
    register_control_class,
)

TEMPLATE_MAGIC = "ASLCHAMP-TPL"
TEMPLATE_VERSION = 1

COFFEE_REVERSED = register_control_class("COFFEE_REVERSED")


class InvalidTemplate(ValueError):
    pass


class MissingTemplate(KeyError):
    pass


# ---------------------------------------------------------------------------
# Parametric paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathSpec:
    """Closed-form 3-D curve over normalized time u in [0, 1].

    kinds:
      point     -- stationary at origin
      circle    -- origin + radius*(cos(th)*axis_u + sin(th)*axis_v),
                   th = 2*pi*turns*u + phase; negative turns reverse direction
      polyline  -- piecewise-linear through waypoints, uniform in u
      taps      -- origin + axis_u*radius*|sin(pi*taps*u)|: `taps` bounces
    """

    kind: str
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis_u: tuple[float, float, float] = (1.0, 0.0, 0.0)
    axis_v: tuple[float, float, float] = (0.0, 0.0, 1.0)
    radius: float = 0.0
    turns: float = 1.0
    phase_deg: float = 0.0
    waypoints: tuple[tuple[float, float, float], ...] = ()
    taps: int = 1

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        origin = np.asarray(self.origin)
        if self.kind == "point":
            return np.tile(origin, (u.size, 1))
        if self.kind == "circle":
            th = 2.0 * math.pi * self.turns * u + math.radians(self.phase_deg)
            return (origin[None, :]
                    + self.radius * np.cos(th)[:, None] * np.asarray(self.axis_u)[None, :]
                    + self.radius * np.sin(th)[:, None] * np.asarray(self.axis_v)[None, :])
        if self.kind == "polyline":
            pts = np.asarray(self.waypoints, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[0] < 2:
                raise InvalidTemplate("polyline needs at least two waypoints")
            seg = u * (pts.shape[0] - 1)
            idx = np.clip(seg.astype(int), 0, pts.shape[0] - 2)
            frac = (seg - idx)[:, None]
            return pts[idx] * (1.0 - frac) + pts[idx + 1] * frac
        if self.kind == "taps":
            s = np.abs(np.sin(math.pi * self.taps * u))
            return origin[None, :] + self.radius * s[:, None] * np.asarray(self.axis_u)[None, :]
        raise InvalidTemplate(f"unknown path kind {self.kind!r}")

    def to_obj(self) -> dict:
        return {
            "kind": self.kind, "origin": list(self.origin),
            "axis_u": list(self.axis_u), "axis_v": list(self.axis_v),
            "radius": self.radius, "turns": self.turns, "phase_deg": self.phase_deg,
            "waypoints": [list(w) for w in self.waypoints], "taps": self.taps,
        }

    @staticmethod
    def from_obj(obj: dict) -> "PathSpec":
        return PathSpec(
            kind=obj["kind"], origin=tuple(obj["origin"]),
            axis_u=tuple(obj["axis_u"]), axis_v=tuple(obj["axis_v"]),
            radius=obj["radius"], turns=obj["turns"], phase_deg=obj["phase_deg"],
            waypoints=tuple(tuple(w) for w in obj["waypoints"]), taps=obj["taps"],
        )


# ---------------------------------------------------------------------------
# Handshapes: 25-joint offsets relative to the wrist (joint 0 stays at zero)
# ---------------------------------------------------------------------------

_FINGER_X = (-0.045, -0.02, 0.0, 0.02, 0.04)  # thumb .. pinky lateral spread
_SEGMENT_LEN = (0.035, 0.03, 0.025, 0.02)


def _hand_geometry(curls: tuple[float, float, float, float, float]):
    """Offsets (25, 3) and finger-curl rotations (25, 3) for given curls.

    Joint 0 is the wrist, joints 1-4 palm/metacarpal markers, joints 5-24 are
    five fingers with four joints each.  Curl 0 extends a finger along +z,
    curl 1 wraps it toward the palm.
    """
    offsets = np.zeros((NUM_JOINTS, 3))
    rotations = np.zeros((NUM_JOINTS, 3))
    offsets[1] = (0.0, 0.005, 0.04)  # palm center
    offsets[2] = (-0.03, 0.0, 0.03)
    offsets[3] = (0.0, 0.0, 0.05)
    offsets[4] = (0.03, 0.0, 0.03)
    for finger in range(5):
        base = np.array([_FINGER_X[finger], 0.0, 0.07])
        angle = 0.0
        pos = base.copy()
        for seg in range(4):
            j = 5 + finger * 4 + seg
            angle += curls[finger] * math.radians(38.0)
            step = _SEGMENT_LEN[seg]
            pos = pos + step * np.array([0.0, -math.sin(angle), math.cos(angle)])
            offsets[j] = pos
            rotations[j] = (math.degrees(angle), 0.0, 0.0)
    return offsets, rotations


HANDSHAPES: dict[str, tuple[np.ndarray, np.ndarray]] = {
    "open": _hand_geometry((0.15, 0.0, 0.0, 0.0, 0.0)),
    "fist": _hand_geometry((0.8, 1.0, 1.0, 1.0, 1.0)),
    "pinch": _hand_geometry((0.55, 0.65, 0.12, 0.12, 0.12)),
    "c_shape": _hand_geometry((0.45, 0.5, 0.5, 0.5, 0.5)),
    "claw": _hand_geometry((0.4, 0.62, 0.62, 0.62, 0.62)),
    "flat_o": _hand_geometry((0.7, 0.6, 0.6, 0.6, 0.6)),
}

PoseKeys = tuple[tuple[float, str], ...]
RotationKeys = tuple[tuple[float, tuple[float, float, float]], ...]


def _interp_keys(keys, u: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Linear interpolation over (u_key, value) pairs; values stacked per key."""
    us = np.array([k for k, _ in keys])
    if len(keys) == 1:
        return np.tile(values[0], (u.size,) + (1,) * (values.ndim - 1))
    idx = np.clip(np.searchsorted(us, u, side="right") - 1, 0, len(keys) - 2)
    lo = us[idx]
    hi = us[idx + 1]
    frac = np.where(hi > lo, (u - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    shape = (u.size,) + (1,) * (values.ndim - 1)
    return values[idx] * (1.0 - frac.reshape(shape)) + values[idx + 1] * frac.reshape(shape)


def _pose_arrays(keys: PoseKeys, u: np.ndarray):
    offs = np.stack([HANDSHAPES[name][0] for _, name in keys])
    rots = np.stack([HANDSHAPES[name][1] for _, name in keys])
    return _interp_keys(keys, u, offs), _interp_keys(keys, u, rots)


def _rotation_array(keys: RotationKeys, u: np.ndarray) -> np.ndarray:
    vals = np.array([v for _, v in keys], dtype=np.float64)
    return _interp_keys(keys, u, vals)


def wrap_degrees(a: np.ndarray) -> np.ndarray:
    """Wrap angles into [-180, 180)."""
    return (a + 180.0) % 360.0 - 180.0


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignTemplate:
    sign: SignClass
    dominant_path: PathSpec
    nondominant_path: PathSpec | None
    dominant_pose_keys: PoseKeys
    nondominant_pose_keys: PoseKeys
    dominant_rotation: RotationKeys
    nondominant_rotation: RotationKeys
    two_handed: bool = True

    def validate(self):
        if self.two_handed != (self.nondominant_path is not None):
            raise InvalidTemplate(f"{self.sign.name}: two_handed flag inconsistent")
        for keys in (self.dominant_pose_keys, self.nondominant_pose_keys):
            if not keys:
                raise InvalidTemplate(f"{self.sign.name}: empty pose keys")
            us = [k for k, _ in keys]
            if us != sorted(us) or us[0] != 0.0 or us[-1] != 1.0:
                raise InvalidTemplate(f"{self.sign.name}: pose keys must cover u in [0,1]")
            for _, name in keys:
                if name not in HANDSHAPES:
                    raise InvalidTemplate(f"{self.sign.name}: unknown handshape {name!r}")
        for keys in (self.dominant_rotation, self.nondominant_rotation):
            if not keys:
                raise InvalidTemplate(f"{self.sign.name}: empty rotation keys")


def _still(name: str) -> PoseKeys:
    return ((0.0, name), (1.0, name))


def _rot(pyr: tuple[float, float, float]) -> RotationKeys:
    return ((0.0, pyr), (1.0, pyr))


def default_templates() -> dict[str, SignTemplate]:
    """The built-in template library: nine signs plus the reversed control."""
    t: dict[str, SignTemplate] = {}

    def add(sign, **kw):
        tpl = SignTemplate(sign=sign, **kw)
        tpl.validate()
        t[sign.name] = tpl

    # Dominant fist grinds in a horizontal circle over a stationary base fist.
    add(gesture.COFFEE,
        dominant_path=PathSpec("circle", origin=(0.03, -0.38, 0.35),
                               axis_u=(1, 0, 0), axis_v=(0, 0, 1), radius=0.045, turns=2.0),
        nondominant_path=PathSpec("point", origin=(-0.03, -0.45, 0.35)),
        dominant_pose_keys=_still("fist"),
        nondominant_pose_keys=_still("fist"),
        dominant_rotation=_rot((-20.0, 0.0, 85.0)),
        nondominant_rotation=_rot((-15.0, 0.0, -85.0)))

    # Control class: the same movement with the rotation direction flipped.
    add(COFFEE_REVERSED,
        **{**_template_kwargs(t["COFFEE"]),
           "dominant_path": replace(t["COFFEE"].dominant_path, turns=-2.0)})

    # Small stirring circle with a pinch over a C-shaped base.
    add(gesture.TEA,
        dominant_path=PathSpec("circle", origin=(0.0, -0.31, 0.35),
                               axis_u=(1, 0, 0), axis_v=(0, 0, 1), radius=0.02, turns=3.0),
        nondominant_path=PathSpec("point", origin=(-0.04, -0.42, 0.35)),
        dominant_pose_keys=_still("pinch"),
        nondominant_pose_keys=_still("c_shape"),
        dominant_rotation=_rot((-40.0, 10.0, 20.0)),
        nondominant_rotation=_rot((0.0, 30.0, -90.0)))

    # One-handed: fist squeezes open and shut while bobbing.
    add(gesture.MILK,
        dominant_path=PathSpec("taps", origin=(0.10, -0.35, 0.32),
                               axis_u=(0, -1, 0), radius=0.03, taps=3),
        nondominant_path=None, two_handed=False,
        dominant_pose_keys=((0.0, "open"), (0.2, "fist"), (0.4, "open"),
                            (0.6, "fist"), (0.8, "open"), (1.0, "fist")),
        nondominant_pose_keys=_still("open"),
        dominant_rotation=_rot((0.0, -20.0, 10.0)),
        nondominant_rotation=_rot((0.0, 0.0, 0.0)))

    # Wide sweeping circle with a C-hand over an open palm, wobbling roll.
    add(gesture.WHIPPED_CREAM,
        dominant_path=PathSpec("circle", origin=(0.0, -0.36, 0.38),
                               axis_u=(1, 0, 0), axis_v=(0, 0, 1), radius=0.055, turns=2.0),
        nondominant_path=PathSpec("point", origin=(-0.05, -0.45, 0.38)),
        dominant_pose_keys=((0.0, "c_shape"), (0.5, "flat_o"), (1.0, "c_shape")),
        nondominant_pose_keys=_still("open"),
        dominant_rotation=((0.0, (-30.0, 0.0, -25.0)), (0.5, (-30.0, 0.0, 25.0)),
                           (1.0, (-30.0, 0.0, -25.0))),
        nondominant_rotation=_rot((0.0, 0.0, 150.0)))

    # Clawed hand twisting in place on an open palm.
    add(gesture.COOKIE,
        dominant_path=PathSpec("taps", origin=(-0.02, -0.385, 0.37),
                               axis_u=(0, -1, 0), radius=0.02, taps=2),
        nondominant_path=PathSpec("point", origin=(-0.05, -0.44, 0.37)),
        dominant_pose_keys=_still("claw"),
        nondominant_pose_keys=_still("open"),
        dominant_rotation=((0.0, (-70.0, -45.0, 0.0)), (0.25, (-70.0, 45.0, 0.0)),
                           (0.5, (-70.0, -45.0, 0.0)), (0.75, (-70.0, 45.0, 0.0)),
                           (1.0, (-70.0, -45.0, 0.0))),
        nondominant_rotation=_rot((0.0, 0.0, 150.0)))

    # Flat-O hand rises twice from the base palm.
    add(gesture.MUFFIN,
        dominant_path=PathSpec("polyline", waypoints=((0.0, -0.43, 0.36), (0.0, -0.29, 0.36),
                                                      (0.0, -0.43, 0.36), (0.0, -0.29, 0.36))),
        nondominant_path=PathSpec("point", origin=(-0.05, -0.455, 0.36)),
        dominant_pose_keys=((0.0, "flat_o"), (0.5, "open"), (1.0, "flat_o")),
        nondominant_pose_keys=_still("open"),
        dominant_rotation=_rot((20.0, 0.0, 0.0)),
        nondominant_rotation=_rot((0.0, 0.0, 150.0)))

    # C-hand drops onto the palm twice.
    add(gesture.CUP,
        dominant_path=PathSpec("taps", origin=(0.02, -0.36, 0.36),
                               axis_u=(0, -1, 0), radius=0.06, taps=2),
        nondominant_path=PathSpec("point", origin=(-0.05, -0.46, 0.36)),
        dominant_pose_keys=_still("c_shape"),
        nondominant_pose_keys=_still("open"),
        dominant_rotation=_rot((0.0, 0.0, -90.0)),
        nondominant_rotation=_rot((0.0, 0.0, 150.0)))

    # Pinch circling tightly near the mouth over a base fist (COFFEE's cousin).
    add(gesture.STRAW,
        dominant_path=PathSpec("circle", origin=(0.02, -0.18, 0.30),
                               axis_u=(0, 1, 0), axis_v=(0, 0, 1), radius=0.018, turns=2.0),
        nondominant_path=PathSpec("point", origin=(-0.03, -0.44, 0.35)),
        dominant_pose_keys=_still("pinch"),
        nondominant_pose_keys=_still("fist"),
        dominant_rotation=_rot((-60.0, 0.0, 60.0)),
        nondominant_rotation=_rot((-15.0, 0.0, -85.0)))

    # Flat-O taps onto the upturned palm.
    add(gesture.MONEY,
        dominant_path=PathSpec("taps", origin=(0.0, -0.40, 0.36),
                               axis_u=(0, -1, 0), radius=0.05, taps=3),
        nondominant_path=PathSpec("point", origin=(-0.05, -0.46, 0.36)),
        dominant_pose_keys=_still("flat_o"),
        nondominant_pose_keys=_still("open"),
        dominant_rotation=_rot((55.0, 0.0, 35.0)),
        nondominant_rotation=_rot((0.0, 0.0, 150.0)))

    return t


def _template_kwargs(tpl: SignTemplate) -> dict:
    return {
        "dominant_path": tpl.dominant_path,
        "nondominant_path": tpl.nondominant_path,
        "dominant_pose_keys": tpl.dominant_pose_keys,
        "nondominant_pose_keys": tpl.nondominant_pose_keys,
        "dominant_rotation": tpl.dominant_rotation,
        "nondominant_rotation": tpl.nondominant_rotation,
        "two_handed": tpl.two_handed,
    }


# ---------------------------------------------------------------------------
# Profiles and dataset specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignerProfile:
    handedness: str = "right"
    speed_factor: float = 1.0
    spatial_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation_jitter_deg: float = 0.0
    noise_std_m: float = 0.0
    seed: int = 0
    signer_id: str = ""

    def __post_init__(self):
        if self.handedness not in gesture.HANDEDNESS_VALUES:
            raise ValueError(f"bad handedness {self.handedness!r}")
        if not 0.5 <= self.speed_factor <= 2.0:
            raise ValueError(f"speed_factor {self.speed_factor} outside [0.5, 2.0]")
        if self.orientation_jitter_deg < 0 or self.noise_std_m < 0:
            raise ValueError("jitter and noise must be non-negative")


@dataclass(frozen=True)
class DatasetSpec:
    """Composition and variability of a generated dataset.

    The variability fields are the generator's knobs for inter-signer
    differences; the defaults are the 'default variability' used throughout
    the test suite.
    """

    classes: tuple[str, ...] = gesture.CANONICAL_NAMES
    signers: int = 15
    repetitions_per_class: int = 20
    frame_rate_hz: float = gesture.DEFAULT_FRAME_RATE_HZ
    duration_s: float = 3.0
    master_seed: int = 0
    left_handed_fraction: float = 0.2
    speed_range: tuple[float, float] = (0.8, 1.25)
    offset_std_m: float = 0.03
    orientation_jitter_deg: float = 5.0
    noise_std_m: float = 0.004

    def __post_init__(self):
        if self.signers < 1 or self.repetitions_per_class < 1 or not self.classes:
            raise ValueError("counts must be >= 1 and classes non-empty")
        if self.frame_rate_hz * self.duration_s < 2:
            raise ValueError("frame_rate * duration must cover at least 2 frames")
        if not 0.0 <= self.left_handed_fraction <= 1.0:
            raise ValueError("left_handed_fraction must be in [0, 1]")


@dataclass(frozen=True)
class PerturbParams:
    """Perturbation stages; zero/empty values disable a stage.

    time_rescale r divides the duration by r (r=2 halves it); 0 disables.
    """

    time_rescale: float = 0.0
    spatial_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation_jitter_deg: float = 0.0
    noise_std_m: float = 0.0


# ---------------------------------------------------------------------------
# Sample generation
# ---------------------------------------------------------------------------

DURATION_CLAMP_S = (1.0, 6.0)


def _hand_frames(path_pts, pose_offsets, joint_rots, hand_rots):
    for k in range(path_pts.shape[0]):
        yield HandFrame(
            locations=path_pts[k][None, :] + pose_offsets[k],
            rotations=wrap_degrees(joint_rots[k]),
            hand_rotation=wrap_degrees(hand_rots[k]),
        )


def generate_sample(template: SignTemplate, profile: SignerProfile,
                    rng: np.random.Generator,
                    frame_rate_hz: float = gesture.DEFAULT_FRAME_RATE_HZ,
                    duration_s: float = 3.0) -> GestureSample:
    """One labeled production of ``template`` under ``profile`` variability.

    Deterministic given (template, profile, rng state).  Joint 0 of the
    dominant hand follows the template path exactly when offset and noise
    are zero.
    """
    template.validate()
    duration = float(np.clip(duration_s / profile.speed_factor, *DURATION_CLAMP_S))
    n = int(round(frame_rate_hz * duration)) + 1
    timestamps = np.arange(n) / frame_rate_hz
    duration = float(timestamps[-1])
    u = np.arange(n) / (n - 1)

    offset = np.asarray(profile.spatial_offset)
    jitter = profile.orientation_jitter_deg

    def build_hand(path, pose_keys, rot_keys):
        pts = path.evaluate(u) + offset
        rot_offset = rng.normal(0.0, jitter, size=3) if jitter > 0 else np.zeros(3)
        if profile.noise_std_m > 0:
            pts = pts + rng.normal(0.0, profile.noise_std_m, size=(n, 3))
        rot_noise = (rng.normal(0.0, 0.15 * jitter, size=(n, 3))
                     if jitter > 0 else np.zeros((n, 3)))
        pose_offsets, pose_rots = _pose_arrays(pose_keys, u)
        hand_rots = _rotation_array(rot_keys, u) + rot_offset + rot_noise
        joint_rots = hand_rots[:, None, :] + pose_rots
        return pts, pose_offsets, joint_rots, hand_rots

    dom = build_hand(template.dominant_path, template.dominant_pose_keys,
                     template.dominant_rotation)
    right_frames = list(_hand_frames(*dom))
    if template.two_handed:
        nondom = build_hand(template.nondominant_path, template.nondominant_pose_keys,
                            template.nondominant_rotation)
        left_frames = list(_hand_frames(*nondom))
    else:
        left_frames = [HandFrame.absent()] * n

    frames = tuple(
        JointFrame(timestamp_s=float(timestamps[k]), left=left_frames[k], right=right_frames[k])
        for k in range(n)
    )
    sample = GestureSample(
        label=template.sign,
        frames=frames,
        signer_id=profile.signer_id,
        handedness="right",
        duration_s=duration,
    )
    if profile.handedness == "left":
        sample = mirror_handedness(sample)
    return sample


# Seed-derivation streams (SeedSequence entropy prefixes)
_PROFILE_STREAM = 1
_SAMPLE_STREAM = 2


def signer_profiles(spec: DatasetSpec) -> list[SignerProfile]:
    """Deterministic per-signer variability drawn from the master seed."""
    profiles = []
    for i in range(spec.signers):
        rng = np.random.default_rng(np.random.SeedSequence((spec.master_seed,
                                                            _PROFILE_STREAM, i)))
        speed = float(rng.uniform(*spec.speed_range))
        offset = tuple(rng.normal(0.0, spec.offset_std_m, size=3)) \
            if spec.offset_std_m > 0 else (0.0, 0.0, 0.0)
        handed = "left" if rng.random() < spec.left_handed_fraction else "right"
        profiles.append(SignerProfile(
            handedness=handed,
            speed_factor=speed,
            spatial_offset=offset,
            orientation_jitter_deg=spec.orientation_jitter_deg,
            noise_std_m=spec.noise_std_m,
            seed=i,
            signer_id=f"s{i:02d}",
        ))
    return profiles


def generate_dataset(spec: DatasetSpec,
                     templates: dict[str, SignTemplate] | None = None) -> GestureDataset:
    """classes x signers x repetitions samples with exact class balance."""
    if templates is None:
        templates = default_templates()
    classes = []
    for name in spec.classes:
        if name not in templates:
            raise MissingTemplate(name)
        classes.append(templates[name].sign)
    classes.sort()

    profiles = signer_profiles(spec)
    samples = []
    for sc in classes:
        tpl = templates[sc.name]
        for s_idx, profile in enumerate(profiles):
            for rep in range(spec.repetitions_per_class):
                rng = np.random.default_rng(np.random.SeedSequence(
                    (spec.master_seed, _SAMPLE_STREAM, sc.code, s_idx, rep)))
                samples.append(generate_sample(
                    tpl, profile, rng,
                    frame_rate_hz=spec.frame_rate_hz, duration_s=spec.duration_s))
    return GestureDataset(
        samples=tuple(samples),
        schema_version=1,
        provenance=f"synthetic templates v{TEMPLATE_VERSION}, master_seed={spec.master_seed}",
    )


# ---------------------------------------------------------------------------
# Perturbation
# ---------------------------------------------------------------------------


def _resample_sample(sample: GestureSample, factor: float) -> GestureSample:
    old_ts = np.array([f.timestamp_s for f in sample.frames])
    n_old = len(old_ts)
    rate = (n_old - 1) / sample.duration_s if sample.duration_s > 0 else 1.0
    new_duration = sample.duration_s / factor
    n_new = int(round(rate * new_duration)) + 1
    if n_new < 2:
        n_new = 2
    new_ts = np.arange(n_new) / rate
    src_ts = np.clip(new_ts * factor, old_ts[0], old_ts[-1])

    def interp_stack(arrs):
        stacked = np.stack(arrs)  # (n_old, ...)
        flat = stacked.reshape(n_old, -1)
        out = np.empty((n_new, flat.shape[1]))
        for col in range(flat.shape[1]):
            out[:, col] = np.interp(src_ts, old_ts, flat[:, col])
        return out.reshape((n_new,) + stacked.shape[1:])

    new_frames = []
    nearest = np.searchsorted(old_ts, src_ts, side="left")
    nearest = np.clip(nearest, 0, n_old - 1)
    for side in ("left", "right"):
        hands = [getattr(f, side) for f in sample.frames]
        locs = interp_stack([h.locations for h in hands])
        rots = interp_stack([h.rotations for h in hands])
        hrots = interp_stack([h.hand_rotation for h in hands])
        present = [hands[j].present for j in nearest]
        new_frames.append([
            HandFrame(locations=locs[k], rotations=rots[k], hand_rotation=hrots[k],
                      present=present[k])
            for k in range(n_new)
        ])
    frames = tuple(
        JointFrame(timestamp_s=float(new_ts[k]), left=new_frames[0][k], right=new_frames[1][k])
        for k in range(n_new)
    )
    return GestureSample(label=sample.label, frames=frames, signer_id=sample.signer_id,
                         handedness=sample.handedness, duration_s=float(new_ts[-1]))


def perturb(sample: GestureSample, p: PerturbParams,
            rng: np.random.Generator | None = None) -> GestureSample:
    """Apply the enabled perturbation stages; the label is preserved and the
    result validates.  All-zero params return the input unchanged."""
    require_valid(sample)
    stages_random = p.orientation_jitter_deg > 0 or p.noise_std_m > 0
    if stages_random and rng is None:
        raise ValueError("random perturbation stages need an rng")
    offset = np.asarray(p.spatial_offset, dtype=np.float64)
    if p.time_rescale == 0 and not offset.any() and not stages_random:
        return sample

    out = sample
    if p.time_rescale not in (0, 1.0):
        out = _resample_sample(out, p.time_rescale)

    rot_offsets = {}
    for side in ("left", "right"):
        rot_offsets[side] = (rng.normal(0.0, p.orientation_jitter_deg, size=3)
                             if p.orientation_jitter_deg > 0 else np.zeros(3))
    n = len(out.frames)
    noise = {}
    for side in ("left", "right"):
        noise[side] = (rng.normal(0.0, p.noise_std_m, size=(n, 3))
                       if p.noise_std_m > 0 else np.zeros((n, 3)))

    def move_hand(h: HandFrame, side: str, k: int) -> HandFrame:
        if not h.present:
            return h
        loc = h.locations + offset + noise[side][k]
        rot = wrap_degrees(h.rotations + rot_offsets[side])
        hrot = wrap_degrees(h.hand_rotation + rot_offsets[side])
        return HandFrame(locations=loc, rotations=rot, hand_rotation=hrot, present=True)

    frames = tuple(
        JointFrame(timestamp_s=f.timestamp_s,
                   left=move_hand(f.left, "left", k),
                   right=move_hand(f.right, "right", k))
        for k, f in enumerate(out.frames)
    )
    result = GestureSample(label=out.label, frames=frames, signer_id=out.signer_id,
                           handedness=out.handedness, duration_s=out.duration_s)
    require_valid(result)
    return result


# ---------------------------------------------------------------------------
# Template library files
# ---------------------------------------------------------------------------


def _pose_keys_to_obj(keys: PoseKeys):
    return [[u, name] for u, name in keys]


def _rot_keys_to_obj(keys: RotationKeys):
    return [[u, list(v)] for u, v in keys]


def save_template_library(templates: dict[str, SignTemplate], path: str | os.PathLike):
    header = {"magic": TEMPLATE_MAGIC, "version": TEMPLATE_VERSION}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for name in sorted(templates):
            tpl = templates[name]
            obj = {
                "sign": tpl.sign.name,
                "two_handed": tpl.two_handed,
                "dominant_path": tpl.dominant_path.to_obj(),
                "nondominant_path": (tpl.nondominant_path.to_obj()
                                     if tpl.nondominant_path else None),
                "dominant_pose_keys": _pose_keys_to_obj(tpl.dominant_pose_keys),
                "nondominant_pose_keys": _pose_keys_to_obj(tpl.nondominant_pose_keys),
                "dominant_rotation": _rot_keys_to_obj(tpl.dominant_rotation),
                "nondominant_rotation": _rot_keys_to_obj(tpl.nondominant_rotation),
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def load_template_library(path: str | os.PathLike) -> dict[str, SignTemplate]:
    from .dataset_io import FormatError

    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise FormatError(f"bad template header: {e}") from e
        if not isinstance(header, dict) or header.get("magic") != TEMPLATE_MAGIC:
            raise FormatError(f"bad magic: expected {TEMPLATE_MAGIC!r}")
        if header.get("version") != TEMPLATE_VERSION:
            raise FormatError(f"unsupported template version {header.get('version')!r}")
        out: dict[str, SignTemplate] = {}
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            name = obj["sign"]
            try:
                sc = gesture.sign_class(name)
            except KeyError:
                sc = register_control_class(name)
            tpl = SignTemplate(
                sign=sc,
                dominant_path=PathSpec.from_obj(obj["dominant_path"]),
                nondominant_path=(PathSpec.from_obj(obj["nondominant_path"])
                                  if obj["nondominant_path"] else None),
                dominant_pose_keys=tuple((u, n) for u, n in obj["dominant_pose_keys"]),
                nondominant_pose_keys=tuple((u, n) for u, n in obj["nondominant_pose_keys"]),
                dominant_rotation=tuple((u, tuple(v)) for u, v in obj["dominant_rotation"]),
                nondominant_rotation=tuple((u, tuple(v)) for u, v in obj["nondominant_rotation"]),
                two_handed=bool(obj["two_handed"]),
            )
            tpl.validate()
            out[name] = tpl
    return out
