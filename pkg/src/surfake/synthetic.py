"""Analytic scene backend and the labeled synthetic dataset generator.

A scene is an ellipsoid "head" in front of a background plane, viewed
orthographically along -z from +z. The rendered field is the per-pixel
surface normal rotated into a gravity-aligned world frame by a configured
camera-to-world rotation; that is exactly the quantity the pretrained
estimator produces for real images, so this renderer stands in for it in
every desk-scale test.

"Fake" synthetic samples perturb the normal field inside a small disk in
the lower face region (the kind of localized geometry artifact manipulation
leaves around the mouth), then renormalize.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .gsd import GSDMap, SurfaceFrame, encode_gsd
from .ingestion import DatasetManifest, VideoRecord
from .seeding import substream_seed

log = logging.getLogger(__name__)


def rotation_matrix(roll_deg: float, pitch_deg: float, yaw_deg: float) -> np.ndarray:
    """Camera-to-world rotation composed as Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    r, p, y = (math.radians(a) for a in (roll_deg, pitch_deg, yaw_deg))
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]], dtype=np.float64)
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]], dtype=np.float64)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


@dataclass(frozen=True)
class NormalPerturbation:
    """Localized surface bump: the normal field is tilted by the gradient of a
    Gaussian height bump of scale ``radius`` at ``center`` (normalized image
    coords, v grows downward) and renormalized. Positive ``strength`` bulges
    outward; negative dents inward."""

    center: tuple[float, float]
    radius: float
    strength: float


@dataclass(frozen=True)
class SyntheticScene:
    """Ellipsoid over a plane in normalized image coordinates.

    The image plane is x in [-1, 1] (left to right), y in [-1, 1] (bottom to
    top); the camera looks along -z so visible normals have positive z in
    camera coordinates.
    """

    axes: tuple[float, float, float] = (0.55, 0.72, 0.5)
    center: tuple[float, float] = (0.0, 0.0)
    rotation_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)  # roll, pitch, yaw
    plane_normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    perturbation: NormalPerturbation | None = None

    def rotation(self) -> np.ndarray:
        return rotation_matrix(*self.rotation_deg)

    def footprint(self, height: int, width: int) -> np.ndarray:
        """Boolean mask of pixels that hit the ellipsoid."""
        dx, dy = self._offsets(height, width)
        return dx * dx + dy * dy <= 1.0

    def _offsets(self, height: int, width: int):
        ax, ay, _ = self.axes
        cx, cy = self.center
        u = (np.arange(width, dtype=np.float64) + 0.5) / width
        v = (np.arange(height, dtype=np.float64) + 0.5) / height
        x = 2.0 * u - 1.0
        y = 1.0 - 2.0 * v
        dx = (x[None, :] - cx) / ax
        dy = (y[:, None] - cy) / ay
        return np.broadcast_to(dx, (height, width)).copy(), np.broadcast_to(dy, (height, width)).copy()

    def camera_normals(self, height: int, width: int) -> np.ndarray:
        """Per-pixel unit normals in camera coordinates before any rotation."""
        ax, ay, az = self.axes
        dx, dy = self._offsets(height, width)
        r2 = dx * dx + dy * dy
        inside = r2 <= 1.0
        # Implicit gradient on the front half: ((x-cx)/ax^2, (y-cy)/ay^2, sqrt(1-r2)/az)
        nz = np.sqrt(np.clip(1.0 - r2, 0.0, None)) / az
        normals = np.stack([dx / ax, dy / ay, nz], axis=-1)
        plane = np.asarray(self.plane_normal, dtype=np.float64)
        plane = plane / np.linalg.norm(plane)
        normals[~inside] = plane
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
        if self.perturbation is not None:
            normals = _apply_perturbation(normals, self.perturbation)
        return normals

    def render(self, height: int, width: int) -> np.ndarray:
        """World-frame unit-normal field, HxWx3 float64."""
        normals = self.camera_normals(height, width)
        return normals @ self.rotation().T

    def render_shaded(self, height: int, width: int,
                      light=(0.3, 0.4, 0.866), albedo=(0.82, 0.66, 0.55)) -> np.ndarray:
        """Lambertian rendering of the scene as the RGB branch stand-in."""
        normals = self.camera_normals(height, width)
        light = np.asarray(light, dtype=np.float64)
        light = light / np.linalg.norm(light)
        shade = np.clip(normals @ light, 0.0, 1.0)
        inside = self.footprint(height, width)
        rgb = np.empty((height, width, 3), dtype=np.float64)
        rgb[inside] = shade[inside, None] * np.asarray(albedo)
        rgb[~inside] = shade[~inside, None] * 0.35 + 0.15  # dimmer gray backdrop
        return np.clip(rgb * 255.0 + 0.5, 0, 255).astype(np.uint8)


def _apply_perturbation(normals: np.ndarray, pert: NormalPerturbation) -> np.ndarray:
    height, width = normals.shape[:2]
    u = (np.arange(width, dtype=np.float64) + 0.5) / width
    v = (np.arange(height, dtype=np.float64) + 0.5) / height
    du = np.broadcast_to(u[None, :] - pert.center[0], (height, width))
    dv = np.broadcast_to(v[:, None] - pert.center[1], (height, width))
    dist2 = du * du + dv * dv
    # gradient of a Gaussian bump: radial in-plane tilt, zero at the center
    gain = pert.strength * np.exp(-dist2 / (2.0 * pert.radius ** 2)) / pert.radius
    tilt = np.stack([gain * du, gain * (-dv), np.zeros((height, width))], axis=-1)
    out = normals + tilt
    out /= np.linalg.norm(out, axis=-1, keepdims=True)
    return out


def frame_from_normals(normals: np.ndarray) -> SurfaceFrame:
    """Complete a normal field to full orthonormal per-pixel surface frames.

    Tangents come from projecting a fixed reference axis onto each tangent
    plane (switching to a second axis where the normal is nearly parallel to
    it); the bitangent closes the right-handed triple.
    """
    n = np.asarray(normals, dtype=np.float64)
    ref = np.broadcast_to(np.array([1.0, 0.0, 0.0]), n.shape).copy()
    ref[np.abs(n[..., 0]) > 0.9] = np.array([0.0, 1.0, 0.0])
    t = ref - np.sum(ref * n, axis=-1, keepdims=True) * n
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    return SurfaceFrame(normal=n, tangent=t, bitangent=np.cross(n, t))


FLAT_SCENE_AXES = (1e-6, 1e-6, 1e-6)  # degenerate ellipsoid: nothing hits it


def flat_plane_scene(plane_normal=(0.0, 0.0, 1.0), rotation_deg=(0.0, 0.0, 0.0)) -> SyntheticScene:
    """A scene that is all background plane; renders a constant field."""
    return SyntheticScene(axes=FLAT_SCENE_AXES, center=(10.0, 10.0),
                          rotation_deg=rotation_deg, plane_normal=plane_normal)


def scene_from_seed(seed: int) -> SyntheticScene:
    """Deterministic face-like scene: jittered ellipsoid, mild camera tilt."""
    rng = np.random.default_rng(seed)
    axes = (0.52 + 0.06 * rng.uniform(-1, 1),
            0.68 + 0.06 * rng.uniform(-1, 1),
            0.50 + 0.05 * rng.uniform(-1, 1))
    center = (0.08 * rng.uniform(-1, 1), 0.08 * rng.uniform(-1, 1))
    rotation = (12.0 * rng.uniform(-1, 1),
                12.0 * rng.uniform(-1, 1),
                15.0 * rng.uniform(-1, 1))
    tilt = 0.08 * rng.uniform(-1, 1, size=2)
    plane = (float(tilt[0]), float(tilt[1]), 1.0)
    return SyntheticScene(axes=axes, center=center, rotation_deg=rotation, plane_normal=plane)


def perturbation_from_seed(seed: int) -> NormalPerturbation:
    """Lower-face (mouth-region) artifact parameters for a fake sample."""
    rng = np.random.default_rng(seed)
    center = (0.5 + 0.02 * rng.uniform(-1, 1), 0.68 + 0.02 * rng.uniform(-1, 1))
    radius = 0.14 + 0.02 * rng.uniform(-1, 1)
    strength = 0.45 * (1.0 + 0.2 * rng.uniform(-1, 1))
    return NormalPerturbation(center=center, radius=radius, strength=strength)


def scene_pair_from_seed(seed: int) -> tuple[SyntheticScene, SyntheticScene]:
    """A pristine scene and its manipulated twin (same geometry + perturbation)."""
    real = scene_from_seed(seed)
    fake = replace(real, perturbation=perturbation_from_seed(substream_seed(seed, "perturb")))
    return real, fake


class SyntheticEstimator:
    """Descriptor backend that renders its configured scene analytically.

    The input image only sets the output resolution; pixel values are
    ignored. Identical scene (seed) and resolution give bit-identical
    output, which is what the desk-scale determinism checks rely on.
    """

    def __init__(self, scene: SyntheticScene, backend_id: str = "synthetic"):
        self.scene = scene
        self.backend_id = backend_id

    @classmethod
    def from_seed(cls, seed: int) -> "SyntheticEstimator":
        return cls(scene_from_seed(seed), backend_id=f"synthetic:{seed}")

    def infer(self, image: np.ndarray) -> np.ndarray:
        h, w = np.asarray(image).shape[:2]
        return self.scene.render(h, w)

    def render_map(self, height: int, width: int) -> GSDMap:
        return GSDMap(self.scene.render(height, width), backend_id=self.backend_id)


# --- desk-scale dataset ------------------------------------------------------

@dataclass
class SyntheticSample:
    video_id: str
    label: str
    forgery: str
    source_video_id: str
    gsd_image: np.ndarray  # HxWx3 uint8 (encoded descriptor)
    rgb_image: np.ndarray  # HxWx3 uint8 (shaded rendering)


def generate_dataset(n_real: int = 200, n_fake: int = 200, seed: int = 0,
                     size: int = 224, forgery: str = "NT"):
    """Labeled synthetic dataset of encoded-descriptor / RGB image pairs.

    Fake i reuses the scene of real i plus a lower-face normal perturbation,
    mirroring how each FF++ forgery derives from a pristine source video.
    Returns (manifest, samples); manifest paths are placeholders since the
    samples live in memory.
    """
    if n_fake > n_real:
        raise ValueError(f"n_fake ({n_fake}) cannot exceed n_real ({n_real})")
    records = []
    samples = []
    for i in range(n_real):
        scene_seed = substream_seed(seed, f"scene:{i}")
        real_scene, fake_scene = scene_pair_from_seed(scene_seed)
        vid = f"{i:03d}"
        records.append(VideoRecord(vid, Path(f"{vid}.synthetic"), "real", "none", vid))
        samples.append(SyntheticSample(
            video_id=vid, label="real", forgery="none", source_video_id=vid,
            gsd_image=encode_gsd(GSDMap(real_scene.render(size, size))).image,
            rgb_image=real_scene.render_shaded(size, size),
        ))
        if i < n_fake:
            fid = f"{forgery}_{vid}"
            records.append(VideoRecord(fid, Path(f"{fid}.synthetic"), "fake", forgery, vid))
            samples.append(SyntheticSample(
                video_id=fid, label="fake", forgery=forgery, source_video_id=vid,
                gsd_image=encode_gsd(GSDMap(fake_scene.render(size, size))).image,
                rgb_image=fake_scene.render_shaded(size, size),
            ))
    manifest = DatasetManifest(records, root=Path("synthetic"))
    return manifest, samples
