"""Procedural RGB-D video with exact ground-truth depth and optical flow.

Scenes are raycast pinhole views of textured rigid primitives (an infinite
background plane plus moving spheres). Because every primitive moves rigidly
and is raycast analytically, the per-pixel flow between frames is exact and
occlusion can be decided by re-raycasting the target frame, with no
approximation anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow_ops import FlowField


@dataclass
class DepthFrame:
    """Dense depth map in meters with a validity mask."""

    depth: np.ndarray  # [H,W] float64, meters
    valid: np.ndarray = field(default=None)  # [H,W] bool

    def __post_init__(self):
        self.depth = np.ascontiguousarray(self.depth, dtype=np.float64)
        if self.valid is None:
            self.valid = np.isfinite(self.depth) & (self.depth > 0)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.depth.shape:
            raise ValueError("valid mask shape does not match depth")


@dataclass
class Camera:
    """Pinhole camera; intrinsics derived from a horizontal FOV in degrees."""

    width: int
    height: int
    hfov_deg: float

    def __post_init__(self):
        if not 0.0 < self.hfov_deg < 180.0:
            raise ValueError(f"degenerate camera FOV {self.hfov_deg}")
        self.fx = (self.width / 2.0) / np.tan(np.deg2rad(self.hfov_deg) / 2.0)
        self.fy = self.fx
        self.cx = (self.width - 1) / 2.0
        self.cy = (self.height - 1) / 2.0

    def ray_dirs(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Unnormalized ray directions (x, y, 1) so depth == ray parameter."""
        px = (np.asarray(u, dtype=np.float64) - self.cx) / self.fx
        py = (np.asarray(v, dtype=np.float64) - self.cy) / self.fy
        return np.stack([px, py, np.ones_like(px)], axis=-1)

    def project(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Project camera-frame points [...,3]; returns (u, v, z)."""
        z = p[..., 2]
        safe = np.where(np.abs(z) > 1e-12, z, 1e-12)
        u = self.fx * p[..., 0] / safe + self.cx
        v = self.fy * p[..., 1] / safe + self.cy
        return u, v, z


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.eye(3)
    x, y, z = axis / n
    K = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def _orthonormal_tangents(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(ref, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


class Plane:
    """Infinite textured plane translating rigidly (no rotation)."""

    def __init__(self, point, normal, velocity=(0, 0, 0), tex=None):
        self.c0 = np.asarray(point, dtype=np.float64)
        n = np.asarray(normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)
        self.vel = np.asarray(velocity, dtype=np.float64)
        self.e1, self.e2 = _orthonormal_tangents(self.normal)
        self.tex = tex or {"freq": (2.0, 3.0), "phase": (0.0, 1.0, 2.0), "base": (0.5, 0.5, 0.5), "amp": 0.4}

    def pose(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return np.eye(3), self.c0 + self.vel * t

    def intersect(self, dirs: np.ndarray, t: float) -> np.ndarray:
        _, c = self.pose(t)
        denom = dirs @ self.normal
        num = float(self.normal @ c)
        with np.errstate(divide="ignore", invalid="ignore"):
            th = num / denom
        th = np.where((np.abs(denom) > 1e-12) & (th > 1e-6), th, np.inf)
        return th

    def material_coords(self, p: np.ndarray, t: float) -> np.ndarray:
        _, c = self.pose(t)
        return p - c

    def world_point(self, m: np.ndarray, t: float) -> np.ndarray:
        _, c = self.pose(t)
        return m + c

    def color(self, m: np.ndarray) -> np.ndarray:
        a = m @ self.e1
        b = m @ self.e2
        f1, f2 = self.tex["freq"]
        out = []
        for k in range(3):
            ph = self.tex["phase"][k]
            base = self.tex["base"][k]
            out.append(base + self.tex["amp"] * np.sin(f1 * a + ph) * np.cos(f2 * b + 0.7 * ph + 0.3))
        return np.clip(np.stack(out, axis=0), 0.0, 1.0)


class Sphere:
    """Textured sphere with sinusoidal translation and constant spin."""

    def __init__(self, center, radius, amp=(0, 0, 0), freq=0.0, phase=0.0,
                 spin_axis=(0, 0, 1), spin_rate=0.0, tex=None):
        self.c0 = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.amp = np.asarray(amp, dtype=np.float64)
        self.freq = float(freq)
        self.phase = float(phase)
        self.spin_axis = np.asarray(spin_axis, dtype=np.float64)
        self.spin_rate = float(spin_rate)
        self.tex = tex or {"freq": (4.0, 3.0), "phase": (0.0, 1.5, 3.0), "base": (0.6, 0.4, 0.5), "amp": 0.35}

    def pose(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        R = _rotation(self.spin_axis, self.spin_rate * t)
        c = self.c0 + self.amp * np.sin(self.freq * t + self.phase)
        return R, c

    def intersect(self, dirs: np.ndarray, t: float) -> np.ndarray:
        _, c = self.pose(t)
        a = (dirs * dirs).sum(axis=-1)
        b = -2.0 * dirs @ c
        cc = float(c @ c) - self.radius**2
        disc = b * b - 4 * a * cc
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t1 = (-b - sq) / (2 * a)
        t2 = (-b + sq) / (2 * a)
        th = np.where(t1 > 1e-6, t1, t2)
        return np.where(ok & (th > 1e-6), th, np.inf)

    def material_coords(self, p: np.ndarray, t: float) -> np.ndarray:
        R, c = self.pose(t)
        return (p - c) @ R  # R^T applied to rows

    def world_point(self, m: np.ndarray, t: float) -> np.ndarray:
        R, c = self.pose(t)
        return m @ R.T + c

    def color(self, m: np.ndarray) -> np.ndarray:
        q = m / self.radius
        f1, f2 = self.tex["freq"]
        out = []
        for k in range(3):
            ph = self.tex["phase"][k]
            base = self.tex["base"][k]
            out.append(base + self.tex["amp"] * np.sin(f1 * q[..., 0] + ph) * np.sin(f2 * q[..., 1] + 0.5 * ph))
        return np.clip(np.stack(out, axis=0), 0.0, 1.0)


@dataclass
class FrameData:
    """One generated frame: guidance, depth, exact flows, surface ids."""

    guidance: np.ndarray  # [3,H,W] in [0,1]
    depth: DepthFrame
    flow_fwd: FlowField  # frame n -> n+1
    flow_bwd: FlowField  # frame n -> n-1
    surface_ids: np.ndarray  # [H,W] int


class Scene:
    """A camera plus a list of rigid primitives, raycast per frame."""

    def __init__(self, camera: Camera, primitives: list):
        if not primitives:
            raise ValueError("scene needs at least one primitive")
        self.camera = camera
        self.primitives = primitives

    def raycast(self, u: np.ndarray, v: np.ndarray, t: float):
        """Nearest-hit raycast at continuous pixel coords. Returns (ids, depth)."""
        dirs = self.camera.ray_dirs(u, v)
        hits = np.stack([prim.intersect(dirs, t) for prim in self.primitives], axis=0)
        ids = hits.argmin(axis=0)
        depth = np.take_along_axis(hits, ids[None], axis=0)[0]
        return ids, depth, dirs

    def _shade(self, ids, depth, dirs, t):
        H, W = ids.shape
        rgb = np.zeros((3, H, W))
        for i, prim in enumerate(self.primitives):
            mask = ids == i
            if not mask.any():
                continue
            p = dirs[mask] * depth[mask][..., None]
            m = prim.material_coords(p, t)
            rgb[:, mask] = prim.color(m)
        return rgb

    def _flow_to(self, ids, depth, dirs, t_src: float, t_dst: float, uu, vv):
        """Exact flow from frame t_src to t_dst plus the occlusion mask."""
        H, W = ids.shape
        flow = np.zeros((H, W, 2))
        occ = np.zeros((H, W), dtype=bool)
        u_dst = np.zeros((H, W))
        v_dst = np.zeros((H, W))
        z_dst = np.zeros((H, W))
        for i, prim in enumerate(self.primitives):
            mask = ids == i
            if not mask.any():
                continue
            p = dirs[mask] * depth[mask][..., None]
            m = prim.material_coords(p, t_src)
            p2 = prim.world_point(m, t_dst)
            u2, v2, z2 = self.camera.project(p2)
            u_dst[mask], v_dst[mask], z_dst[mask] = u2, v2, z2
        behind = z_dst <= 1e-6
        ids2, depth2, _ = self.raycast(u_dst, v_dst, t_dst)
        mismatch = (ids2 != ids) | (np.abs(depth2 - z_dst) > 1e-6 * (1.0 + np.abs(z_dst)))
        eps = 1e-9  # projection round-trip noise at the image border
        out_of_frame = (
            (u_dst < -eps) | (u_dst > W - 1 + eps) | (v_dst < -eps) | (v_dst > H - 1 + eps)
        )
        occ = behind | mismatch | out_of_frame
        flow[..., 0] = u_dst - uu
        flow[..., 1] = v_dst - vv
        flow[occ] = 0.0
        return FlowField(flow, occ)

    def render(self, frame_index: int, num_frames: int) -> FrameData:
        cam = self.camera
        uu, vv = np.meshgrid(
            np.arange(cam.width, dtype=np.float64), np.arange(cam.height, dtype=np.float64)
        )
        t = float(frame_index)
        ids, depth, dirs = self.raycast(uu, vv, t)
        if not np.isfinite(depth).all():
            raise RuntimeError("scene does not cover the full field of view")
        guidance = self._shade(ids, depth, dirs, t)
        if frame_index > 0:
            flow_bwd = self._flow_to(ids, depth, dirs, t, t - 1.0, uu, vv)
        else:
            flow_bwd = FlowField(np.zeros((cam.height, cam.width, 2)),
                                 np.ones((cam.height, cam.width), dtype=bool))
        if frame_index < num_frames - 1:
            flow_fwd = self._flow_to(ids, depth, dirs, t, t + 1.0, uu, vv)
        else:
            flow_fwd = FlowField(np.zeros((cam.height, cam.width, 2)),
                                 np.ones((cam.height, cam.width), dtype=bool))
        return FrameData(
            guidance=guidance,
            depth=DepthFrame(depth.copy()),
            flow_fwd=flow_fwd,
            flow_bwd=flow_bwd,
            surface_ids=ids.copy(),
        )


@dataclass
class SceneConfig:
    """Procedural scene parameters; (config, seed) fixes the output bitwise."""

    resolution_h: int = 48
    resolution_w: int = 64
    num_frames: int = 12
    hfov_deg: float = 100.0
    num_spheres: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_frames < 3:
            raise ValueError("need at least one 3-frame window")
        if not 0.0 < self.hfov_deg < 180.0:
            raise ValueError(f"degenerate camera FOV {self.hfov_deg}")


def build_scene(cfg: SceneConfig) -> Scene:
    """Draw a random layout of one background plane plus moving spheres."""
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    cam = Camera(cfg.resolution_w, cfg.resolution_h, cfg.hfov_deg)

    z_bg = rng.uniform(4.0, 6.0)
    tilt = rng.uniform(0.0, np.deg2rad(18.0))
    az = rng.uniform(0.0, 2 * np.pi)
    normal = np.array([np.sin(tilt) * np.cos(az), np.sin(tilt) * np.sin(az), -np.cos(tilt)])
    plane = Plane(
        point=(0.0, 0.0, z_bg),
        normal=normal,
        tex={
            "freq": (rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0)),
            "phase": tuple(rng.uniform(0, 2 * np.pi, 3)),
            "base": tuple(rng.uniform(0.35, 0.65, 3)),
            "amp": rng.uniform(0.25, 0.4),
        },
    )
    e1, e2 = plane.e1, plane.e2
    plane.vel = rng.uniform(-0.02, 0.02) * e1 + rng.uniform(-0.02, 0.02) * e2

    prims: list = [plane]
    half_tan = np.tan(np.deg2rad(cfg.hfov_deg) / 2.0)
    for _ in range(cfg.num_spheres):
        depth = rng.uniform(1.2, 3.0)
        x = rng.uniform(-0.45, 0.45) * half_tan * depth
        y = rng.uniform(-0.35, 0.35) * half_tan * depth * cfg.resolution_h / cfg.resolution_w
        radius = rng.uniform(0.25, 0.6)
        prims.append(
            Sphere(
                center=(x, y, depth),
                radius=radius,
                amp=rng.uniform(0.02, 0.22, 3) * np.array([1.0, 1.0, 0.4]),
                freq=rng.uniform(0.15, 0.45),
                phase=rng.uniform(0, 2 * np.pi),
                spin_axis=rng.normal(size=3),
                spin_rate=rng.uniform(0.0, 0.15),
                tex={
                    "freq": (rng.uniform(2.0, 6.0), rng.uniform(2.0, 6.0)),
                    "phase": tuple(rng.uniform(0, 2 * np.pi, 3)),
                    "base": tuple(rng.uniform(0.3, 0.7, 3)),
                    "amp": rng.uniform(0.25, 0.4),
                },
            )
        )
    return Scene(cam, prims)


def generate_scene(cfg: SceneConfig) -> list[FrameData]:
    """Render all frames of the configured scene."""
    scene = build_scene(cfg)
    return [scene.render(i, cfg.num_frames) for i in range(cfg.num_frames)]
