"""Small builders shared by the test modules."""

from importlib import resources

import numpy as np

from vgmtrack.mot import Track
from vgmtrack.particles import NoiseBounds, ParticleSet, predict_particles
from vgmtrack.radar_model import RadarModel
from vgmtrack.vgm import io as vgm_io

ZERO_NOISE = NoiseBounds(0.0, 0.0, 0.0, 0.0)


def bundled_model(**kwargs) -> RadarModel:
    text = resources.files("vgmtrack").joinpath("data", "default_model.json").read_text()
    return RadarModel.from_vgm(vgm_io.loads(text), **kwargs)


def cloud(rng, center, n=6, spread=(0.3, 0.3, 0.05, 0.5, 0.02), extent=(1.8, 4.6), expand=True) -> ParticleSet:
    """Small particle cloud around ``center`` = (x, y, phi, v, omega) in VC."""
    xi = np.asarray(center, dtype=float) + rng.uniform(-1, 1, (n, 5)) * np.asarray(spread)
    ab = np.asarray(extent, dtype=float) + rng.uniform(-0.1, 0.1, (n, 2))
    w = rng.dirichlet(np.ones(n))
    ps = ParticleSet(xi, ab, w)
    if expand:
        ps = predict_particles(ps, 0.0, ZERO_NOISE, rng)
    return ps


def track(rng, label, r, center, **kwargs) -> Track:
    return Track(label, r, cloud(rng, center, **kwargs))


def surface_detections(rng, center, n, mount_xy=(0.0, 0.0), doppler_noise=0.2, extent=(1.8, 4.6)):
    """Polar detections (sensor at the origin, zero yaw) on the box of a vehicle at ``center``."""
    x, y, phi, v, omega = center
    a, b = extent
    ox = rng.uniform(-0.23, 0.77, n) * b
    oy = rng.choice([-0.5, 0.5], n) * a
    c, s = np.cos(phi), np.sin(phi)
    px = x + c * ox - s * oy - mount_xy[0]
    py = y + s * ox + c * oy - mount_xy[1]
    d, alpha = np.hypot(px, py), np.arctan2(py, px)
    s1 = v * c + omega * (y - mount_xy[1])
    s2 = v * s - omega * (x - mount_xy[0])
    vd = np.cos(alpha) * s1 + np.sin(alpha) * s2 + doppler_noise * rng.normal(size=n)
    return np.column_stack([d, alpha, vd])
