"""Central finite-difference oracle for the splatting gradients.

The L1 loss has a kink wherever a rendered channel equals its target, and
the rasterizer changes its active set (3-sigma footprint, early stop) at
isolated parameter values. A difference quotient is only meaningful when
the stencil stays on one smooth piece, so:

* pixels whose residual is within ``KINK`` of zero, or changes sign across
  the stencil, are masked out (for both the quotient and the analytic
  gradient);
* a parameter whose +-h perturbation changes the per-pixel lists or the
  number of composited Gaussians is skipped and counted.
"""

import numpy as np

from panofuse import _raster
from panofuse.geometry import intrinsics_from_fov, make_pose
from panofuse.splat import GaussianCloud, _rasterize, render, render_with_grads

H = 1e-4
KINK = 1e-6
PARAMS = ("color", "opacity_logit", "log_scale")


def random_scene(rng, n=8, size=32, fov=60.0):
    intr = intrinsics_from_fov(fov, size, size)
    z = rng.uniform(1.5, 3.0, n)
    half = np.tan(np.radians(fov / 2)) * z
    pos = np.stack([rng.uniform(-0.6, 0.6, n) * half, rng.uniform(-0.6, 0.6, n) * half, z], axis=1)
    cloud = GaussianCloud(
        pos,
        rng.uniform(0.0, 1.0, (n, 3)),
        rng.uniform(-2.0, 2.5, n),
        np.log(rng.uniform(0.05, 0.25, n)),
        rng.uniform(0.0, 1.0, 3),
    )
    target = rng.uniform(0.0, 1.0, (size, size, 3))
    return cloud, make_pose(0.0), intr, target


def _perturbed(cloud, param, g, c, delta):
    out = cloud.copy()
    if param == "color":
        out.colors[g, c] += delta
    elif param == "opacity_logit":
        out.opacity_logits[g] += delta
    else:
        out.log_scales[g] += delta
    return out


def _active_set(cloud, pose, intr):
    idx, args = _rasterize(cloud, pose, intr)
    _, _, used = _raster.composite(*args)
    offsets, ids = args[0], args[1]
    return idx, offsets, ids, used


def _same_active_set(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _masked_loss(image, target, mask):
    return np.abs(image - target)[mask].sum() / (3.0 * mask.sum())


def check_scene(cloud, pose, intr, target, h=H):
    """Compare analytic and finite-difference gradients for every free scalar.

    Returns ``(errors, skipped)``: a list of ``(param, gaussian, channel,
    analytic, numeric, rel_error)`` tuples and the number of skipped
    parameters.
    """
    base_img = render(cloud, pose, intr)
    base_resid = base_img - target
    base_active = _active_set(cloud, pose, intr)
    errors = []
    skipped = 0
    for param in PARAMS:
        channels = range(3) if param == "color" else [None]
        for g in range(len(cloud)):
            for c in channels:
                plus = _perturbed(cloud, param, g, c, h)
                minus = _perturbed(cloud, param, g, c, -h)
                if not (_same_active_set(_active_set(plus, pose, intr), base_active)
                        and _same_active_set(_active_set(minus, pose, intr), base_active)):
                    skipped += 1
                    continue
                img_p = render(plus, pose, intr)
                img_m = render(minus, pose, intr)
                rp, rm = img_p - target, img_m - target
                kink = (np.abs(base_resid) < KINK) | (np.sign(rp) != np.sign(rm))
                mask = ~kink.any(axis=2)
                if not mask.any():
                    skipped += 1
                    continue
                numeric = (_masked_loss(img_p, target, mask) - _masked_loss(img_m, target, mask)) / (2 * h)
                _, grads = render_with_grads(cloud, pose, intr, target, mask)
                field = {"color": grads.color, "opacity_logit": grads.opacity_logit,
                         "log_scale": grads.log_scale}[param]
                analytic = field[g, c] if c is not None else field[g]
                scale = max(abs(analytic), abs(numeric))
                rel = 0.0 if scale < 1e-12 else abs(analytic - numeric) / scale
                errors.append((param, g, c, float(analytic), float(numeric), rel))
    return errors, skipped
