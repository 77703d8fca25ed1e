"""Random configurations and finite differences shared by the test modules."""

import numpy as np

from msmcalib.exceptions import GeometryError
from msmcalib.geometry import PlaneH, PluckerLine, line_to_min, plane_to_min, so3_exp, unit
from msmcalib.sim import look_at

MIRROR = np.array([200.0, 150.0, -150.0])

ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Store and print one acceptance line."""
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def central_diff(f, x, h=1e-6):
    """Jacobian of ``f`` (returning a flat array) at ``x`` by central differences."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        cols.append((f(xp) - f(xm)) / (2 * step))
    return np.stack(cols, axis=-1)


def rel_err(J, J_fd):
    return np.linalg.norm(J - J_fd) / max(np.linalg.norm(J_fd), 1e-12)


def random_rotvec(rng, max_angle=1.0):
    return unit(rng.normal(size=3)) * rng.uniform(0, max_angle)


def config_fP(rng):
    T = np.concatenate([random_rotvec(rng), rng.uniform(-50, 50, 2), [rng.uniform(300, 800)]])
    X = np.append(rng.uniform(-100, 100, 2), 0.0)
    return T, X


def config_fL(rng):
    """Line, world-to-C1 and slide-to-C1 poses with the pierce point in front of C1."""
    while True:
        Tw = np.concatenate([random_rotvec(rng), rng.uniform(-200, 200, 3)])
        Ts = np.concatenate([random_rotvec(rng, 0.5), rng.uniform(-50, 50, 2), [rng.uniform(300, 600)]])
        Rs = so3_exp(Ts[:3])
        Xc = Ts[3:] + Rs @ np.append(rng.uniform(-40, 40, 2), 0.0)
        vc = unit(rng.normal(size=3))
        if abs(vc @ Rs[:, 2]) < 0.3:
            continue
        Rw = so3_exp(Tw[:3])
        try:
            line = line_to_min(PluckerLine.from_point_direction(Rw.T @ (Xc - Tw[3:]), Rw.T @ vc))
        except GeometryError:
            continue
        return line, Tw, Ts


def config_fR(rng):
    """Mirror plane near the rig mirror, a beam hitting it and camera C2 over the board."""
    while True:
        n = unit(np.array([1.0, 0.0, 1.0]) + 0.2 * rng.normal(size=3))
        plane = plane_to_min(PlaneH.through_point(n, MIRROR + rng.normal(scale=5, size=3)))
        v = unit(np.array([-1.0, 0.0, 0.0]) + 0.1 * rng.normal(size=3))
        try:
            line = line_to_min(PluckerLine.from_point_direction(MIRROR + rng.normal(scale=2, size=3), v))
        except GeometryError:
            continue
        T = look_at(np.array([190.0, 150.0, -500.0]) + rng.normal(scale=20, size=3), [200.0, 150.0, 0.0]).as_vector()
        return plane, line, T
