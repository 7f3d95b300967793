"""Numba vs numpy timings for the hot loops, with an agreement check.

    python benchmarks/bench_kernels.py [--repeat 5] [--sensor hdl64]

Prints one line per workload: median seconds on each backend, the speed-up
and whether both backends returned the same answer.
"""
import argparse
import statistics
import time

import numpy as np

from lidarguard import kernels
from lidarguard._backend import HAVE_NUMBA, get_backend, set_backend
from lidarguard.carlo import carlo_batch
from lidarguard.cloud import load_sensor
from lidarguard.geometry.box import Box3D
from lidarguard.mesh import sedan_mesh
from lidarguard.render import DEFAULT_GROUND_Z, PlacedMesh, Pose, Scene, render


def timed(fn, repeat):
    out = fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts), out


def workloads(sensor, seed=0):
    rng = np.random.default_rng(seed)
    tri = sedan_mesh().posed((10.0, 0.5, DEFAULT_GROUND_Z), 0.4).soup()
    dirs = rng.normal(size=(200_000, 3))
    dirs[:, 0] = np.abs(dirs[:, 0]) * 4
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    q0 = rng.uniform(0, 64, (20_000, 3))
    q1 = rng.uniform(0, 64, (20_000, 3))
    scene = Scene(PlacedMesh(sedan_mesh(), Pose((10.0, 0.5, DEFAULT_GROUND_Z), 0.4)), (), DEFAULT_GROUND_Z)
    cloud = render(sensor, scene).cloud
    boxes = [Box3D((10.0, 0.5, DEFAULT_GROUND_Z + 0.78), (3.9, 1.6, 1.56), 0.4),
             Box3D((6.5, -1.0, DEFAULT_GROUND_Z + 0.78), (3.9, 1.6, 1.56), 0.0)]
    return {
        "cast_rays 200k x sedan": (lambda: kernels.cast_rays(np.zeros(3), dirs, tri),
                                   lambda a, b: np.array_equal(a[1], b[1]) and np.allclose(a[0], b[0], rtol=0, atol=1e-9)),
        "traverse 20k segments 64^3": (lambda: kernels.traverse(q0, q1, (64, 64, 64), 1e-9),
                                       lambda a, b: np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])),
        "render hdl64 scene": (lambda: render(sensor, scene).cloud.xyz,
                               lambda a, b: a.shape == b.shape and np.allclose(a, b, rtol=0, atol=1e-9)),
        "carlo_batch 2 boxes": (lambda: [(v.label, v.stage, v.f, v.g) for v in carlo_batch(sensor, cloud, boxes)],
                                lambda a, b: a == b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sensor", default="hdl64")
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    sensor = load_sensor(args.sensor)
    start = get_backend()
    set_backend("numba")
    kernels.warmup()
    jobs = workloads(sensor)
    print(f"{'workload':32s} {'numba s':>10s} {'numpy s':>10s} {'speed-up':>9s}  agree")
    for name, (fn, same) in jobs.items():
        set_backend("numba")
        t_nb, r_nb = timed(fn, args.repeat)
        set_backend("numpy")
        t_np, r_np = timed(fn, args.repeat)
        print(f"{name:32s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}x  {'yes' if same(r_nb, r_np) else 'NO'}")
    set_backend(start)


if __name__ == "__main__":
    main()
