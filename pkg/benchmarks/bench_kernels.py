"""Time the compiled and numpy kernels on the same disc mesh.

    python3 benchmarks/bench_kernels.py [--level 5] [--repeat 5] [--json out.json]
"""
import argparse
import json
import math
import sys
import timeit

import numpy as np

from moserlab import kernels
from moserlab.mesh import build_disc_mesh


def cases(mesh, rng):
    v, t = mesh.vertices, mesh.triangles
    area = mesh.signed_areas()
    u = rng.normal(scale=0.3, size=mesh.n_vertices)
    pts = rng.uniform(-0.7, 0.7, size=(2000, 2))
    return {
        "element_matrices": lambda b: kernels.element_matrices(v, t, backend=b),
        "exp_moments": lambda b: kernels.exp_moments(t, area, u, 4 * math.pi, backend=b),
        "exp_exponent_integral": lambda b: kernels.exp_exponent_integral(t, area, u, backend=b),
        "locate_points": lambda b: kernels.locate_points(v, t, pts, backend=b),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--level", type=int, default=5)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", metavar="PATH")
    a = p.parse_args(argv)

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the numpy fallback only", file=sys.stderr)
    mesh = build_disc_mesh(1.0, a.level)
    print(f"disc level {a.level}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    rows = []
    for name, fn in cases(mesh, np.random.default_rng(0)).items():
        row = {"kernel": name}
        for b in backends:
            fn(b)  # warm up
            row[b] = min(timeit.repeat(lambda: fn(b), number=1, repeat=a.repeat))
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)
        cols = "  ".join(f"{b}={row[b] * 1e3:8.2f} ms" for b in backends)
        extra = f"  x{row['speedup']:.1f}" if "speedup" in row else ""
        print(f"{name:24s} {cols}{extra}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump({"level": a.level, "n_triangles": mesh.n_triangles, "rows": rows}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
