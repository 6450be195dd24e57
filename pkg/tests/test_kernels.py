"""The jitted kernels and their numpy fallbacks must agree exactly."""

import os
import subprocess
import sys

import numpy as np

from rtgeo import _kernels
from rtgeo.calculus import bump_kernel
from rtgeo.charts import Chart


def test_holder_paths_agree():
    rng = np.random.default_rng(0)
    coords = rng.uniform(0, 1, size=(400, 2))
    vals = rng.standard_normal((400, 3))
    a = _kernels._holder_pair_max_numpy(coords, vals, 0.5, 0.05)
    if _kernels.HAVE_NUMBA:
        b = _kernels._holder_pair_max_jit(coords, vals, 0.5, 0.05)
        assert abs(a - b) < 1e-12
    # brute force reference
    best = 0.0
    for i in range(400):
        for j in range(i + 1, 400):
            d = np.linalg.norm(coords[i] - coords[j])
            if d < 0.05:
                continue
            best = max(best, np.linalg.norm(vals[i] - vals[j]) / d ** 0.5)
    assert abs(a - best) < 1e-12


def test_interp_paths_agree():
    chart = Chart((0.0, 0.0), (1.0, 1.0), (17, 17))
    rng = np.random.default_rng(1)
    values = np.ascontiguousarray(rng.standard_normal(chart.res + (3,)))
    pts = rng.uniform(0.0, 0.999, size=(500, 2))
    t = (pts - chart.lo) / chart.h
    i0 = np.minimum(t.astype(int), np.asarray(chart.res) - 2)
    frac = t - i0
    a = _kernels._interp2_numpy(values, i0[:, 0], i0[:, 1], frac[:, 0], frac[:, 1])
    if _kernels.HAVE_NUMBA:
        b = _kernels._interp2_jit(values, i0[:, 0], i0[:, 1], frac[:, 0], frac[:, 1])
        assert np.abs(a - b).max() < 1e-13


def test_mollify_paths_agree():
    chart = Chart((0.0, 0.0), (1.0, 1.0), (33, 33))
    rng = np.random.default_rng(2)
    field = np.ascontiguousarray(rng.standard_normal(chart.res + (2,)))
    kern = bump_kernel(chart, 1 / 8)
    a = _kernels._mollify2_numpy(field, kern)
    if _kernels.HAVE_NUMBA:
        b = _kernels._mollify2_jit(field, kern)
        assert np.abs(a - b).max() < 1e-12


def test_env_flag_disables_numba():
    env = dict(os.environ, RTGEO_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from rtgeo import _kernels; print(_kernels.HAVE_NUMBA)"],
        capture_output=True,
        text=True,
        env=env,
    )
    assert out.stdout.strip() == "False"


def test_results_identical_across_paths():
    # a full norm report must not depend on the dispatch path
    code = (
        "import numpy as np\n"
        "from rtgeo.charts import Chart, GridField\n"
        "from rtgeo.calculus import norm_report\n"
        "chart = Chart((0.,0.),(1.,1.),(33,33))\n"
        "f = GridField(chart, np.sqrt(chart.nodes[...,:1]))\n"
        "r = norm_report(f, 4.0, 0.5)\n"
        "print(repr((r.lp, r.w1p, r.c0, r.c0alpha)))\n"
    )
    outs = []
    for disable in ("0", "1"):
        env = dict(os.environ, RTGEO_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
        assert res.returncode == 0, res.stderr
        outs.append(res.stdout.strip())
    assert outs[0] == outs[1]
