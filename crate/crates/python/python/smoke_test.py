"""Smoke test for the spectral_vi extension module.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, or
`cargo build --release -p spectral-vi-python` and put a copy of
target/release/libspectral_vi.so named spectral_vi.so on PYTHONPATH.
"""

import math
import pathlib

import spectral_vi as sv

ROOT = pathlib.Path(__file__).resolve().parents[3]


def free_particle():
    prob = sv.Problem.free_particle([1.0, 2.0], [0.5, -1.0], [1.0, 3.0])
    traj = sv.Integrator(prob, 6, 0.5).integrate(20)
    endpoint, curve = traj.errors()
    assert endpoint < 1e-12 and curve < 1e-12, (endpoint, curve)
    assert traj.p[-1] == [1.0, 3.0]


def harmonic():
    prob = sv.Problem.harmonic()
    q, p, t = sv.Integrator(prob, 12, 1.0).step([1.0], [0.0])
    assert abs(q[0] - math.cos(1.0)) < 1e-10 and abs(p[0] + math.sin(1.0)) < 1e-10
    assert t == 1.0
    energy = sv.Integrator(prob, 14, 20.0).integrate(50).energy()
    assert energy["drift_ratio"] is None or energy["drift_ratio"] <= 2.0


def kepler():
    prob = sv.Problem.kepler()
    ns, errs = [], []
    for n in range(8, 20, 2):
        traj = sv.Integrator(prob, n, 1.0).integrate(10)
        ns.append(n)
        errs.append(traj.errors()[0])
        dn = traj.discrete_noether()
        assert dn["max_abs_error"] < 1e-11
    fit = sv.fit_geometric(ns, errs)
    assert 0.0 < fit["fitted"] < 1.0, fit
    mid = traj.eval(5.5)
    assert len(mid) == 2


def failure():
    integ = sv.Integrator(sv.Problem.kepler(), 5, 2.0)
    traj = integ.integrate(100, partial=True)
    assert traj.failure is not None and traj.steps < 100
    try:
        integ.integrate(100)
    except RuntimeError:
        pass
    else:
        raise AssertionError("expected a step failure")


def nbody():
    path = ROOT / "crates/core/data/solar_system_j2000.csv"
    prob = sv.Problem.nbody(str(path), bodies=["sun", "jupiter", "saturn"])
    traj = sv.Integrator(prob, 12, 200.0).integrate(10)
    assert traj.noether()["max_abs_error"] < 1e-12
    assert prob.body_names == ["sun", "jupiter", "saturn"]


if __name__ == "__main__":
    for case in (free_particle, harmonic, kepler, failure, nbody):
        case()
        print(f"ok {case.__name__}")
