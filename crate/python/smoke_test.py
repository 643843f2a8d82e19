"""Smoke test for the compiled extension module.

Build and run from the repository root:

    cargo build -p ckn-py --features extension-module --release
    cp target/release/libckn.so python/ckn.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import ckn  # noqa: E402


def close(x, y, rel):
    return abs(x - y) <= rel * abs(y)


def main():
    p = ckn.Params()
    e = p.exponents()
    assert e["two_sharp"] == 4.0
    assert close(e["q_c"], 20 / 7, 1e-15)
    assert e["regime"] == "Subcritical"

    try:
        ckn.Params(a=2.0)
    except ckn.Error as err:
        assert "WeightOutOfRange" in str(err)
    else:
        raise AssertionError("invalid weight accepted")

    grid = ckn.Grid(n=2048)
    u = ckn.Profile.gaussian(grid, width=1.5)
    u = u.scaled(1 / math.sqrt(ckn.mass_sq(u, p)))
    v = u.dilate(1.0, p)
    assert close(ckn.mass_sq(v, p), 1.0, 1e-8)
    c0, c1 = ckn.fiber_coefficients(u, p), ckn.fiber_coefficients(v, p)
    assert close(c1["A"], math.e**2 * c0["A"], 1e-6)

    f = ckn.fiber(u, p)
    assert [c["branch"] for c in f["criticals"]] == ["Plus", "Minus"]

    s = ckn.estimate_s(p)
    assert close(s["S_ab"] ** 2, math.pi / 3, 1e-6)
    assert ckn.classify_region(3, 0.45, 1.325)["region"] == "Case2Boundary"

    report, ground = ckn.minimize_plus(p.with_beta(0.6))
    assert report["converged"] and report["energy"] < 0 and report["lambda"] < 0
    assert len(ground) == len(grid)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "ground.csv")
        ground.save_csv(path)
        again = ckn.Profile.load_csv(path)
        assert close(ckn.energy(again, p.with_beta(0.6)), report["energy"], 1e-12)

    print("python smoke test passed")


if __name__ == "__main__":
    main()
