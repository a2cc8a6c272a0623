"""Smoke test for the flockcp extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import math

import flockcp


def main():
    p = flockcp.ModelParams(1, 3, 1.0, 1.0)
    r = flockcp.threshold(p)
    assert abs(r.m - 1.2) < 1e-12, r
    assert not r.subcritical

    assert flockcp.threshold(flockcp.ModelParams(1, 4, 1.0, 1.0)).subcritical
    assert flockcp.gw_extinction(flockcp.ModelParams(1, 6, 1.0, 1.0)) == 1.0
    assert flockcp.smallest_extinct_n(1, 2.0, 1.0) == 16

    pmf, tail = flockcp.offspring_pmf(p, 200)
    assert abs(sum(pmf) + tail - 1.0) < 1e-12
    assert abs(sum(k * q for k, q in enumerate(pmf)) - r.m) < 1e-9

    q = flockcp.gw_extinction(p)
    assert 0.0 < q < 1.0

    s = flockcp.simulate(flockcp.ModelParams(1, 1, 0.0, 0.0), 10.0, seed=1, record=True)
    assert s.extinct and s.n_events == 1 and len(s.events) == 1
    assert s.events[0].split("\t")[2] == "DISASTER"

    run = flockcp.simulate(flockcp.ModelParams(1, 3, 2.0, math.inf), 5.0, seed=3, init_state=3, process="contact")
    assert all(state == 3 for _, state in run.final_config)

    est = flockcp.survival(flockcp.ModelParams(1, 1, 0.4, 0.0), 200.0, 500, seed=7)
    assert est.point <= 0.02 and est.ci_low <= est.point <= est.ci_high

    assert flockcp.couple_check(flockcp.ModelParams(1, 5, 2.0, 1.0), 2, 5, seeds=50) == 0

    try:
        flockcp.ModelParams(1, 0, 1.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("N = 0 accepted")

    print("flockcp smoke test passed:", p, r)


if __name__ == "__main__":
    main()
