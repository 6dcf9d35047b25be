import math

import numpy as np
import pytest

from ccdlmp.grid import UncertaintySpec
from ccdlmp.montecarlo import (MIN_SAMPLES, MonteCarloError, binomial_half_width, chunk_streams,
                               monte_carlo_validate)
from ccdlmp.opf import solve_scenario

from conftest import small_network


def test_zero_covariance_has_no_violations():
    net = small_network()
    res = solve_scenario(net, UncertaintySpec.zero(net.n), "volt-cc", flow_cc=True)
    mc = monte_carlo_validate(res, MIN_SAMPLES, seed=3)
    for fam in mc.families.values():
        assert not fam.joint.any()
    assert mc.cost_rel_error <= 1e-12
    assert mc.rates_passed and mc.all_rates_passed


def test_half_width_shrinks_by_sqrt_two():
    for eps in (0.01, 0.05):
        for n in (10_000, 100_000):
            assert binomial_half_width(eps, n) / binomial_half_width(eps, 2 * n) == pytest.approx(math.sqrt(2))
    assert binomial_half_width(0.05, 100_000) == pytest.approx(3 * math.sqrt(0.05 * 0.95 / 1e5))


def test_report_half_width_uses_sample_count(solves):
    res = solves.solve("feeder15", "gen-cc")
    small = monte_carlo_validate(res, 20_000, seed=1)
    large = monte_carlo_validate(res, 40_000, seed=1)
    ratio = small.families["generation"].half_width / large.families["generation"].half_width
    assert ratio == pytest.approx(math.sqrt(2), rel=0.1)


@pytest.mark.parametrize("scenario", ["gen-cc", "volt-cc"])
def test_fixture_rates_and_moments(solves, scenario):
    res = solves.solve("feeder15", scenario)
    mc = monte_carlo_validate(res, 100_000, seed=2024)
    assert mc.rates_passed
    assert mc.cost_rel_error <= 5e-3
    assert mc.u_std_rel_error <= 5e-3
    for fam in mc.families.values():
        for rate in (fam.rate_upper, fam.rate_lower, fam.rate_joint):
            assert np.all((rate >= 0) & (rate <= 1))
        assert np.all(fam.joint >= np.maximum(fam.upper, fam.lower))
        assert np.all(fam.joint <= fam.upper + fam.lower)


def test_binding_generation_limit_is_violated_near_target(solves):
    res = solves.solve("feeder15", "gen-cc")
    gen = monte_carlo_validate(res, 100_000, seed=9).families["generation"]
    # a binding limit is exceeded at close to the target rate, never far above
    assert gen.max_side_rate == pytest.approx(gen.eps, abs=gen.half_width)


def test_generation_sides_gate_separately_voltage_jointly(solves):
    mc = monte_carlo_validate(solves.solve("feeder15", "gen-cc"), 100_000, seed=2024)
    gen, volt = mc.families["generation"], mc.families["voltage"]
    assert not gen.joint_rule and volt.joint_rule
    assert gen.gating_rate == gen.max_side_rate
    assert volt.gating_rate == volt.max_joint_rate
    # one unit sits near both of its limits, so its either-side rate can exceed eps
    assert gen.max_joint_rate >= gen.max_side_rate


def test_unconstrained_families_do_not_gate(solves):
    net, unc = solves.network("feeder15")
    res = solves.solve("feeder15", "det")
    mc = monte_carlo_validate(res, 20_000, seed=4, uncertainty=unc)
    assert not any(f.chance_constrained for f in mc.families.values())
    assert mc.rates_passed
    assert not mc.all_rates_passed


def test_determinism_and_threading(solves):
    res = solves.solve("four_node", "volt-cc", True)
    a = monte_carlo_validate(res, 50_000, seed=11)
    b = monte_carlo_validate(res, 50_000, seed=11)
    c = monte_carlo_validate(res, 50_000, seed=11, workers=3)
    d = monte_carlo_validate(res, 50_000, seed=12)
    assert a.as_dict() == b.as_dict() == c.as_dict()
    assert a.as_dict() != d.as_dict()


def test_chunk_streams():
    streams = chunk_streams(5, 45_000, chunk=20_000)
    assert [k for _, k in streams] == [20_000, 20_000, 5_000]
    first = [g.standard_normal(3) for g, _ in chunk_streams(5, 45_000, chunk=20_000)]
    again = [g.standard_normal(3) for g, _ in streams]
    assert all(np.array_equal(x, y) for x, y in zip(first, again))
    assert not np.array_equal(first[0], first[1])


def test_errors(solves):
    res = solves.solve("four_node", "gen-cc")
    with pytest.raises(MonteCarloError, match="samples"):
        monte_carlo_validate(res, MIN_SAMPLES - 1)
    with pytest.raises(MonteCarloError, match="uncertainty"):
        monte_carlo_validate(solves.solve("four_node", "det"), MIN_SAMPLES)
    net = small_network(dP=(0.0, 5.0, 5.0, 5.0))
    bad = solve_scenario(net, None, "det")
    assert not bad.optimal
    with pytest.raises(MonteCarloError, match="optimal"):
        monte_carlo_validate(bad, MIN_SAMPLES, uncertainty=UncertaintySpec.zero(net.n))
