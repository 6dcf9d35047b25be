import numpy as np
import pytest

from ccdlmp.cases import FIXTURES, load_fixture
from ccdlmp.grid import DER, RadialNetwork, UncertaintySpec
from ccdlmp.losses import compute_loss_factors
from ccdlmp.opf import solve_scenario


ROOT = DER.from_standard(0, c2=100.0, c1=40.0)


def chain(r=(0.1, 0.2), x=None, dP=(0.0, 0.05, 0.05), **kw):
    n = len(r)
    x = r if x is None else x
    kw.setdefault("ders", [ROOT])
    return RadialNetwork.build(list(range(n)), r, x, [1.0] * n, dP, **kw)


def star(r=(0.1, 0.2), dP=(0.0, 0.1, 0.1), **kw):
    kw.setdefault("ders", [ROOT])
    return RadialNetwork.build([0] * len(r), r, r, [1.0] * len(r), dP, **kw)


def two_node_doc(r=0.1, x=0.1, dP=0.1):
    return {
        "name": "tiny",
        "nodes": [{"id": 0}, {"id": 1, "dP": dP, "dQ": 0.0, "u_min": 0.81, "u_max": 1.21}],
        "edges": [{"id": 1, "from": 0, "to": 1, "r": r, "x": x, "s_max": 1.0}],
        "ders": [{"node": 0, "c2": 10.0, "c1": 20.0}],
    }


def small_network(dP=(0.0, 0.1, 0.08, 0.06), ders=None, **kw):
    """Three-node feeder 0-1-2, 1-3 with one DER at node 2."""
    if ders is None:
        ders = [DER.from_standard(0, c2=100.0, c1=40.0),
                DER.from_standard(2, c2=20.0, c1=20.0, gP_min=0.0, gP_max=0.3, gQ_min=-0.1, gQ_max=0.1)]
    return RadialNetwork.build([0, 1, 1], [0.02, 0.03, 0.03], [0.02, 0.02, 0.03], [1.0, 1.0, 1.0],
                               dP, 0.3 * np.asarray(dP), u_min=np.full(4, 0.9 ** 2),
                               u_max=np.full(4, 1.1 ** 2), ders=ders, name="small", **kw)


class FixtureSolves:
    """Lazily solved fixture scenarios shared across the test session."""

    def __init__(self):
        self._nets = {}
        self._lf = {}
        self._res = {}

    def network(self, name):
        if name not in self._nets:
            self._nets[name] = load_fixture(name)
        return self._nets[name]

    def loss_factors(self, name, mode="paper"):
        if (name, mode) not in self._lf:
            net, unc = self.network(name)
            self._lf[(name, mode)] = compute_loss_factors(net, unc, mode=mode)
        return self._lf[(name, mode)]

    def solve(self, name, scenario, flow_cc=False):
        key = (name, scenario, flow_cc)
        if key not in self._res:
            net, unc = self.network(name)
            lf = self.loss_factors(name) if scenario == "lvolt-cc" else None
            self._res[key] = solve_scenario(net, unc, scenario, loss_factors=lf, flow_cc=flow_cc)
        return self._res[key]


@pytest.fixture(scope="session")
def solves():
    return FixtureSolves()


@pytest.fixture(scope="session")
def feeder15(solves):
    return solves.network("feeder15")


ALL_FIXTURES = FIXTURES
SCENARIOS = ("det", "gen-cc", "volt-cc", "lvolt-cc")
