"""Bundled fixtures and randomized small radial networks."""
from __future__ import annotations

import numpy as np

from .grid import DER, RadialNetwork, UncertaintySpec, fixture_path, load_network

FIXTURES = ("feeder15", "feeder15_uncongested", "four_node", "two_node")


def load_fixture(name: str) -> tuple[RadialNetwork, UncertaintySpec | None]:
    if not name.endswith(".json"):
        name += ".json"
    return load_network(fixture_path(name))


def random_network(rng: np.random.Generator, n_nodes: int | None = None,
                   name: str | None = None) -> tuple[RadialNetwork, UncertaintySpec]:
    """A random radial feeder with 3 to 10 nodes (root included) and 1 or 2 DERs."""
    if n_nodes is None:
        n_nodes = int(rng.integers(3, 11))
    if not 2 <= n_nodes:
        raise ValueError("a network needs at least two nodes")
    n = n_nodes - 1
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n + 1)]
    r = np.concatenate([[0.0], rng.uniform(0.01, 0.05, n)])
    x = np.concatenate([[0.0], r[1:] * rng.uniform(0.5, 2.0, n)])
    dP = np.concatenate([[0.0], rng.uniform(0.0, 0.1, n)])
    dQ = 0.3 * dP
    # downstream demand sets a flow scale; some edges get a tight limit
    down = dP.copy()
    for i in range(n, 0, -1):
        down[parent[i]] += down[i]
    s_max = np.concatenate([[0.0], np.maximum(0.05, down[1:] * rng.uniform(0.9, 2.5, n))])
    k = 1 if n < 3 else int(rng.integers(1, 3))
    nodes = rng.choice(np.arange(1, n + 1), size=min(k, n), replace=False)
    ders = [DER.from_standard(0, c2=float(rng.uniform(50, 400)), c1=float(rng.uniform(20, 60)))]
    for i in sorted(int(v) for v in nodes):
        ders.append(DER.from_standard(i, c2=float(rng.uniform(2, 10)), c1=float(rng.uniform(5, 20)),
                                      gP_min=0.0, gP_max=float(rng.uniform(0.1, 0.4)),
                                      gQ_min=-0.2, gQ_max=0.2))
    net = RadialNetwork.build(parent[1:], r[1:], x[1:], s_max[1:], dP, dQ,
                              u_min=np.full(n + 1, 0.95 ** 2), u_max=np.full(n + 1, 1.05 ** 2),
                              ders=ders, name=name or f"random{n_nodes}")
    unc = UncertaintySpec.from_std(np.maximum(0.15 * dP[1:], 1e-3))
    return net, unc


def random_networks(count: int = 25, seed: int = 7, scenarios=("det", "gen-cc", "volt-cc", "lvolt-cc"),
                    backend: str | None = None) -> list[tuple[RadialNetwork, UncertaintySpec]]:
    """``count`` random networks on which every listed scenario solves to optimality.

    Infeasible draws are discarded and redrawn from the same stream.
    """
    from .losses import LossFactorError, compute_loss_factors
    from .opf import solve_scenario

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    out = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 50 * count:
            raise RuntimeError("could not generate feasible random networks")
        net, unc = random_network(rng, name=f"random{len(out)}")
        try:
            lf = compute_loss_factors(net, unc, backend=backend) if "lvolt-cc" in scenarios else None
        except LossFactorError:
            continue
        if all(solve_scenario(net, unc, sc, loss_factors=lf, backend=backend).optimal for sc in scenarios):
            out.append((net, unc))
    return out
