import numpy as np
import pytest

from flowdub import datagen, flow
from flowdub.rng import Rng, subseed


def mixture_sampler(spec):
    weights = [c.weight for c in spec.components]

    def sampler(rng, count):
        out = np.empty((count, spec.dim))
        for row in range(count):
            comp = spec.components[rng.choice(weights)]
            out[row] = comp.mean + np.sqrt(comp.cov_diag) * rng.normals(spec.dim)
        return out

    return sampler


@pytest.fixture(scope="session")
def mixture_sampler_setup():
    """A flow net trained briefly on the 2-D two-component mixture."""
    spec = datagen.mixture2d_spec()

    def cond(rng, m):
        return np.zeros((m.shape[0], 0)), None

    net = flow.init_vector_field(2, 0, [64, 64], Rng(subseed(5, "init")))
    trained, _ = flow.train_flow(
        net, mixture_sampler(spec), cond, flow.TrainConfig(), steps=800, seed=5
    )
    return trained, spec
