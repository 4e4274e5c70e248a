import numpy as np
import pytest

from smtde.solvers import BrownianDriver, InitialState, ProblemSpec

SEC6_A = np.array([[0.1, 0.2], [0.3, 0.4]])
SEC6_B = np.array([[0.4, 0.1], [0.2, 0.3]])


def sec6_drift(t, x):
    return np.stack([np.sin(x[0]), x[1] + 5.0])


def sec6_diffusion(t, x):
    return np.stack([x[0] + 5.0, np.cos(x[1])])


def zero_fn(t, x):
    return np.zeros_like(x)


def one_fn(t, x):
    return np.ones_like(x)


def make_problem(alpha=0.75, beta=0.25, a_mat=None, b_mat=None, drift=None,
                 diffusion=None, lip_b=1.0, lip_sigma=1.0, horizon=1.0, dim=2):
    return ProblemSpec(
        alpha=alpha, beta=beta,
        a_mat=SEC6_A if a_mat is None else a_mat,
        b_mat=SEC6_B if b_mat is None else b_mat,
        drift=sec6_drift if drift is None else drift,
        diffusion=sec6_diffusion if diffusion is None else diffusion,
        lip_b=lip_b, lip_sigma=lip_sigma, horizon=horizon, dim=dim)


@pytest.fixture
def sec6_problem():
    return make_problem()


@pytest.fixture
def eta_state():
    return InitialState.deterministic([3.0, 5.0])


class PresetDriver(BrownianDriver):
    """Driver that serves externally supplied standard normals per path."""

    def __init__(self, normals):
        normals = np.asarray(normals, dtype=float)
        super().__init__(seed=0, n_steps=normals.shape[1])
        self._normals = normals

    def standard_normals(self, path_id):
        return self._normals[path_id]

    def increments_block(self, path_ids, h):
        out = np.array([self._normals[pid] for pid in path_ids])
        return out * np.sqrt(h)
