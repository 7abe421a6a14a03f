import numpy as np
import pytest

import perimap as pm


@pytest.fixture(scope="session")
def e1():
    return pm.linear_shear()


@pytest.fixture(scope="session")
def e2():
    return pm.nonlinear_toy()


@pytest.fixture(scope="session")
def e3():
    return pm.polar_hybrid(kappa=0.5, T_g=0.8)


@pytest.fixture(scope="session")
def handle(e3):
    return pm.prepare_handle(e3)


@pytest.fixture(scope="session")
def wrapped(handle):
    return pm.extract_alpha_beta(handle)


@pytest.fixture(scope="session")
def hybrid_curve(wrapped):
    """Converged invariant curve of the wrapped Poincare map at eps = 0.01."""
    cfg = pm.CurveConfig(n_nodes=256, tol=1e-12, max_iter=60,
                         preimage_tol=1e-11)
    curve, report = pm.solve_invariant_curve(wrapped, 1.0, 0.01, cfg)
    assert report.converged
    return curve


def closed_form_shear(omega, q, eps):
    """The invariant curve of the linear shear: phi(x) = Im(c e^{2 pi i x})."""
    c = eps / (np.exp(2j * np.pi * omega) - q)

    def phi(x):
        return (c * np.exp(2j * np.pi * np.asarray(x, float))).imag

    return phi, c


@pytest.fixture(scope="session")
def shear_oracle():
    return closed_form_shear
