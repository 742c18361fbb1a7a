import numpy as np
import pytest


def proj_oracle(A, y):
    """Projection onto span(A) via an SVD basis, independent of the package's MGS."""
    A = np.asarray(A, dtype=float)
    if A.size == 0 or A.shape[1] == 0:
        return np.zeros_like(y)
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    U = U[:, s > 1e-12 * s[0]]
    return U @ (U.T @ y)


def random_instance(rng, m_max=50, n_max=10, m_min=None):
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(m_min or n + 2, m_max + 1))
    return rng.standard_normal((m, n)), rng.standard_normal(m)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def near_orthogonal_instance(rng, n=None, m=60, k=None, big=1.0, small=1e-3, coherence=0.02):
    """Unit columns close to orthonormal; ``k`` coefficients of size >= ``big``
    and the rest of size <= ``small``; the target lies in span(D)."""
    n = n or int(rng.integers(4, 11))
    k = k or int(rng.integers(1, n))
    Q = np.linalg.qr(rng.standard_normal((m, n)))[0]
    D = Q + coherence * rng.standard_normal((m, n)) / np.sqrt(m)
    D /= np.linalg.norm(D, axis=0)
    true = np.sort(rng.choice(n, k, replace=False))
    c = rng.uniform(-small, small, n)
    c[true] = rng.choice([-1, 1], k) * rng.uniform(big, 2 * big, k)
    return D, D @ c, tuple(int(i) for i in true)


def unit_operator_instance(rng, m_max=50, n_max=10):
    D, y = random_instance(rng, m_max, n_max)
    return D / np.linalg.norm(D, 2), y
