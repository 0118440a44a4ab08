"""Octonion arithmetic on numpy arrays.

An octonion is stored as a float64 array whose last axis has length 8:
index 0 is the real part and indices 1..7 are the imaginary coordinates.
Every function broadcasts over leading axes.

The cross product on Im(O) = R^7 is fixed by the 3-form

    phi0 = e123 + e145 + e167 + e246 - e257 - e347 - e356

through <a x b, c> = phi0(a, b, c), and the product is

    (a, alpha)(b, beta) = (ab - <alpha, beta>, a beta + b alpha + alpha x beta).
"""

from itertools import permutations

import numpy as np

from .constants import CONSTANTS

# Oriented triples (1-based) with sign, as they appear in phi0.
PHI0_TRIPLES = (
    (1, 2, 3, 1.0),
    (1, 4, 5, 1.0),
    (1, 6, 7, 1.0),
    (2, 4, 6, 1.0),
    (2, 5, 7, -1.0),
    (3, 4, 7, -1.0),
    (3, 5, 6, -1.0),
)


def _perm_sign(p):
    p = list(p)
    sign = 1
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


def phi0_tensor():
    """Fully antisymmetric 7x7x7 array of phi0 (0-based indices)."""
    phi = np.zeros((7, 7, 7))
    for i, j, k, c in PHI0_TRIPLES:
        idx = (i - 1, j - 1, k - 1)
        for p in permutations(range(3)):
            phi[idx[p[0]], idx[p[1]], idx[p[2]]] = c * _perm_sign(p)
    return phi


PHI0 = phi0_tensor()

# Gather tables for the cross product: (a x b)_k = sum_t c_t a_{i_t} b_{j_t},
# six terms per output index k, sorted by k.
def _cross_tables():
    terms = []
    for i, j, k, c in PHI0_TRIPLES:
        a, b, d = i - 1, j - 1, k - 1
        # cyclic rotations carry the same sign, transpositions flip it
        for x, y, z in ((a, b, d), (b, d, a), (d, a, b)):
            terms.append((z, x, y, c))
            terms.append((z, y, x, -c))
    terms.sort()
    k, i, j, c = (np.array(t) for t in zip(*terms))
    return i, j, np.asarray(c, dtype=float)


_CI, _CJ, _CC = _cross_tables()


def cross(a, b):
    """Cross product on R^7, broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    prod = a[..., _CI] * b[..., _CJ] * _CC
    return prod.reshape(prod.shape[:-1] + (7, 6)).sum(axis=-1)


def mul(p, q):
    """Octonion product p q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    a, al = p[..., :1], p[..., 1:]
    b, be = q[..., :1], q[..., 1:]
    im = a * be + b * al + cross(al, be)
    out = np.empty(im.shape[:-1] + (8,))
    out[..., 0] = (a * b)[..., 0] - np.sum(al * be, axis=-1)
    out[..., 1:] = im
    return out


def conj(p):
    p = np.asarray(p, dtype=float)
    out = -p
    out[..., 0] = p[..., 0]
    return out


def norm2(p):
    return np.sum(np.asarray(p) ** 2, axis=-1)


def norm(p):
    return np.sqrt(norm2(p))


class DegenerateDivisor(ZeroDivisionError):
    pass


def divisor_norm2(q):
    n2 = norm2(q)
    if np.any(np.sqrt(n2) < CONSTANTS.degenerate_norm):
        raise DegenerateDivisor("octonion divisor has norm below the degeneracy threshold")
    return n2[..., None]


def inv(p):
    return conj(p) / divisor_norm2(p)


def rquot(p, q):
    """Right quotient p / q, the unique x with x q = p."""
    return mul(p, conj(q)) / divisor_norm2(q)


def lquot(p, q):
    """Left quotient q \\ p, the unique x with q x = p."""
    return mul(conj(q), p) / divisor_norm2(q)


def associator(x, y, z):
    """Standard associator (xy)z - x(yz)."""
    return mul(mul(x, y), z) - mul(x, mul(y, z))


def embed(xi):
    """Purely imaginary octonion with imaginary part xi."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape[:-1] + (8,))
    out[..., 1:] = xi
    return out


def unit(shape=()):
    out = np.zeros(tuple(shape) + (8,))
    out[..., 0] = 1.0
    return out


def basis(i):
    e = np.zeros(8)
    e[i] = 1.0
    return e


def exp_imag(xi):
    """exp(xi) = cos|xi| + sin|xi| xi/|xi| for imaginary xi (shape (..., 7))."""
    xi = np.asarray(xi, dtype=float)
    r = np.sqrt(np.sum(xi * xi, axis=-1))
    out = np.empty(xi.shape[:-1] + (8,))
    out[..., 0] = np.cos(r)
    out[..., 1:] = np.sinc(r / np.pi)[..., None] * xi
    return out


def log_unit(p):
    """Inverse of exp_imag on unit octonions away from -1."""
    p = np.asarray(p, dtype=float)
    im = p[..., 1:]
    s = np.sqrt(np.sum(im * im, axis=-1))
    ang = np.arctan2(s, p[..., 0])
    scale = np.where(s > 1e-300, ang / np.where(s > 1e-300, s, 1.0), 1.0)
    return scale[..., None] * im


def normalize(p):
    return p / norm(p)[..., None]


def left_matrix(p):
    """8x8 matrix L_p with L_p x = p x (broadcast over leading axes of p)."""
    p = np.asarray(p, dtype=float)
    eye = np.eye(8)
    cols = mul(p[..., None, :], eye)  # (..., 8 columns, 8)
    return np.swapaxes(cols, -1, -2)


def right_matrix(p):
    """8x8 matrix R_p with R_p x = x p."""
    p = np.asarray(p, dtype=float)
    eye = np.eye(8)
    cols = mul(eye, p[..., None, :])
    return np.swapaxes(cols, -1, -2)


def structure_tensor():
    """C[i, j, k] with (e_i e_j)_k = C[i, j, k]."""
    eye = np.eye(8)
    return mul(eye[:, None, :], eye[None, :, :])


def random_octonions(rng, n, unit_norm=False):
    x = rng.standard_normal((n, 8))
    return normalize(x) if unit_norm else x
