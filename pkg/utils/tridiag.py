import numpy as np
from scipy.sparse import coo_matrix, diags
from scipy.sparse.linalg import spsolve


def tridiagonal_matrix(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray, periodic: bool):
    """
    Sparse (cyclic) tridiagonal matrix.

    Row i holds sub[i] at column i-1, diag[i] at i and sup[i] at i+1. On a
    periodic system the column indices wrap; otherwise sub[0] and sup[-1] are
    ignored.
    """
    n = diag.size
    if not periodic:
        return diags([sub[1:], diag, sup[:-1]], offsets=[-1, 0, 1], format='csc')
    rows = np.concatenate([np.arange(n)] * 3)
    cols = np.concatenate([(np.arange(n) - 1) % n, np.arange(n), (np.arange(n) + 1) % n])
    # duplicate entries (n = 2) are summed by the conversion
    return coo_matrix((np.concatenate([sub, diag, sup]), (rows, cols)), shape=(n, n)).tocsc()


def solve_tridiagonal(sub, diag, sup, rhs, periodic: bool = False) -> np.ndarray:
    matrix = tridiagonal_matrix(np.asarray(sub, float), np.asarray(diag, float),
                                np.asarray(sup, float), periodic)
    return np.asarray(spsolve(matrix, np.asarray(rhs, float)), dtype=float)
