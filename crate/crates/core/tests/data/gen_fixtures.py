"""Regenerates the Matrix Market fixtures and their expected products.

Each NAME.mtx gets a NAME.y holding `nrows ncols nnz` and then one line
`re im` per row of A @ x, with x[j] = 1 + j / ncols (+ 0.5j * (j % 3) for
complex matrices). scipy is the independent reader used for the oracle.
"""

import pathlib

import numpy as np
import scipy.io
import scipy.sparse as sp

HERE = pathlib.Path(__file__).parent
rng = np.random.default_rng(20240611)


def x_for(ncols, is_complex):
    j = np.arange(ncols)
    x = 1.0 + j / ncols
    return x + 0.5j * (j % 3) if is_complex else x


def emit(name, a, symmetry, field=None, array=False):
    path = HERE / f"{name}.mtx"
    if array:
        scipy.io.mmwrite(path, np.asarray(a.todense()), symmetry=symmetry, field=field)
    else:
        scipy.io.mmwrite(path, a, symmetry=symmetry, field=field)
    back = scipy.io.mmread(path)
    if array:
        dense = np.asarray(back)
        nnz = dense.size
        if symmetry != "general":
            n = dense.shape[0]
            nnz = n * n if symmetry != "skew-symmetric" else n * n - n
        m = sp.csr_matrix(dense)
    else:
        m = sp.csr_matrix(back)
        m.sum_duplicates()
        nnz = m.nnz
    is_complex = np.iscomplexobj(m.data)
    y = m @ x_for(m.shape[1], is_complex)
    with open(HERE / f"{name}.y", "w") as f:
        f.write(f"{m.shape[0]} {m.shape[1]} {nnz}\n")
        for v in np.atleast_1d(y):
            v = complex(v)
            f.write(f"{v.real:.17e} {v.imag:.17e}\n")


def rand_sparse(n, m, density, dtype=float):
    a = sp.random(n, m, density=density, random_state=rng, format="coo")
    if dtype is complex:
        a = a + 1j * sp.random(n, m, density=density, random_state=rng, format="coo")
    return a


emit("real_general", rand_sparse(30, 30, 0.15), "general")

s = rand_sparse(20, 20, 0.1)
s = sp.tril(s + s.T).tocoo() + sp.eye(20) * 2.0
emit("real_symmetric", (s + sp.tril(s, -1).T).tocoo(), "symmetric")

p = rand_sparse(15, 12, 0.2)
p.data[:] = 1.0
emit("pattern_rect", p, "general", field="pattern")

h = rand_sparse(12, 12, 0.2, complex)
h = (h + h.conj().T).tocoo() + sp.eye(12) * 3.0
emit("complex_hermitian", h.tocoo(), "hermitian")

k = sp.random(10, 10, density=0.3, random_state=rng, format="coo")
k.data = np.round(k.data * 10) + 1
k = sp.tril(k, -1)
emit("integer_skew", (k - k.T).tocoo().astype(np.int64), "skew-symmetric", field="integer")

d = rand_sparse(6, 5, 0.6)
emit("array_real", d, "general", array=True)
