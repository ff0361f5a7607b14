# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled offspring-summation kernel for the coupled simulation.

Only comparisons against precomputed CDF tables happen here, so the
result is bit-identical to ``ddbranch._pykernels``.  Each table gets a
guide array ``g[i] = min{t : cdf[t] >= i / M}`` (``M`` a power of two, so
``i / M`` and ``u * M`` are exact); the search starts at ``g[floor(u M)]``
and scans forward, which takes O(1) comparisons on average.
"""


from libc.stdlib cimport free, malloc

cdef enum:
    GUIDE_SIZE = 1024


cdef Py_ssize_t* _guide(const double[::1] cdf) except NULL:
    cdef Py_ssize_t* g = <Py_ssize_t*> malloc(GUIDE_SIZE * sizeof(Py_ssize_t))
    cdef Py_ssize_t i, t = 0
    if g == NULL:
        raise MemoryError()
    for i in range(GUIDE_SIZE):
        while cdf[t] < i / <double> GUIDE_SIZE:
            t += 1
        g[i] = t
    return g


cdef inline Py_ssize_t _draw(const double[::1] cdf, const Py_ssize_t* g, double u) noexcept nogil:
    cdef Py_ssize_t t = g[<Py_ssize_t> (u * GUIDE_SIZE)]
    while cdf[t] < u:
        t += 1
    return t


def coupled_generation(const double[::1] cdf_y, const double[::1] cdf_z,
                       const double[::1] u, Py_ssize_t n_z):
    """Offspring totals for one block of uniforms.

    Individual ``j`` contributes the ``u[j]`` quantile of ``cdf_y`` to the
    dominating sum and, for ``j < n_z``, the ``u[j]`` quantile of ``cdf_z``
    to the dominated sum.  Both tables must end at exactly 1 and every
    ``u`` must lie in [0, 1).  Returns ``(z_sum, y_sum)``.
    """
    cdef Py_ssize_t j, n = u.shape[0]
    cdef long long zs = 0, ys = 0
    cdef Py_ssize_t* gy
    cdef Py_ssize_t* gz
    if cdf_y.shape[0] == 0 or cdf_y[cdf_y.shape[0] - 1] != 1.0:
        raise ValueError("cdf_y must end at exactly 1")
    if cdf_z.shape[0] == 0 or cdf_z[cdf_z.shape[0] - 1] != 1.0:
        raise ValueError("cdf_z must end at exactly 1")
    n_z = max(0, min(n_z, n))
    gy = _guide(cdf_y)
    try:
        gz = _guide(cdf_z)
    except MemoryError:
        free(gy)
        raise
    with nogil:
        for j in range(n_z):
            ys += _draw(cdf_y, gy, u[j])
            zs += _draw(cdf_z, gz, u[j])
        for j in range(n_z, n):
            ys += _draw(cdf_y, gy, u[j])
    free(gy)
    free(gz)
    return zs, ys
