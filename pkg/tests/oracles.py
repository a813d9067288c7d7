"""Independent oracles used to derive the frozen expected values in the suite.

Everything here is deliberately dumb and slow: quadrature at high working
precision, exhaustive enumeration, central finite differences.  None of it
calls into ``weightprov``; the package is checked against these, never the
other way around.

Run ``python tests/oracles.py`` to regenerate the frozen tables printed in
the module docstrings of the test files.
"""

from __future__ import annotations

import itertools

import mpmath as mp
import numpy as np

mp.mp.dps = 60


def student_t_log_sf_quadrature(t, dof):
    """ln P(T_dof > t) by quadrature of the t density.

    Deep tails factor out the leading power so the integrand stays O(1):
    with s = t(1+u), the tail is t^{-dof} * C * int (t^2/(t^2...)) ... more
    simply we substitute s = t/w with w in (0, 1], which maps the infinite
    tail to a finite interval and keeps all magnitudes representable.
    """
    dof = mp.mpf(dof)
    t = mp.mpf(t)
    norm = mp.gamma((dof + 1) / 2) / (mp.sqrt(dof * mp.pi) * mp.gamma(dof / 2))

    def density(s):
        return norm * (1 + s * s / dof) ** (-(dof + 1) / 2)

    if t <= 0:
        upper = mp.quad(density, [-mp.inf, t])
        return float(mp.log(1 - upper))
    if t < 10:
        return float(mp.log(mp.quad(density, [t, mp.inf])))
    # s = t / w, ds = -t / w^2 dw;  integral over w in (0, 1].
    # factor (s^2/dof)^{-(dof+1)/2} = (t/w)^{-(dof+1)} dof^{(dof+1)/2} out:
    #   (1 + s^2/dof)^-(dof+1)/2 = (s^2/dof)^... * (1 + dof/s^2)^-(dof+1)/2
    def scaled(w):
        s2 = (t / w) ** 2
        return (w ** (dof - 1)) * (1 + dof / s2) ** (-(dof + 1) / 2)

    ln_tail = (
        mp.log(norm)
        + ((dof + 1) / 2) * mp.log(dof)
        - dof * mp.log(t)
        + mp.log(mp.quad(scaled, [0, 1]))
    )
    return float(ln_tail)


def chi2_log_sf_quadrature(x, dof):
    """ln P(chi2_dof > x) by quadrature with the exponential factored out.

    Substituting s = x + r gives tail = e^{-x/2} * int_0^inf (x+r)^{dof/2-1}
    e^{-r/2} dr / (2^{dof/2} Gamma(dof/2)); the remaining integrand is
    well-scaled even when the tail itself is astronomically small.
    """
    x = mp.mpf(x)
    dof = mp.mpf(dof)
    if x == 0:
        return 0.0

    def shifted(r):
        return (x + r) ** (dof / 2 - 1) * mp.e ** (-r / 2)

    ln_integral = mp.log(mp.quad(shifted, [0, mp.inf]))
    return float(
        -x / 2 + ln_integral - (dof / 2) * mp.log(2) - mp.loggamma(dof / 2)
    )


def chi2_quantile(p_upper, dof):
    """x with P(chi2_dof > x) = p_upper, bisected against the quadrature CDF."""
    lo, hi = mp.mpf(0), mp.mpf(dof) * 20
    for _ in range(200):
        mid = (lo + hi) / 2
        if chi2_log_sf_quadrature(mid, dof) > mp.log(p_upper):
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def brute_force_assignment(sim):
    """Exhaustively maximise sum of sim[i, a(i)] over injective assignments.

    Returns (best_value, assignment) where the assignment is indexed by the
    smaller side of the matrix, exactly like ``weightprov.matching.solve_lap``.
    """
    sim = np.asarray(sim, dtype=np.float64)
    h1, h2 = sim.shape
    transposed = h1 > h2
    if transposed:
        sim = sim.T
        h1, h2 = h2, h1
    best_value = -np.inf
    best = None
    for cols in itertools.permutations(range(h2), h1):
        value = sim[np.arange(h1), list(cols)].sum()
        if value > best_value:
            best_value = value
            best = np.array(cols, dtype=np.int64)
    return best_value, best


def finite_difference_grads(forward, params, upstream, eps=1e-5):
    """Central finite differences of <forward(params), upstream> per tensor.

    ``forward`` maps a list of arrays to an output array; returns one
    gradient array per parameter tensor.
    """
    grads = []
    for k, theta in enumerate(params):
        g = np.zeros_like(theta)
        it = np.nditer(theta, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            bumped = [p.copy() for p in params]
            bumped[k][idx] += eps
            hi = float((forward(bumped) * upstream).sum())
            bumped[k][idx] -= 2 * eps
            lo = float((forward(bumped) * upstream).sum())
            g[idx] = (hi - lo) / (2 * eps)
            it.iternext()
        grads.append(g)
    return grads


def sphere_coordinate_cdf(x, n):
    """CDF of one coordinate of a uniform point on the (n-1)-sphere."""
    x = np.clip(x, -1.0, 1.0)
    if n == 4:
        return 0.5 + (x * np.sqrt(1 - x * x) + np.arcsin(x)) / np.pi
    raise NotImplementedError("only the n=4 marginal is needed")


def _fmt(v):
    return mp.nstr(mp.mpf(v), 22)


def main():
    print("# student_t_log_sf oracle values (dof, t, ln_sf)")
    for dof in (1, 3, 8, 30):
        for t in (0.0, 0.5, 1.0, 2.0, 3.0, 3.5762265296052993, 5.0, 10.0, 20.0, 40.0):
            print(f"    ({dof}, {t!r}, {student_t_log_sf_quadrature(t, dof)!r}),")
    print("# deep-tail values")
    for dof, t in ((1, 1e12), (8, 1e6), (30, 1e28), (30, -40.0), (3, -2.0)):
        print(f"    ({dof}, {t!r}, {student_t_log_sf_quadrature(t, dof)!r}),")
    print("# chi2_even_log_sf oracle values (dof, x, ln_sf)")
    for dof in (2, 4, 8, 20, 64):
        for x in (0.5, 1.0, 4.0, 7.824, 30.0, 100.0, 1000.0):
            print(f"    ({dof}, {x!r}, {chi2_log_sf_quadrature(x, dof)!r}),")
    print(f"    (64, 1e6, {chi2_log_sf_quadrature(1e6, 64)!r}),")
    print("# spearman example: h=5, sum d^2 = 2 -> t")
    r = mp.mpf(9) / 10
    t = r * mp.sqrt(3 / (1 - r * r))
    print("    t =", _fmt(t))
    print("    p =", _fmt(mp.e ** mp.mpf(student_t_log_sf_quadrature(float(t), 3))))
    print("# chi-square upper 1% quantiles (dof: x_crit)")
    for dof in (19,):
        print(f"    {dof}: {chi2_quantile(0.01, dof)!r},")
    print("# silu scalar example 3*silu(1)*2")
    print("    ", _fmt(6 / (1 + mp.e ** -1)))
    print("# jsd((1,0),(0.5,0.5)) in nats")
    val = mp.mpf("0.5") * mp.log(mp.mpf(4) / 3) + mp.mpf("0.5") * (
        mp.mpf("0.5") * mp.log(mp.mpf(2) / 3) + mp.mpf("0.5") * mp.log(2)
    )
    print("    ", _fmt(val))


if __name__ == "__main__":
    main()
