"""Triangular monotone mapping calculus.

A triangular map on R^d has j-th component depending only on coordinates
1..j. With a monotonicity signature free of zeros (each component strictly
monotone in its own coordinate, direction uniform over prefixes) the map is
invertible coordinate by coordinate; signatures multiply under composition
and survive inversion and slicing. This module provides the map algebra,
black-box probing oracles, one-dimensional increasing-rearrangement
transport, counterfactual transport handles, and the component-wise
bijection diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .errors import (
    BadRange,
    DegenerateDistribution,
    DimMismatch,
    NoBracket,
    NotInvertible,
    NotMonotone,
)

BISECT_WIDTH = 1e-12
MAX_DOUBLINGS = 64
NEWTON_STEPS = 8


def as_signature(entries: Sequence[int] | np.ndarray) -> np.ndarray:
    sig = np.asarray(entries, dtype=np.int64)
    if sig.ndim != 1:
        raise DimMismatch("signature must be one-dimensional")
    if not np.all(np.isin(sig, (-1, 0, 1))):
        raise ValueError("signature entries must be in {-1, 0, +1}")
    return sig


def solve_monotone(
    g: Callable[[float], float],
    target: float,
    sign: int,
    center: float = 0.0,
) -> float:
    """Solve g(x) = target for strictly monotone scalar g with direction sign.

    Brackets by geometric expansion around the input point (factor 2, at
    most 64 doublings), bisects to width 1e-12, then polishes with a few
    finite-difference Newton steps.
    """

    def oriented(x: float) -> float:
        return sign * g(x)

    t = sign * target
    width = 1.0
    lo, hi = center - width, center + width
    glo, ghi = oriented(lo), oriented(hi)
    doublings = 0
    while not (glo <= t <= ghi):
        width *= 2.0
        doublings += 1
        if doublings > MAX_DOUBLINGS:
            raise NoBracket(
                f"no bracket for target {target} after {MAX_DOUBLINGS} doublings"
            )
        lo, hi = center - width, center + width
        glo, ghi = oriented(lo), oriented(hi)
    for _ in range(256):
        if hi - lo <= BISECT_WIDTH:
            break
        mid = 0.5 * (lo + hi)
        if oriented(mid) < t:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(NEWTON_STEPS):
        fx = oriented(x) - t
        if fx == 0.0:
            break
        h = 1e-7 * (1.0 + abs(x))
        slope = (oriented(x + h) - oriented(x - h)) / (2.0 * h)
        if not np.isfinite(slope) or slope <= 0.0:
            break
        step = fx / slope
        if not np.isfinite(step) or abs(step) > (hi - lo) + 1e-9:
            break
        x -= step
    return float(x)


class TriangularMap:
    """A d-dimensional triangular map with a declared monotonicity signature.

    Component j is a function of (prefix x_{1:j-1}, x_j). Maps may be built
    from per-component callables or from a full-vector callable; in the
    latter case components are recovered by zero-padding the tail, which is
    sound because coordinates past j cannot influence output j.
    """

    def __init__(
        self,
        dim: int,
        signature: Sequence[int] | np.ndarray,
        forward: Callable[[np.ndarray], np.ndarray] | None = None,
        components: list[Callable] | None = None,
        component_inverses: list[Callable | None] | None = None,
    ):
        if forward is None and components is None:
            raise ValueError("need a forward callable or per-component callables")
        self.dim = int(dim)
        self.signature = as_signature(signature)
        if self.signature.shape[0] != self.dim:
            raise DimMismatch("signature length must equal dim")
        self._forward = forward
        self._components = components
        self._component_inverses = component_inverses

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the map; accepts (d,) or (n, d)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimMismatch(f"expected last axis {self.dim}, got {x.shape}")
        if self._forward is not None:
            return np.asarray(self._forward(x), dtype=np.float64)
        out = np.empty_like(x)
        for j in range(self.dim):
            out[..., j] = self._components[j](x[..., :j], x[..., j])
        return out

    __call__ = forward

    def component(self, j: int, prefix: np.ndarray, xj):
        """Evaluate component j at a prefix; xj may be scalar or an array."""
        prefix = np.asarray(prefix, dtype=np.float64)
        if self._components is not None:
            return self._components[j](prefix, xj)
        xj_arr = np.asarray(xj, dtype=np.float64)
        shape = np.broadcast_shapes(prefix.shape[:-1] if prefix.ndim else (), xj_arr.shape)
        x = np.zeros(shape + (self.dim,))
        if j > 0:
            x[..., :j] = prefix
        x[..., j] = xj_arr
        out = self.forward(x)[..., j]
        return out if out.shape else float(out)

    def has_component_inverse(self, j: int) -> bool:
        return (
            self._component_inverses is not None
            and self._component_inverses[j] is not None
        )

    def component_inverse(self, j: int, prefix: np.ndarray, zj):
        """Solve component j for its own coordinate; root-finds if no closed form."""
        if self.signature[j] == 0:
            raise NotMonotone(f"component {j} has zero signature entry")
        if self.has_component_inverse(j):
            return self._component_inverses[j](np.asarray(prefix, dtype=np.float64), zj)
        prefix = np.asarray(prefix, dtype=np.float64)
        zj_arr = np.asarray(zj, dtype=np.float64)
        if zj_arr.ndim == 0:
            return solve_monotone(
                lambda x: float(self.component(j, prefix, x)),
                float(zj_arr),
                int(self.signature[j]),
                center=float(zj_arr),
            )
        out = np.empty_like(zj_arr)
        flat_prefix = prefix.reshape(-1, j) if j > 0 else None
        flat_z = zj_arr.reshape(-1)
        flat_out = out.reshape(-1)
        for r in range(flat_z.shape[0]):
            pre = flat_prefix[r] if j > 0 else np.zeros(0)
            flat_out[r] = solve_monotone(
                lambda x: float(self.component(j, pre, x)),
                float(flat_z[r]),
                int(self.signature[j]),
                center=float(flat_z[r]),
            )
        return out


def identity_map(dim: int) -> TriangularMap:
    return affine_triangular(np.eye(dim), np.zeros(dim))


def affine_triangular(L: np.ndarray, b: np.ndarray) -> TriangularMap:
    """x -> L x + b for lower-triangular L with nonzero diagonal."""
    L = np.asarray(L, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = L.shape[0]
    if L.shape != (d, d) or b.shape != (d,):
        raise DimMismatch("L must be (d, d) and b (d,)")
    if np.any(np.triu(L, 1) != 0):
        raise ValueError("L must be lower triangular")
    diag = np.diag(L)
    if np.any(diag == 0):
        raise NotMonotone("diagonal of L must be nonzero")
    sig = np.sign(diag).astype(np.int64)

    def fwd(x: np.ndarray) -> np.ndarray:
        return x @ L.T + b

    comps = []
    inverses = []
    for j in range(d):
        row = L[j, :j].copy()
        ljj = float(L[j, j])
        bj = float(b[j])

        def comp(prefix, xj, row=row, ljj=ljj, bj=bj):
            base = prefix @ row if row.size else 0.0
            return base + ljj * np.asarray(xj) + bj

        def inv(prefix, zj, row=row, ljj=ljj, bj=bj):
            base = prefix @ row if row.size else 0.0
            return (np.asarray(zj) - bj - base) / ljj

        comps.append(comp)
        inverses.append(inv)
    return TriangularMap(d, sig, forward=fwd, components=comps, component_inverses=inverses)


def invert(T: TriangularMap, z: np.ndarray) -> np.ndarray:
    """Coordinate-by-coordinate inverse of a TM map; accepts (d,) or (n, d)."""
    if np.any(T.signature == 0):
        raise NotMonotone("map has zero signature entries; not a TM mapping")
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != T.dim:
        raise DimMismatch(f"expected last axis {T.dim}, got {z.shape}")
    x = np.empty_like(z)
    for j in range(T.dim):
        x[..., j] = T.component_inverse(j, x[..., :j], z[..., j])
    return x


class ComposedMap(TriangularMap):
    """Composition of triangular maps, applied right to left."""

    def __init__(self, outer: TriangularMap, inner: TriangularMap):
        if outer.dim != inner.dim:
            raise DimMismatch(f"dims differ: {outer.dim} vs {inner.dim}")
        layers: list[TriangularMap] = []
        for m in (inner, outer):
            layers.extend(m.layers if isinstance(m, ComposedMap) else [m])
        self.layers = layers  # in application order
        sig = layers[0].signature.copy()
        for m in layers[1:]:
            sig = sig * m.signature
        super().__init__(outer.dim, sig, forward=self._chain)

    def _chain(self, x: np.ndarray) -> np.ndarray:
        for m in self.layers:
            x = m.forward(x)
        return x

    def has_component_inverse(self, j: int) -> bool:
        return all(m.has_component_inverse(j) for m in self.layers)

    def component_inverse(self, j: int, prefix: np.ndarray, zj):
        if not self.has_component_inverse(j):
            return super().component_inverse(j, prefix, zj)
        prefix = np.asarray(prefix, dtype=np.float64)
        # Input prefix of each layer, obtained by pushing the prefix forward.
        prefixes = [prefix]
        for m in self.layers[:-1]:
            cur = prefixes[-1]
            pad = np.zeros(cur.shape[:-1] + (self.dim,))
            if j > 0:
                pad[..., :j] = cur
            prefixes.append(m.forward(pad)[..., :j])
        val = zj
        for m, pre in zip(reversed(self.layers), reversed(prefixes)):
            val = m.component_inverse(j, pre, val)
        return val


def compose(T1: TriangularMap, T2: TriangularMap) -> TriangularMap:
    """T1 after T2; signatures multiply componentwise."""
    return ComposedMap(T1, T2)


def slice_map(T: TriangularMap, i: int, j: int, prefix: np.ndarray) -> TriangularMap:
    """Restriction T_{i:j}(prefix, .) over coordinates i..j (1-based, inclusive)."""
    if not (1 <= i <= j <= T.dim):
        raise BadRange(f"range {i}..{j} invalid for dim {T.dim}")
    prefix = np.asarray(prefix, dtype=np.float64)
    if prefix.shape != (i - 1,):
        raise BadRange(f"prefix must have length {i - 1}, got {prefix.shape}")
    m = j - i + 1
    sig = T.signature[i - 1 : j]

    def make_comp(k):
        def comp(sub_prefix, xk):
            sub_prefix = np.asarray(sub_prefix, dtype=np.float64)
            shape = sub_prefix.shape[:-1]
            full = np.concatenate(
                [np.broadcast_to(prefix, shape + (i - 1,)), sub_prefix], axis=-1
            )
            return T.component(i - 1 + k, full, xk)

        return comp

    def make_inv(k):
        if not T.has_component_inverse(i - 1 + k):
            return None

        def inv(sub_prefix, zk):
            sub_prefix = np.asarray(sub_prefix, dtype=np.float64)
            shape = sub_prefix.shape[:-1]
            full = np.concatenate(
                [np.broadcast_to(prefix, shape + (i - 1,)), sub_prefix], axis=-1
            )
            return T.component_inverse(i - 1 + k, full, zk)

        return inv

    comps = [make_comp(k) for k in range(m)]
    invs = [make_inv(k) for k in range(m)]
    return TriangularMap(m, sig, components=comps, component_inverses=invs)


# -- Black-box probing oracles ------------------------------------------------

def probe_points(dim: int, n_points: int, span: float = 3.0, seed: int = 0) -> np.ndarray:
    """Quasi-random probe points in [-span, span]^dim."""
    sampler = qmc.Halton(d=dim, scramble=True, seed=seed)
    return span * (2.0 * sampler.random(n_points) - 1.0)


def probe_signature(
    T: TriangularMap,
    n_points: int = 100,
    step: float = 1e-5,
    span: float = 3.0,
    seed: int = 0,
) -> np.ndarray:
    """Estimate the signature by central finite differences at random prefixes.

    Returns +1 / -1 where the sign of the own-coordinate difference is
    consistent across all probe points, else 0.
    """
    pts = probe_points(T.dim, n_points, span=span, seed=seed)
    sig = np.zeros(T.dim, dtype=np.int64)
    for j in range(T.dim):
        hi = np.asarray(T.component(j, pts[:, :j], pts[:, j] + step))
        lo = np.asarray(T.component(j, pts[:, :j], pts[:, j] - step))
        diff = hi - lo
        if np.all(diff > 0):
            sig[j] = 1
        elif np.all(diff < 0):
            sig[j] = -1
    return sig


def probe_triangularity(
    fn: Callable[[np.ndarray], np.ndarray],
    dim: int,
    n_points: int = 20,
    bump: float = 0.5,
    seed: int = 0,
) -> float:
    """Max leak of later-coordinate perturbations into earlier outputs.

    Zero (up to float noise) iff output t ignores inputs with index > t on
    the probed points.
    """
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n_points, dim))
    base = np.asarray(fn(pts))
    leak = 0.0
    for k in range(1, dim):
        bumped = pts.copy()
        bumped[:, k] += bump
        out = np.asarray(fn(bumped))
        leak = max(leak, float(np.max(np.abs(out[:, :k] - base[:, :k]))))
    return leak


# -- One-dimensional increasing rearrangement ---------------------------------

class GaussianQuantile:
    """Quantile and CDF of N(mu, sigma^2)."""

    def __init__(self, mu: float = 0.0, sigma: float = 1.0):
        if not sigma > 0:
            raise DegenerateDistribution(f"sigma must be positive, got {sigma}")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def quantile(self, p):
        return self.mu + self.sigma * ndtri(p)

    def cdf(self, x):
        return ndtr((np.asarray(x) - self.mu) / self.sigma)


class EmpiricalQuantile:
    """Midpoint-rank interpolation between order statistics, clamped at the tails.

    Rejects flat quantile segments (tied order statistics): the transport
    construction assumes strictly positive densities.
    """

    def __init__(self, samples: np.ndarray):
        xs = np.sort(np.asarray(samples, dtype=np.float64).ravel())
        if xs.size < 2:
            raise DegenerateDistribution("need at least two samples")
        if np.any(np.diff(xs) == 0.0):
            raise DegenerateDistribution("tied samples give a flat quantile segment")
        self.xs = xs
        n = xs.size
        self.ranks = (np.arange(n) + 0.5) / n

    def quantile(self, p):
        return np.interp(np.asarray(p), self.ranks, self.xs)

    def cdf(self, x):
        return np.interp(np.asarray(x), self.xs, self.ranks)


def kr_transport_1d(source, target, n_check: int = 99) -> TriangularMap:
    """Monotone map pushing the source distribution onto the target.

    Both arguments provide quantile() and cdf(); the map is
    target_quantile(source_cdf(x)), checked strictly increasing on interior
    quantiles.
    """
    ps = np.linspace(0.0, 1.0, n_check + 2)[1:-1]
    for q in (source, target):
        vals = np.asarray(q.quantile(ps))
        if not np.all(np.diff(vals) > 0):
            raise DegenerateDistribution("quantile function is not strictly increasing")

    tiny = 1e-12

    def fwd(x):
        x = np.asarray(x, dtype=np.float64)
        p = np.clip(source.cdf(x[..., 0]), tiny, 1.0 - tiny)
        return np.asarray(target.quantile(p))[..., None]

    def comp(prefix, xj):
        p = np.clip(source.cdf(xj), tiny, 1.0 - tiny)
        return target.quantile(p)

    def inv(prefix, zj):
        p = np.clip(target.cdf(zj), tiny, 1.0 - tiny)
        return source.quantile(p)

    return TriangularMap(
        1, [1], forward=fwd, components=[comp], component_inverses=[inv]
    )


# -- Counterfactual transport --------------------------------------------------

@dataclass
class CtfTransportHandle:
    """y -> f(v_target, f(v_source, .)^{-1}(y)) for one mechanism."""

    mechanism: object
    v_source: np.ndarray
    v_target: np.ndarray

    def __call__(self, y: np.ndarray) -> np.ndarray:
        u = self.mechanism.invert_noise(self.v_source, y)
        return self.mechanism(self.v_target, u)

    def as_map(self) -> TriangularMap:
        sig = np.ones(self.mechanism.dim, dtype=np.int64)
        return TriangularMap(self.mechanism.dim, sig, forward=self.__call__)


def counterfactual_transport(mechanism, v_source, v_target) -> CtfTransportHandle:
    if not getattr(mechanism, "invertible", False):
        raise NotInvertible(f"mechanism for {mechanism.node!r} is not invertible in noise")
    return CtfTransportHandle(
        mechanism,
        np.asarray(v_source, dtype=np.float64),
        np.asarray(v_target, dtype=np.float64),
    )


def markov_transport_check(
    scm,
    node: str,
    v_source: np.ndarray,
    v_target: np.ndarray,
    n: int = 1024,
    seed: int = 0,
    blur: float = 0.05,
) -> float:
    """Divergence between the transported and the direct conditional.

    Samples V_node | pa = v_source by pushing exogenous noise through the
    mechanism, maps through the counterfactual transport, and compares with
    direct samples of V_node | pa = v_target. Near zero under Markovianity;
    a noise distribution that depends on the parents breaks the property
    and drives the score up.
    """
    from .metrics import sinkhorn_divergence

    mech = scm.mechanisms[node]
    handle = counterfactual_transport(mech, v_source, v_target)
    rng = np.random.default_rng(seed)
    u1 = scm.exogenous.sample_node(node, n, rng, v_pa=v_source)
    u2 = scm.exogenous.sample_node(node, n, rng, v_pa=v_target)
    pushed = handle(mech(np.asarray(v_source, dtype=np.float64), u1))
    direct = mech(np.asarray(v_target, dtype=np.float64), u2)
    return sinkhorn_divergence(pushed, direct, blur=blur)


# -- Component-wise bijection diagnostic ---------------------------------------

@dataclass
class EiWitness:
    """Estimated per-parent noise bijections and their spread across parents.

    h_table[m, k] is f_B(v_m, .)^{-1}(f_A(v_m, u_k)); dispersion is the
    largest spread of any entry across the probed parent values, zero iff
    the estimated bijection is identical for every parent value.
    """

    parent_values: np.ndarray
    noise_values: np.ndarray
    h_table: np.ndarray
    dispersion: float

    @property
    def h_estimate(self) -> np.ndarray:
        """The bijection sampled at the noise points (median across parents)."""
        return np.median(self.h_table, axis=0)


def ei_diagnostic(mech_a, mech_b, parent_sample: np.ndarray, noise_sample: np.ndarray) -> EiWitness:
    for mech in (mech_a, mech_b):
        if not getattr(mech, "invertible", False):
            raise NotInvertible(f"mechanism for {mech.node!r} is not invertible in noise")
    if mech_a.dim != mech_b.dim:
        raise DimMismatch(f"node dims differ: {mech_a.dim} vs {mech_b.dim}")
    parents = np.atleast_2d(np.asarray(parent_sample, dtype=np.float64))
    noises = np.atleast_2d(np.asarray(noise_sample, dtype=np.float64))
    m = parents.shape[0]
    table = np.empty((m,) + noises.shape)
    for r in range(m):
        y = mech_a(parents[r], noises)
        table[r] = mech_b.invert_noise(parents[r], y)
    spread = table.max(axis=0) - table.min(axis=0)
    return EiWitness(
        parent_values=parents,
        noise_values=noises,
        h_table=table,
        dispersion=float(spread.max()),
    )
