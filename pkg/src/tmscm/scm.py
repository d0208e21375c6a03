"""Recursive structural causal models over vector-valued variables.

An SCM couples a causal graph with one mechanism per node and an exogenous
distribution. Values travel as dicts mapping node id to an array of shape
(d_i,) or (n, d_i); the solver walks the causal order and feeds each
mechanism the concatenated parent values. Ground-truth SCMs and fitted
models share the Mechanism interface, so one solver serves both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoSampler, NotInvertible, ShapeMismatch, UnknownNode
from .graph import CausalGraph
from .triangular import TriangularMap, as_signature
from .vectorize import Vectorization, build_vectorization


class Mechanism:
    """One structural equation: (parent values, noise) -> node value.

    Subclasses implement __call__ with numpy broadcasting over a leading
    batch axis. Mechanisms declaring invertible=True must be bijective in
    the noise argument for every parent value; those with a zero-free
    signature are triangular monotone in noise with that fixed signature.
    """

    node: str
    dim: int
    parents: tuple[str, ...]
    signature: np.ndarray
    invertible: bool = False

    def __init__(self, node: str, dim: int, parents: tuple[str, ...], signature):
        self.node = node
        self.dim = int(dim)
        self.parents = tuple(parents)
        self.signature = as_signature(signature)

    def __call__(self, v_pa: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def noise_map(self, v_pa: np.ndarray) -> TriangularMap:
        """f(v_pa, .) as a triangular map over the noise coordinates."""
        v_pa = np.asarray(v_pa, dtype=np.float64)
        return TriangularMap(
            self.dim, self.signature, forward=lambda u: self(v_pa, u)
        )

    def invert_noise(self, v_pa: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Solve f(v_pa, u) = v for u; generic coordinate-wise root finding."""
        from .triangular import invert

        if not self.invertible:
            raise NotInvertible(f"mechanism for {self.node!r} is not invertible in noise")
        v_pa = np.asarray(v_pa, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if v_pa.ndim <= 1:
            return invert(self.noise_map(v_pa), v)
        out = np.empty_like(v)
        for r in range(v_pa.shape[0]):
            out[r] = invert(self.noise_map(v_pa[r]), v[r])
        return out

    def invert_noise_coordinate(self, v_pa, u_prefix, j: int, target):
        """Solve coordinate j of f(v_pa, .) given the earlier noise coordinates."""
        if not self.invertible:
            raise NotInvertible(f"mechanism for {self.node!r} is not invertible in noise")
        v_pa = np.asarray(v_pa, dtype=np.float64)
        u_prefix = np.asarray(u_prefix, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if v_pa.ndim <= 1 and target.ndim == 0:
            return self.noise_map(v_pa).component_inverse(j, u_prefix, target)
        shape = target.shape
        out = np.empty(shape)
        vp = np.broadcast_to(v_pa, shape + v_pa.shape[-1:]) if v_pa.size else v_pa
        for r in range(int(np.prod(shape))):
            idx = np.unravel_index(r, shape)
            pa_r = vp[idx] if v_pa.size else v_pa
            out[idx] = self.noise_map(pa_r).component_inverse(
                j, u_prefix[idx], float(target[idx])
            )
        return out


class ConstantMechanism(Mechanism):
    """Intervened equation: ignores parents and noise, returns a constant."""

    def __init__(self, node: str, parents: tuple[str, ...], value: np.ndarray):
        value = np.asarray(value, dtype=np.float64)
        super().__init__(node, value.shape[-1], parents, np.zeros(value.shape[-1], dtype=int))
        self.value = value
        self.invertible = False

    def __call__(self, v_pa: np.ndarray, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return np.broadcast_to(self.value, u.shape).copy()


# -- Exogenous distributions ----------------------------------------------------

class StandardNormalNoise:
    def __init__(self, dim: int):
        self.dim = int(dim)

    def sample(self, n: int, rng: np.random.Generator, v_pa=None) -> np.ndarray:
        return rng.standard_normal((n, self.dim))

    def logpdf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return -0.5 * (np.sum(u * u, axis=-1) + self.dim * np.log(2.0 * np.pi))


class GaussianMixtureNoise:
    """Equal-dimension diagonal Gaussian mixture."""

    def __init__(self, weights: np.ndarray, means: np.ndarray, stds: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.stds = np.asarray(stds, dtype=np.float64)
        if not np.isclose(self.weights.sum(), 1.0):
            raise ValueError("mixture weights must sum to 1")
        self.dim = self.means.shape[1]

    def sample(self, n: int, rng: np.random.Generator, v_pa=None) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + self.stds[comp] * z

    def logpdf(self, u: np.ndarray) -> np.ndarray:
        from scipy.special import logsumexp

        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        z = (u[:, None, :] - self.means[None]) / self.stds[None]
        comp_lp = -0.5 * (
            np.sum(z * z, axis=-1)
            + self.dim * np.log(2.0 * np.pi)
            + 2.0 * np.sum(np.log(self.stds), axis=-1)[None]
        )
        return logsumexp(comp_lp + np.log(self.weights)[None], axis=-1)


class PointMassNoise:
    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.dim = self.value.shape[-1]

    def sample(self, n: int, rng: np.random.Generator, v_pa=None) -> np.ndarray:
        return np.tile(self.value, (n, 1))


class ParentShiftedNormal:
    """Standard normal shifted by the parent values: a Markovianity violation."""

    def __init__(self, dim: int, coef: float):
        self.dim = int(dim)
        self.coef = float(coef)

    def sample(self, n: int, rng: np.random.Generator, v_pa=None) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        if v_pa is None:
            return z
        shift = self.coef * np.sum(np.asarray(v_pa, dtype=np.float64), axis=-1)
        return z + np.reshape(shift, np.shape(shift) + (1,))


@dataclass
class ExogenousSpec:
    """Per-node noise distributions; product_form marks the Markovian case."""

    dists: dict[str, object]
    product_form: bool = True

    def sample(self, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if not self.product_form:
            raise NoSampler("joint sampling requires a product-form exogenous distribution")
        return {node: self.sample_node(node, n, rng) for node in self.dists}

    def sample_node(self, node: str, n: int, rng: np.random.Generator, v_pa=None) -> np.ndarray:
        dist = self.dists[node]
        if not hasattr(dist, "sample"):
            raise NoSampler(f"distribution for node {node!r} has no sampler")
        return dist.sample(n, rng, v_pa=v_pa)

    def logpdf(self, u: dict[str, np.ndarray]) -> np.ndarray:
        total = 0.0
        for node, dist in self.dists.items():
            total = total + dist.logpdf(u[node])
        return total

    @staticmethod
    def standard_normal(graph: CausalGraph) -> "ExogenousSpec":
        return ExogenousSpec({n: StandardNormalNoise(graph.dims[n]) for n in graph.order})


# -- The SCM and its operations --------------------------------------------------

@dataclass(frozen=True)
class Intervention:
    """do(V_i = x_i) targets; node ids must be distinct and exist in the graph."""

    targets: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self,
            "targets",
            {n: np.asarray(v, dtype=np.float64) for n, v in self.targets.items()},
        )

    def validate(self, graph: CausalGraph) -> None:
        for node, value in self.targets.items():
            graph.check_node(node)
            if value.shape != (graph.dims[node],):
                raise ShapeMismatch(
                    f"intervention on {node!r} expects shape ({graph.dims[node]},),"
                    f" got {value.shape}"
                )

    @property
    def is_empty(self) -> bool:
        return not self.targets


@dataclass(frozen=True)
class Scm:
    graph: CausalGraph
    mechanisms: dict[str, Mechanism]
    exogenous: ExogenousSpec

    def __post_init__(self):
        for node in self.graph.nodes:
            if node not in self.mechanisms:
                raise UnknownNode(f"no mechanism for node {node!r}")
            mech = self.mechanisms[node]
            if mech.dim != self.graph.dims[node]:
                raise ShapeMismatch(
                    f"mechanism dim {mech.dim} != graph dim {self.graph.dims[node]}"
                    f" for node {node!r}"
                )
            if set(mech.parents) != set(self.graph.parents[node]):
                raise ShapeMismatch(f"mechanism parents mismatch for node {node!r}")

    @property
    def markovian(self) -> bool:
        return self.exogenous.product_form


def _check_values(graph: CausalGraph, values: dict[str, np.ndarray], what: str) -> dict:
    out = {}
    for node in graph.order:
        if node not in values:
            raise ShapeMismatch(f"missing {what} for node {node!r}")
        arr = np.asarray(values[node], dtype=np.float64)
        if arr.shape[-1] != graph.dims[node]:
            raise ShapeMismatch(
                f"{what} for node {node!r} expects last axis {graph.dims[node]},"
                f" got {arr.shape}"
            )
        out[node] = arr
    return out


def parent_values(graph: CausalGraph, node: str, v: dict[str, np.ndarray]) -> np.ndarray:
    """Concatenate parent blocks in causal order; empty (..., 0) for roots."""
    pa = graph.sorted_parents(node)
    if not pa:
        sample = v[graph.order[0]] if v else np.zeros(graph.dims[graph.order[0]])
        return np.zeros(np.asarray(sample).shape[:-1] + (0,))
    return np.concatenate([v[p] for p in pa], axis=-1)


def solve(scm: Scm, u: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Evaluate the structural equations in causal order: the solution mapping."""
    u = _check_values(scm.graph, u, "exogenous value")
    v: dict[str, np.ndarray] = {}
    for node in scm.graph.order:
        v[node] = scm.mechanisms[node](parent_values(scm.graph, node, v), u[node])
    return v


def intervene(scm: Scm, x: Intervention) -> Scm:
    """Submodel with intervened mechanisms replaced by constants."""
    x.validate(scm.graph)
    mechs = dict(scm.mechanisms)
    for node, value in x.targets.items():
        mechs[node] = ConstantMechanism(node, scm.graph.sorted_parents(node), value)
    return Scm(graph=scm.graph, mechanisms=mechs, exogenous=scm.exogenous)


def potential_response(scm: Scm, x: Intervention, u: dict[str, np.ndarray]) -> dict:
    """Solution of the submodel at u."""
    return solve(intervene(scm, x), u)


def sample_counterfactual_joint(
    scm: Scm,
    interventions: list[Intervention],
    n: int,
    seed: int = 0,
) -> list[dict[str, np.ndarray]]:
    """Joint counterfactual samples: all potential responses on shared noise draws."""
    rng = np.random.default_rng(seed)
    u = scm.exogenous.sample(n, rng)
    return [potential_response(scm, x, u) for x in interventions]


def abduct_scm(scm: Scm, v: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Recover exogenous values from an observation, node block by node block."""
    v = _check_values(scm.graph, v, "endogenous value")
    u: dict[str, np.ndarray] = {}
    for node in scm.graph.order:
        u[node] = scm.mechanisms[node].invert_noise(
            parent_values(scm.graph, node, v), v[node]
        )
    return u


# -- Flat solution-map view -------------------------------------------------------

class ScmFlatMap(TriangularMap):
    """The vectorized solution mapping of an SCM as a triangular map.

    Component inverses delegate to per-mechanism coordinate inversion, with
    the parent values reconstructed from the flat noise prefix.
    """

    def __init__(self, scm: Scm, vec: Vectorization):
        self.scm = scm
        self.vec = vec
        sig = np.concatenate(
            [scm.mechanisms[node].signature for node in vec.order]
        )
        super().__init__(vec.dim, sig, forward=self._fwd)
        self._coord_node = []
        for node in vec.order:
            for j in range(scm.graph.dims[node]):
                self._coord_node.append((node, j))

    def _fwd(self, u_flat: np.ndarray) -> np.ndarray:
        return self.vec.flatten(solve(self.scm, self.vec.unflatten(u_flat)))

    def has_component_inverse(self, t: int) -> bool:
        node, _ = self._coord_node[t]
        return self.scm.mechanisms[node].invertible

    def component_inverse(self, t: int, prefix: np.ndarray, zt):
        node, j = self._coord_node[t]
        mech = self.scm.mechanisms[node]
        if not mech.invertible:
            return super().component_inverse(t, prefix, zt)
        prefix = np.asarray(prefix, dtype=np.float64)
        pad = np.zeros(prefix.shape[:-1] + (self.dim,))
        if t > 0:
            pad[..., :t] = prefix
        v = solve(self.scm, self.vec.unflatten(pad))
        v_pa = parent_values(self.scm.graph, node, v)
        start = self.vec.offsets[node]
        u_prefix = prefix[..., start:t]
        return mech.invert_noise_coordinate(v_pa, u_prefix, j, zt)


def flat_solution_map(scm: Scm, vec: Vectorization | None = None) -> ScmFlatMap:
    if vec is None:
        vec = build_vectorization(scm.graph)
    return ScmFlatMap(scm, vec)
