"""Configurations, labeled states and the pseudonorm on the disjoint-union state set.

A live system's state set is the disjoint union of the state spaces of all
its configurations. Every :class:`LiveState` therefore carries its
:class:`Configuration`; two states are only comparable (or subtractable) when
they live in the same configuration.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, Iterable, Mapping, Sequence, Tuple

import numpy as np

from .errors import AdmissibilityError, DefinitionError

EUCLIDEAN_OF_BLOCKS = "euclidean_of_blocks"

NormFn = Callable[["Configuration", np.ndarray], float]

_NORM_KINDS: Dict[str, NormFn] = {}
_NORM_LOCK = threading.Lock()


def _euclidean_of_blocks(config, data):
    # (sum_j |x_j|^2)^(1/2) equals the Euclidean norm of the stacked vector
    return math.hypot(*data.tolist())


def register_norm_kind(name: str, fn: NormFn, *, replace: bool = False) -> None:
    """Register a norm for configuration state spaces under ``name``.

    ``fn(config, flat_data)`` must be a norm on the configuration's space.
    Re-registering an existing name with a different function raises unless
    ``replace`` is set.
    """
    with _NORM_LOCK:
        if name in _NORM_KINDS and _NORM_KINDS[name] is not fn and not replace:
            raise DefinitionError(f"norm kind {name!r} already registered")
        _NORM_KINDS[name] = fn


def norm_kinds() -> Tuple[str, ...]:
    return tuple(sorted(_NORM_KINDS))


_euclidean_of_blocks.rows = lambda config, states: np.sqrt(np.einsum("ij,ij->i", states, states))
register_norm_kind(EUCLIDEAN_OF_BLOCKS, _euclidean_of_blocks)


@dataclass(frozen=True)
class Configuration:
    """An admissible shape of the system: an ordered agent set with block dims.

    Parameters
    ----------
    id : hashable
        Opaque identifier. Use :meth:`omas` for canonical ids derived from
        agent index sets.
    agents : tuple of int
        Ordered, unique, nonnegative agent indices.
    dims : tuple of int
        ``dims[j]`` is the block dimension of ``agents[j]``.
    norm_kind : str
        Name of a registered norm kind.
    """

    id: Hashable
    agents: Tuple[int, ...]
    dims: Tuple[int, ...]
    norm_kind: str = EUCLIDEAN_OF_BLOCKS
    offsets: Tuple[int, ...] = field(init=False, repr=False, compare=False)
    dim: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        agents = tuple(int(a) for a in self.agents)
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "agents", agents)
        object.__setattr__(self, "dims", dims)
        if not agents:
            raise DefinitionError(f"configuration {self.id!r} has no agents")
        if len(set(agents)) != len(agents):
            raise DefinitionError(f"configuration {self.id!r} repeats an agent index")
        if any(a < 0 for a in agents):
            raise DefinitionError("agent indices must be nonnegative")
        if len(dims) != len(agents) or any(d < 1 for d in dims):
            raise DefinitionError(f"configuration {self.id!r} needs a positive dim per agent")
        offsets = [0]
        for d in dims:
            offsets.append(offsets[-1] + d)
        object.__setattr__(self, "offsets", tuple(offsets))
        object.__setattr__(self, "dim", offsets[-1])

    @classmethod
    def omas(cls, agents: Iterable[int], dims: Mapping[int, int] | Callable[[int], int],
             norm_kind: str = EUCLIDEAN_OF_BLOCKS) -> "Configuration":
        """Canonical configuration for an agent index set.

        The id is the sorted tuple of agent indices, so equal sets give equal ids.
        """
        ordered = tuple(sorted(int(a) for a in agents))
        dim_of = dims if callable(dims) else dims.__getitem__
        return cls(ordered, ordered, tuple(dim_of(a) for a in ordered), norm_kind)

    def index(self, agent: int) -> int:
        try:
            return self.agents.index(agent)
        except ValueError:
            raise KeyError(f"agent {agent} not in configuration {self.id!r}") from None

    def block_slice(self, agent: int) -> slice:
        j = self.index(agent)
        return slice(self.offsets[j], self.offsets[j + 1])

    def dim_of(self, agent: int) -> int:
        return self.dims[self.index(agent)]


def format_config_id(config_id: Hashable) -> str:
    """Render a configuration id for CSV/report output."""
    if isinstance(config_id, tuple):
        return "{" + " ".join(str(a) for a in config_id) + "}"
    return str(config_id)


class LiveState:
    """An element of the state set: a configuration label plus its block vector.

    The flat vector stacks the agent blocks in configuration order. Instances
    are treated as immutable; the underlying array is made read-only.
    """

    __slots__ = ("config", "data")

    def __init__(self, config: Configuration, data):
        arr = np.array(data, dtype=float).reshape(-1)
        if arr.shape[0] != config.dim:
            raise DefinitionError(
                f"state of length {arr.shape[0]} does not fit configuration "
                f"{config.id!r} of dimension {config.dim}")
        arr.flags.writeable = False
        self.config = config
        self.data = arr

    @classmethod
    def _wrap(cls, config: Configuration, arr: np.ndarray) -> "LiveState":
        # trusted fast path for the integrator: no copy, no checks
        obj = cls.__new__(cls)
        obj.config = config
        obj.data = arr
        return obj

    @classmethod
    def from_blocks(cls, config: Configuration, blocks: Mapping[int, Sequence[float]]) -> "LiveState":
        if set(blocks) != set(config.agents):
            raise DefinitionError(
                f"blocks {sorted(blocks)} do not match agents {list(config.agents)}")
        parts = []
        for agent, d in zip(config.agents, config.dims):
            b = np.atleast_1d(np.asarray(blocks[agent], dtype=float))
            if b.shape != (d,):
                raise DefinitionError(f"block of agent {agent} must have length {d}")
            parts.append(b)
        return cls(config, np.concatenate(parts))

    @classmethod
    def zeros(cls, config: Configuration) -> "LiveState":
        return cls(config, np.zeros(config.dim))

    def block(self, agent: int) -> np.ndarray:
        return self.data[self.config.block_slice(agent)]

    @property
    def blocks(self) -> Dict[int, np.ndarray]:
        c = self.config
        return {a: self.data[c.offsets[j]:c.offsets[j + 1]] for j, a in enumerate(c.agents)}

    def __eq__(self, other):
        if not isinstance(other, LiveState):
            return NotImplemented
        return (self.config.id == other.config.id and self.config == other.config
                and np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.config.id, self.data.tobytes()))

    def __repr__(self):
        return f"LiveState(config={format_config_id(self.config.id)}, data={self.data.tolist()})"


def pseudonorm(x: LiveState, registry: Mapping[Hashable, Configuration] | None = None) -> float:
    """Norm of ``x`` in its own configuration space.

    When ``registry`` is given, the state's configuration id must resolve in it.
    """
    if registry is not None and x.config.id not in registry:
        raise DefinitionError(f"unknown configuration id {x.config.id!r}")
    try:
        fn = _NORM_KINDS[x.config.norm_kind]
    except KeyError:
        raise DefinitionError(f"unknown norm kind {x.config.norm_kind!r}") from None
    return fn(x.config, x.data)


def pseudonorm_rows(config: "Configuration", states: np.ndarray) -> np.ndarray:
    """Pseudonorms of many states of one configuration, one per row of ``states``.

    Norm functions may carry a vectorized ``rows(config, states)`` attribute.
    """
    try:
        fn = _NORM_KINDS[config.norm_kind]
    except KeyError:
        raise DefinitionError(f"unknown norm kind {config.norm_kind!r}") from None
    rows = getattr(fn, "rows", None)
    if rows is not None:
        return np.asarray(rows(config, states), dtype=float)
    return np.array([fn(config, row) for row in states])


def scale(lam: float, x: LiveState) -> LiveState:
    """Multiply every block of ``x`` by ``lam``; the configuration is unchanged."""
    return LiveState(x.config, lam * x.data)


def difference_norm(a: LiveState, b: LiveState) -> float:
    """Norm of ``a - b``; only defined inside a single configuration."""
    if a.config.id != b.config.id:
        raise DefinitionError(
            f"cannot subtract states of configurations {a.config.id!r} and {b.config.id!r}")
    return pseudonorm(LiveState._wrap(a.config, a.data - b.data))


@dataclass(frozen=True)
class ConfigTransitionMap:
    """Deterministic configuration update ``(current id, impulse index) -> new id``."""

    rule: Callable[[Hashable, int], Hashable]

    def __call__(self, current: Hashable, k: int) -> Hashable:
        return self.rule(current, k)

    @classmethod
    def identity(cls) -> "ConfigTransitionMap":
        return cls(lambda q, k: q)

    @classmethod
    def from_table(cls, table: Mapping[Tuple[Hashable, int], Hashable]) -> "ConfigTransitionMap":
        frozen = dict(table)

        def rule(q, k):
            try:
                return frozen[(q, k)]
            except KeyError:
                raise DefinitionError(f"no transition defined for ({q!r}, {k})") from None

        return cls(rule)


def transition(q: ConfigTransitionMap, current: Hashable, k: int,
               registry: Mapping[Hashable, Configuration]) -> Hashable:
    """Post-impulse configuration id; the result must be registered."""
    if current not in registry:
        raise DefinitionError(f"configuration {current!r} is not registered")
    nxt = q(current, k)
    if nxt not in registry:
        raise AdmissibilityError(
            f"impulse {k} maps {current!r} to unregistered configuration {nxt!r}", k)
    return nxt
