"""Open multi-agent systems: agents that join and leave at impulse times.

At impulse ``k`` the agent set becomes ``(I_prev | B[k]) - D[k]``. Joining
agents take their initial block from their own input channel, read
right-continuously at the impulse time; remaining agents apply their
survivor map to the left-limit state and input (identity by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import (Callable, Dict, FrozenSet, Hashable, Iterable, Iterator, List, Mapping,
                    Optional, Sequence, Tuple)

import numpy as np

from .core_state import (EUCLIDEAN_OF_BLOCKS, ConfigTransitionMap, Configuration, LiveState,
                         format_config_id)
from .errors import AdmissibilityError, DefinitionError, InputError
from .flow_engine import ImpulseSchedule, LiveSystemDefinition, DEFAULT_ESCAPE
from .numerics import snapped_grid
from .signals import InputValue


@dataclass(frozen=True, eq=False)
class LinearAgent:
    """``x_i' = A x_i`` (plus ``B u_i`` when ``B`` is given)."""

    A: np.ndarray
    B: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DefinitionError("agent matrix must be square")
        object.__setattr__(self, "A", A)
        if self.B is not None:
            B = np.asarray(self.B, dtype=float)
            B = B.reshape(A.shape[0], -1)
            object.__setattr__(self, "B", B)

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class FunctionAgent:
    """General agent: ``f(t, x, u_i)`` returns the derivative of the agent's block.

    ``x`` is the whole current state (a :class:`LiveState`), ``u_i`` the agent's
    own input value or ``None`` when it has no channel.
    """

    dim: int
    f: Callable[[float, LiveState, Optional[np.ndarray]], np.ndarray]


AgentSpec = LinearAgent | FunctionAgent
SurvivorMap = Callable[[LiveState, InputValue, int], np.ndarray]
ArrivalRule = Callable[[int, LiveState, InputValue, InputValue], np.ndarray]


@dataclass(frozen=True, eq=False)
class OmasDefinition:
    """Open multi-agent system.

    Parameters
    ----------
    agents : mapping
        ``agent index -> LinearAgent | FunctionAgent``.
    initial : iterable of int
        Initial agent set.
    arrivals, departures : mapping
        ``impulse index k -> set of agent indices``.
    default_agent : LinearAgent or FunctionAgent, optional
        Dynamics of every agent not listed in ``agents``.
    survivors : mapping, optional
        ``agent -> g_i(pre_state, u_left, agent)``; identity when absent.
    arrival_rule : callable, optional
        Overrides how a joining agent's block is produced; the default reads
        its input channel at the impulse time.
    """

    agents: Mapping[int, AgentSpec]
    initial: FrozenSet[int]
    arrivals: Mapping[int, FrozenSet[int]] = field(default_factory=dict)
    departures: Mapping[int, FrozenSet[int]] = field(default_factory=dict)
    default_agent: Optional[AgentSpec] = None
    survivors: Mapping[int, SurvivorMap] = field(default_factory=dict)
    arrival_rule: Optional[ArrivalRule] = None
    norm_kind: str = EUCLIDEAN_OF_BLOCKS
    escape_threshold: float = DEFAULT_ESCAPE

    def __post_init__(self):
        object.__setattr__(self, "agents", {int(a): s for a, s in self.agents.items()})
        object.__setattr__(self, "initial", frozenset(int(a) for a in self.initial))
        object.__setattr__(self, "arrivals",
                           {int(k): frozenset(int(a) for a in v) for k, v in self.arrivals.items()})
        object.__setattr__(self, "departures",
                           {int(k): frozenset(int(a) for a in v) for k, v in self.departures.items()})
        if not self.initial:
            raise DefinitionError("initial agent set is empty")

    def spec(self, agent: int) -> AgentSpec:
        s = self.agents.get(agent, self.default_agent)
        if s is None:
            raise DefinitionError(f"no dynamics for agent {agent}")
        return s

    def dim_of(self, agent: int) -> int:
        return self.spec(agent).dim

    def configuration(self, agents: Iterable[int]) -> Configuration:
        return Configuration.omas(agents, self.dim_of, self.norm_kind)

    def update(self, current: FrozenSet[int], k: int) -> FrozenSet[int]:
        """Agent set after impulse ``k``; enforces the admissibility rules."""
        B = self.arrivals.get(k, frozenset())
        D = self.departures.get(k, frozenset())
        clash = B & current
        if clash:
            raise AdmissibilityError(
                f"impulse {k}: agents {sorted(clash)} arrive while already present", k)
        if not D <= current:
            raise AdmissibilityError(
                f"impulse {k}: agents {sorted(D - current)} depart without being present", k)
        nxt = (current | B) - D
        if not nxt:
            raise AdmissibilityError(f"impulse {k}: configuration becomes empty", k)
        return frozenset(nxt)


@dataclass(frozen=True)
class JumpOutcome:
    config: Configuration
    state: LiveState


def _stacked_field(omas: OmasDefinition, config: Configuration):
    # runs of consecutive input-free linear agents sharing one matrix are
    # integrated as a single (n, s) @ A^T product
    groups: List[tuple] = []
    for j, a in enumerate(config.agents):
        spec = omas.spec(a)
        off = config.offsets[j]
        if isinstance(spec, LinearAgent) and spec.B is None:
            last = groups[-1] if groups else None
            if last is not None and last[0] == "run" and last[3] is spec and \
                    last[1] + last[2] * spec.dim == off:
                groups[-1] = ("run", last[1], last[2] + 1, spec)
                continue
            groups.append(("run", off, 1, spec))
        elif isinstance(spec, LinearAgent):
            groups.append(("lin_in", off, a, spec))
        else:
            groups.append(("fn", off, a, spec))
    needs_state = any(g[0] == "fn" for g in groups)

    def fld(t, y, u):
        out = np.empty_like(y)
        x = LiveState._wrap(config, y) if needs_state else None
        for kind, off, extra, spec in groups:
            if kind == "run":
                s = spec.dim
                block = y[off:off + extra * s].reshape(extra, s)
                out[off:off + extra * s] = (block @ spec.A.T).reshape(-1)
            elif kind == "lin_in":
                s = spec.dim
                ui = u.get(extra)
                if ui is None:
                    raise InputError(f"agent {extra} needs an input channel")
                out[off:off + s] = spec.A @ y[off:off + s] + spec.B @ ui
            else:
                s = spec.dim
                out[off:off + s] = spec.f(t, x, u.get(extra))
        return out

    return fld


def _read_arrival(agent: int, pre: LiveState, u_left: InputValue, u_at: InputValue) -> np.ndarray:
    v = u_at.get(agent)
    if v is None:
        raise InputError(f"arriving agent {agent} has no input channel to read its state from")
    return v


def _jump_rule(omas: OmasDefinition, src: Configuration, dst: Configuration):
    src_set = set(src.agents)
    arriving = [a for a in dst.agents if a not in src_set]
    mapped = [a for a in dst.agents if a in src_set and a in omas.survivors]
    copy_dst, copy_src = [], []
    for a in dst.agents:
        if a in src_set and a not in omas.survivors:
            d_sl, s_sl = dst.block_slice(a), src.block_slice(a)
            copy_dst.extend(range(d_sl.start, d_sl.stop))
            copy_src.extend(range(s_sl.start, s_sl.stop))
    copy_dst = np.asarray(copy_dst, dtype=np.intp)
    copy_src = np.asarray(copy_src, dtype=np.intp)
    arrival = omas.arrival_rule or _read_arrival
    slices = {a: dst.block_slice(a) for a in arriving + mapped}

    def rule(pre: LiveState, u_left: InputValue, u_at: InputValue) -> LiveState:
        out = np.empty(dst.dim)
        out[copy_dst] = pre.data[copy_src]
        for a in arriving:
            v = np.asarray(arrival(a, pre, u_left, u_at), dtype=float).reshape(-1)
            if v.shape[0] != dst.dim_of(a):
                raise InputError(f"arrival value for agent {a} has length {v.shape[0]}, "
                                 f"expected {dst.dim_of(a)}")
            out[slices[a]] = v
        for a in mapped:
            out[slices[a]] = omas.survivors[a](pre, u_left, a)
        out.flags.writeable = False
        return LiveState._wrap(dst, out)

    return rule


class _LazyTable(Mapping):
    """Read-only mapping whose values are built on first access."""

    def __init__(self, keys: Iterable, build: Callable):
        self._keys = list(dict.fromkeys(keys))
        self._keyset = set(self._keys)
        self._build = build
        self._cache: Dict = {}

    def __getitem__(self, key):
        if key not in self._keyset:
            raise KeyError(key)
        try:
            return self._cache[key]
        except KeyError:
            val = self._cache[key] = self._build(key)
            return val

    def __contains__(self, key):
        return key in self._keyset

    def __iter__(self) -> Iterator:
        return iter(self._keys)

    def __len__(self):
        return len(self._keys)


def compile(omas: OmasDefinition, sched: ImpulseSchedule) -> LiveSystemDefinition:
    """Live system realizing ``omas`` under ``sched``.

    Every impulse of the schedule is checked for admissibility before
    anything is integrated.

    Raises
    ------
    AdmissibilityError
        Names the first impulse index whose arrival/departure sets are inadmissible.
    """
    current = omas.initial
    configs: Dict[Hashable, Configuration] = {}
    first = omas.configuration(current)
    configs[first.id] = first
    table: Dict[Tuple[Hashable, int], Hashable] = {}
    pairs = []
    for k in sched.indices:
        nxt = omas.update(current, k)
        c_prev = configs[tuple(sorted(current))]
        key = tuple(sorted(nxt))
        if key not in configs:
            configs[key] = omas.configuration(nxt)
        table[(c_prev.id, k)] = key
        pairs.append((c_prev.id, key))
        current = nxt
    fields = _LazyTable(configs, lambda q: _stacked_field(omas, configs[q]))
    rules = _LazyTable(pairs, lambda p: _jump_rule(omas, configs[p[0]], configs[p[1]]))
    return LiveSystemDefinition(configs, fields, ConfigTransitionMap.from_table(table), rules,
                                omas.escape_threshold)


def apply_impulse(omas: OmasDefinition, state: LiveState, k: int, u_left: InputValue,
                  u_at: InputValue) -> JumpOutcome:
    """Configuration and state right after impulse ``k``."""
    nxt = omas.update(frozenset(state.config.agents), k)
    dst = omas.configuration(nxt)
    post = _jump_rule(omas, state.config, dst)(state, u_left, u_at)
    return JumpOutcome(dst, post)


def fixed_configuration(omas: OmasDefinition, agents: Iterable[int]) -> LiveSystemDefinition:
    """The system frozen in one configuration: no impulses ever change it."""
    config = omas.configuration(agents)
    return LiveSystemDefinition({config.id: config}, {config.id: _stacked_field(omas, config)},
                                ConfigTransitionMap.identity(), {}, omas.escape_threshold)


def uniform_gain_probe(omas: OmasDefinition, configurations: Iterable[Iterable[int]],
                       probe: Callable[[LiveSystemDefinition, Configuration], float]) -> Tuple[Dict, float]:
    """Run ``probe`` on each frozen configuration; return per-configuration values and their max."""
    values = {}
    for agents in configurations:
        sys_ = fixed_configuration(omas, agents)
        (config,) = sys_.configurations.values()
        values[config.id] = float(probe(sys_, config))
    if not values:
        raise ValueError("no configurations to probe")
    return values, max(values.values())


@dataclass(frozen=True)
class SwitchingSignal:
    """Piecewise-constant right-continuous mode signal: ``modes[i]`` on ``[times[i], times[i+1])``."""

    times: Tuple[float, ...]
    modes: Tuple[int, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        modes = tuple(int(m) for m in self.modes)
        if not times or times[0] != 0.0 or len(modes) != len(times):
            raise ValueError("switching signal needs times starting at 0 and one mode per time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("switching times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "modes", modes)

    def value(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.modes[max(i, 0)]

    def schedule(self) -> ImpulseSchedule:
        return ImpulseSchedule(self.times[1:])


def switching_schedule(sigma: SwitchingSignal) -> ImpulseSchedule:
    return sigma.schedule()


def _copy_departing(agent, pre, u_left, u_at):
    # the single departing mode hands its vector to the new mode
    return pre.data


def switched_system(matrices: Mapping[int, np.ndarray], sigma: SwitchingSignal) -> OmasDefinition:
    """Switched linear system ``x' = A_sigma(t) x`` as an OMAS of singleton configurations.

    Mode ``j`` is agent ``j``; a switch at ``t_k`` replaces the old mode by
    the new one and copies the state vector across.

    Raises
    ------
    DefinitionError
        Matrices of different sizes or a mode without a matrix.
    AdmissibilityError
        A switch to the mode that is already active.
    """
    agents = {int(j): LinearAgent(A) for j, A in matrices.items()}
    dims = {a.dim for a in agents.values()}
    if len(dims) != 1:
        raise DefinitionError("all mode matrices must have the same size")
    for m in sigma.modes:
        if m not in agents:
            raise DefinitionError(f"mode {m} has no matrix")
    arrivals, departures = {}, {}
    for k in range(1, len(sigma.modes)):
        if sigma.modes[k] == sigma.modes[k - 1]:
            raise AdmissibilityError(
                f"impulse {k}: mode {sigma.modes[k]} switches to itself", k)
        arrivals[k] = {sigma.modes[k]}
        departures[k] = {sigma.modes[k - 1]}
    return OmasDefinition(agents, {sigma.modes[0]}, arrivals, departures,
                          arrival_rule=_copy_departing)


# --- lumped engine for large pools of identical linear agents ---------------------------


@dataclass(frozen=True, eq=False)
class ArrivalStream:
    """Arrivals into an exchangeable pool, generated on demand.

    ``times_in(a, b)`` returns the arrival times in ``(a, b]`` and
    ``weights(times)`` the squared magnitude of each arrival; every arrival
    contributes ``weight * gram`` to the pool's Gram matrix.
    """

    times_in: Callable[[float, float], np.ndarray]
    gram: np.ndarray
    weights: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def from_times(cls, times: Sequence[float], vector, magnitudes: Sequence[float] | None = None):
        ts = np.asarray(times, dtype=float)
        v = np.atleast_1d(np.asarray(vector, dtype=float))
        mags = None if magnitudes is None else np.asarray(magnitudes, dtype=float)

        def times_in(a, b):
            lo, hi = np.searchsorted(ts, [a, b], side="right")
            return ts[lo:hi]

        weights = None
        if mags is not None:
            def weights(sel):
                idx = np.searchsorted(ts, sel)
                return mags[idx] ** 2
        return cls(times_in, np.outer(v, v), weights)

    @classmethod
    def log_schedule(cls, vector, chunk: int = 1 << 22):
        """Arrivals at ``ln(k + 1)``, ``k = 1, 2, ...``, all with the same vector."""
        v = np.atleast_1d(np.asarray(vector, dtype=float))

        def times_in(a, b):
            # candidate k range, then exact filtering with the same log evaluation
            k_lo = max(1, int(math.floor(math.exp(a))) - 2)
            k_hi = int(math.ceil(math.exp(b))) + 1
            ks = np.arange(k_lo, k_hi + 1, dtype=np.float64)
            ts = np.log(ks + 1.0)
            return ts[(ts > a) & (ts <= b)]

        return cls(times_in, np.outer(v, v))


@dataclass(frozen=True)
class PoolTrajectory:
    times: np.ndarray
    grams: np.ndarray
    arrivals: np.ndarray

    def pseudonorm(self) -> np.ndarray:
        return np.sqrt(np.einsum("tii->t", self.grams))

    def quadratic(self, P) -> np.ndarray:
        return np.einsum("ij,tji->t", np.asarray(P, dtype=float), self.grams)


def evolve_pool(A, G0, stream: ArrivalStream, horizon: float, step: float = 1e-2,
                sample_times: Sequence[float] = ()) -> PoolTrajectory:
    """Gram-matrix flow of a pool of identical agents ``x_j' = A x_j`` with arrivals.

    The pseudonorm of the pool only depends on ``G = sum_j x_j x_j^T``, which
    obeys ``G' = A G + G A^T``. Each step advances ``G`` with RK4 and adds the
    arrivals inside the step, each propagated over its remaining fraction
    ``tau`` of the step by the same RK4 polynomial. Because that polynomial
    is linear in the data, all arrivals of a step are handled at once through
    the power sums ``sum tau^j``.

    Parameters
    ----------
    A : array_like
        Agent matrix.
    G0 : array_like
        Initial Gram matrix (``x0 x0^T`` for one initial agent).
    stream : ArrivalStream
    horizon, step : float
    sample_times : sequence of float
        Extra grid points.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    G = np.array(G0, dtype=float).reshape(A.shape)

    def lyap_op(X):
        return A @ X + X @ A.T

    knots = sorted({0.0, float(horizon), *[t for t in sample_times if 0.0 < t < horizon]})
    grid = np.concatenate([snapped_grid(a, b, step)[(0 if i == 0 else 1):]
                           for i, (a, b) in enumerate(zip(knots, knots[1:]))])
    out = np.empty((grid.shape[0],) + G.shape)
    counts = np.zeros(grid.shape[0], dtype=np.int64)
    out[0] = G
    coef = (1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0)
    for i in range(grid.shape[0] - 1):
        a, b = grid[i], grid[i + 1]
        h = b - a
        L1 = lyap_op(G)
        L2 = lyap_op(L1)
        L3 = lyap_op(L2)
        L4 = lyap_op(L3)
        # RK4 on a linear ODE is the degree-4 Taylor polynomial of the flow
        G = G + h * L1 + (h ** 2) * 0.5 * L2 + (h ** 3) / 6.0 * L3 + (h ** 4) / 24.0 * L4
        ts = stream.times_in(a, b)
        if ts.size:
            tau = b - ts
            w = np.ones_like(tau) if stream.weights is None else stream.weights(ts)
            sums = [float(np.sum(w * tau ** j)) for j in range(5)]
            W = stream.gram
            term = np.zeros_like(G)
            Lj = W
            for j in range(5):
                term = term + coef[j] * sums[j] * Lj
                Lj = lyap_op(Lj)
            G = G + term
        counts[i + 1] = counts[i] + ts.size
        out[i + 1] = G
    return PoolTrajectory(grid, out, counts)
