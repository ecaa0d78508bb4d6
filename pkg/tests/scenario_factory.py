"""Random linear OMAS scenario documents for CLI-level tests."""

import json

import numpy as np

from livesys.rng import SplitMix64, random_hurwitz


def _vec(rng, n, scale=1.0):
    return [round(float(v), 6) for v in rng.uniform(-scale, scale, size=n)]


def random_linear_scenario(seed: int, horizon: float = 4.0, step: float = 1e-2) -> dict:
    """Linear OMAS with 1-4 impulses mixing arrivals and departures (2-5 configurations).

    Initial agents carry an input matrix and a piecewise input channel, so
    causality probes see a tail that actually changes the flow.
    """
    rng = SplitMix64(seed)
    agents = {}
    present = []
    initial = {}
    channels = {}
    next_id = 1
    for _ in range(int(rng.integers(1, 3))):
        a = next_id
        next_id += 1
        s = int(rng.integers(1, 3))
        agents[str(a)] = {"A": random_hurwitz(rng, s, skew_scale=1.0).round(6).tolist(),
                          "B": np.eye(s).tolist()}
        initial[str(a)] = _vec(rng, s, 2.0)
        channels[str(a)] = [{"kind": "constant", "value": _vec(rng, s)},
                            {"kind": "affine", "start": round(float(rng.uniform(0.5, 3.0)), 3),
                             "offset": _vec(rng, s), "slope": _vec(rng, s, 0.2)}]
        present.append(a)
    n_imp = int(rng.integers(1, 5))
    times = np.sort(rng.uniform(0.2, horizon - 0.2, size=n_imp)).round(4)
    times = sorted(set(float(t) for t in times))
    arrivals, departures, sig = {}, {}, {}
    for k, tk in enumerate(times, start=1):
        mode = int(rng.integers(0, 3)) if len(present) > 1 else 0
        if mode in (0, 2):
            a = next_id
            next_id += 1
            s = int(rng.integers(1, 3))
            agents[str(a)] = {"A": random_hurwitz(rng, s, skew_scale=1.0).round(6).tolist()}
            arrivals[str(k)] = [a]
            sig[str(a)] = {"t": tk, "value": _vec(rng, s, 1.5)}
        if mode in (1, 2):
            gone = present[int(rng.integers(0, len(present)))]
            departures[str(k)] = [gone]
            present.remove(gone)
        if mode in (0, 2):
            present.append(a)
    schedule = {"kind": "explicit", "times": times}
    if arrivals:
        schedule["arrivals"] = arrivals
    if departures:
        schedule["departures"] = departures
    return {
        "meta": {"name": f"random-{seed}", "seed": seed, "horizon": horizon, "step": step},
        "omas": {"kind": "linear", "agents": agents, "initial": initial},
        "schedule": schedule,
        "signals": {"arrivals": sig, "channels": channels, "hold": 1.0},
        "checks": [{"check": "axioms", "samples": 3}],
    }


def write(doc: dict, path) -> str:
    path.write_text(json.dumps(doc, indent=2))
    return str(path)
