"""Fixed-step classical RK4 with observers.

The engines expose their state as a flat complex vector; rhs must be a pure
function of that vector.  Fixed step keeps convergence studies clean (no
adaptivity), and identical inputs produce identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonFinite, EmreduceError


@dataclass
class EvolutionProblem:
    state: np.ndarray
    rhs: Callable[[np.ndarray], np.ndarray]
    observers: list = field(default_factory=list)  # (name, fn(state) -> float)


@dataclass
class TrajectoryRecord:
    times: list = field(default_factory=list)
    observers: dict = field(default_factory=dict)  # name -> list of values
    samples: list = field(default_factory=list)    # (t, state copy) at cadence
    aborted: Optional[dict] = None
    last_state: Optional[np.ndarray] = None
    last_time: float = 0.0

    def observer_rows(self):
        """Rows (t, name, value) in deterministic order."""
        rows = []
        for i, t in enumerate(self.times):
            for name in sorted(self.observers):
                rows.append((t, name, self.observers[name][i]))
        return rows


def rk4_step(p: EvolutionProblem, dt: float) -> np.ndarray:
    """One classical RK4 update; raises NonFinite naming the bad stage."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    y = p.state
    ks = []
    for stage, (w, kprev) in enumerate([(0.0, None), (0.5, 0), (0.5, 1), (1.0, 2)]):
        ys = y if kprev is None else y + (w * dt) * ks[kprev]
        k = p.rhs(ys)
        if not np.all(np.isfinite(k)):
            raise NonFinite("non-finite rhs evaluation", stage=stage + 1)
        ks.append(k)
    return y + (dt / 6.0) * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3])


def evolve(
    p: EvolutionProblem,
    dt: float,
    steps: int,
    cadence: int = 1,
    keep_samples: bool = False,
    on_sample: Optional[Callable[[int, float, np.ndarray], None]] = None,
) -> TrajectoryRecord:
    """Advance `steps` RK4 steps, sampling observers every `cadence` steps.

    Engine exceptions abort the run; the record then carries the last good
    state and the error payload instead of raising through.
    """
    rec = TrajectoryRecord(observers={name: [] for name, _ in p.observers})
    y = p.state.copy()
    t = 0.0

    def sample(step):
        rec.times.append(t)
        for name, fn in p.observers:
            rec.observers[name].append(float(fn(y)))
        if keep_samples:
            rec.samples.append((t, y.copy()))
        if on_sample is not None:
            on_sample(step, t, y)

    try:
        sample(0)
        for step in range(1, steps + 1):
            p.state = y
            y = rk4_step(p, dt)
            t = step * dt
            if step % cadence == 0 or step == steps:
                sample(step)
    except EmreduceError as err:
        rec.aborted = err.to_dict()
    rec.last_state = y
    rec.last_time = t
    return rec
