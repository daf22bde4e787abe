"""This module contains the protected time-stepping loop shared by the
Hartree-Fock, Vlasov and Newton solvers.

Each solver subclasses `_BaseEvolver` with its own step and snapshot check;
`_BaseEvolver.evolve` iterates to the final time, validates and records
snapshots, and runs observer callbacks.
"""

from abc import ABC, abstractmethod
import logging
import math
from typing import Any, Callable, Generic, Iterator, Optional, Sequence, TypeVar

import numpy as np

from fermion_limits.errors import ContractError, DomainError, ObserverError

logger = logging.getLogger(__name__)

S = TypeVar("S")
Observer = Callable[[float, Any], Optional[dict]]


class Trajectory(Generic[S]):
    """Snapshots of an evolution with their times and observer records."""

    def __init__(
        self,
        times: Sequence[float],
        states: Sequence[S],
        records: Optional[Sequence[dict]] = None,
    ):
        if len(times) != len(states):
            raise ContractError(
                f"Trajectory has {len(times)} times but {len(states)} states"
            )
        self.times = [float(t) for t in times]
        self.states = list(states)
        self.records = list(records) if records is not None else [{} for _ in times]

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self) -> Iterator[tuple[float, S]]:
        return iter(zip(self.times, self.states))

    def __repr__(self) -> str:
        return f"Trajectory(snapshots={len(self)}, t_end={self.times[-1]})"

    @property
    def final(self) -> S:
        return self.states[-1]

    def series(self, key: str) -> np.ndarray:
        """Returns one observer quantity across all snapshots."""
        return np.array([record.get(key, np.nan) for record in self.records])


def snapshot_schedule(
    dt: float, t_end: float, snapshots: int
) -> tuple[float, int, list[int]]:
    """
    Resolves the number of steps and the step indices at which snapshots
    are taken.

    The step is shrunk so that an integer number of steps reaches t_end.
    Snapshots are spread evenly and always include the first and last step.

    Args:
        dt: requested step
        t_end: final time, nonnegative
        snapshots: number of snapshot intervals

    Returns:
        tuple of (step, number of steps, snapshot step indices)

    Raises:
        DomainError: if dt is not positive or t_end is negative
    """
    if dt <= 0:
        raise DomainError(f"Time step must be positive, got {dt}")
    if t_end < 0:
        raise DomainError(f"Final time must be nonnegative, got {t_end}")
    if t_end == 0:
        return dt, 0, [0]
    n_steps = max(1, math.ceil(t_end / dt - 1e-9))
    step = t_end / n_steps
    marks = np.linspace(0, n_steps, max(1, snapshots) + 1)
    return step, n_steps, sorted({int(round(m)) for m in marks})


class _BaseEvolver(ABC, Generic[S]):
    """An abstract base class for fixed-step evolutions."""

    label = "EVOLVE"

    @abstractmethod
    def __init__(self, dt: float, t_end: float, snapshots: int = 10):
        self.dt = dt
        self.t_end = t_end
        self.snapshots = snapshots

    @abstractmethod
    def step(self, state: S, dt: float) -> S:
        pass

    @abstractmethod
    def check(self, state: S, t: float) -> None:
        pass

    def evolve(self, state: S, observers: Sequence[Observer] = ()) -> Trajectory[S]:
        """
        Iterates `step` to the final time.

        Args:
            state: initial state
            observers: callables taking (t, state) and returning a dict of
                named values (or None), run at every snapshot

        Returns:
            `Trajectory` of snapshots, the initial state first

        Raises:
            ObserverError: if an observer raises, with time and step context
        """
        dt, n_steps, marks = snapshot_schedule(self.dt, self.t_end, self.snapshots)
        logger.debug(
            f"({self.label}) {n_steps} steps of {dt:.6g} to t={self.t_end}, "
            f"{len(marks)} snapshots"
        )
        times, states, records = [], [], []
        pending = iter(marks)
        mark = next(pending)
        for index in range(n_steps + 1):
            if index > 0:
                state = self.step(state, dt)
            if index != mark:
                continue
            t = index * dt
            self.check(state, t)
            times.append(t)
            states.append(state)
            records.append(self._observe(observers, t, index, state))
            mark = next(pending, None)
        return Trajectory(times, states, records)

    def _observe(
        self, observers: Sequence[Observer], t: float, index: int, state: S
    ) -> dict:
        record: dict = {}
        for observer in observers:
            try:
                values = observer(t, state)
            except Exception as exc:
                name = getattr(observer, "__name__", repr(observer))
                logger.error(f"({self.label}) observer {name} failed at t={t}: {exc}")
                raise ObserverError(
                    f"Observer {name} failed at t={t:.6g} (step {index}): {exc}"
                ) from exc
            if values:
                record.update(values)
        return record
