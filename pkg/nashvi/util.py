from dataclasses import dataclass, field

import numpy as np

# Substream identifiers under one base seed.
STREAM_TAU = 0
STREAM_ESTIMATOR = 1
STREAM_SAMPLING = 2


@dataclass
class Report:
    """Result of a report-style check. Empty ``issues`` means success."""

    name: str = ""
    issues: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, message: str) -> None:
        self.issues.append(message)

    def note(self, message: str) -> None:
        self.notes.append(message)


def joint_table(n_actions: tuple[int, ...]) -> np.ndarray:
    """
    Table of per-agent actions for every flattened joint action.
    Row j holds (a_0, ..., a_{N-1}); agent 0 varies fastest.
    """
    n_joint = int(np.prod(n_actions))
    table = np.unravel_index(np.arange(n_joint), n_actions, order="F")
    return np.stack(table, axis=1).astype(np.intp)


def joint_index(actions, n_actions: tuple[int, ...]) -> int:
    """Flatten per-agent actions into a joint index: (1, 0) with sizes (2, 2) -> 1."""
    if len(actions) != len(n_actions):
        raise IndexError(f"Expected {len(n_actions)} actions, got {len(actions)}")
    for i, (a, m) in enumerate(zip(actions, n_actions)):
        if not 0 <= a < m:
            raise IndexError(f"Action {a} out of range for agent {i} ({m} actions)")
    return int(np.ravel_multi_index(tuple(int(a) for a in actions), n_actions, order="F"))


def joint_actions(index: int, n_actions: tuple[int, ...]) -> tuple[int, ...]:
    """Inverse of joint_index."""
    n_joint = int(np.prod(n_actions))
    if not 0 <= index < n_joint:
        raise IndexError(f"Joint action {index} out of range ({n_joint} joint actions)")
    return tuple(int(a) for a in np.unravel_index(index, n_actions, order="F"))


def substream(seed: int, *key: int) -> np.random.Generator:
    """
    Counter-based generator for (seed, key...). Distinct keys give independent
    streams, and the same key always reproduces the same stream.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def compensated_cumsum(values) -> np.ndarray:
    """Running sums with Neumaier compensation."""
    out = np.empty(len(values), dtype=float)
    total = 0.0
    carry = 0.0
    for n, x in enumerate(values):
        x = float(x)
        t = total + x
        if abs(total) >= abs(x):
            carry += (total - t) + x
        else:
            carry += (x - t) + total
        total = t
        out[n] = total + carry
    return out


def format_float(x: float) -> str:
    """Shortest round-trip text for a float (stable across runs)."""
    return repr(float(x))
