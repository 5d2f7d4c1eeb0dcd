"""Discrete grid-world MDPs.

Cells are addressed as ``(x, y)`` with ``y`` growing downward. Border cells are
always walls. The two crossing environments are seed-deterministic: their wall
and lava templates are fixed shapes whose gaps are placed by the seed.
"""

from collections import deque
from collections.abc import Callable, Collection, Iterable
from dataclasses import dataclass, field
from enum import IntEnum, StrEnum
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from graml.errors import ContractViolation

DEFAULT_STEP_REWARD = -0.01
DEFAULT_GOAL_REWARD = 1.0
DEFAULT_LAVA_REWARD = -1.0
DEFAULT_GAMMA = 0.95


class State(NamedTuple):
    """A grid cell."""

    x: int
    y: int


class Action(IntEnum):
    """Cardinal moves, in their fixed enumeration order."""

    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


N_ACTIONS = len(Action)

_DELTAS: dict[Action, tuple[int, int]] = {
    Action.UP: (0, -1),
    Action.DOWN: (0, 1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
}

_OPPOSITE = {
    Action.UP: Action.DOWN,
    Action.DOWN: Action.UP,
    Action.LEFT: Action.RIGHT,
    Action.RIGHT: Action.LEFT,
}


def opposite(action: Action) -> Action:
    """The move that undoes ``action`` in open space."""
    return _OPPOSITE[action]


def move(state: State, action: Action) -> State:
    """The cell one step from ``state`` in the direction of ``action`` (no wall check)."""
    dx, dy = _DELTAS[action]
    return State(state.x + dx, state.y + dy)


class DoneReason(StrEnum):
    GOAL_REACHED = "goal_reached"
    LAVA = "lava"
    TIMEOUT = "timeout"
    RUNNING = "running"


@dataclass(frozen=True)
class StepResult:
    next_state: State
    reward: float
    done: bool
    done_reason: DoneReason

    def __post_init__(self) -> None:
        if self.done != (self.done_reason is not DoneReason.RUNNING):
            raise ContractViolation(
                "done flag disagrees with done_reason",
                done=self.done,
                done_reason=str(self.done_reason),
            )


@dataclass(frozen=True)
class GridEnv:
    """An immutable grid-world MDP with deterministic dynamics."""

    name: str
    width: int
    height: int
    walls: frozenset[State]
    lava: frozenset[State]
    start: State
    seed: int = 0
    step_reward: float = DEFAULT_STEP_REWARD
    goal_reward: float = DEFAULT_GOAL_REWARD
    lava_reward: float = DEFAULT_LAVA_REWARD
    gamma: float = DEFAULT_GAMMA
    max_steps: int = field(default=0)

    def __post_init__(self) -> None:
        if self.width < 3 or self.height < 3:
            raise ContractViolation(
                "grid must be at least 3x3", width=self.width, height=self.height
            )
        if not 0.0 < self.gamma < 1.0:
            raise ContractViolation("gamma must lie in (0, 1)", gamma=self.gamma)
        if self.max_steps == 0:
            object.__setattr__(self, "max_steps", 4 * self.width * self.height)
        if self.max_steps < 1:
            raise ContractViolation("max_steps must be positive", max_steps=self.max_steps)
        if self.walls & self.lava:
            raise ContractViolation("walls and lava overlap", cells=sorted(self.walls & self.lava))
        missing = [cell for cell in self._border() if cell not in self.walls]
        if missing:
            raise ContractViolation("border cells must be walls", cells=missing[:5])
        if not self.in_bounds(self.start) or self.start in self.walls or self.start in self.lava:
            raise ContractViolation(
                "start must be an in-bounds free, lava-free cell", start=self.start
            )

    def _border(self) -> Iterable[State]:
        for x in range(self.width):
            yield State(x, 0)
            yield State(x, self.height - 1)
        for y in range(1, self.height - 1):
            yield State(0, y)
            yield State(self.width - 1, y)

    @property
    def env_id(self) -> str:
        return f"{self.name}:{self.seed}"

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def in_bounds(self, state: State) -> bool:
        return 0 <= state.x < self.width and 0 <= state.y < self.height

    def is_valid_state(self, state: State) -> bool:
        """In bounds and not inside a wall."""
        return self.in_bounds(state) and state not in self.walls

    def is_safe(self, state: State) -> bool:
        """A valid state that is not lava."""
        return self.is_valid_state(state) and state not in self.lava

    def state_index(self, state: State) -> int:
        """Row-major index of ``state``."""
        return state.y * self.width + state.x

    def index_state(self, index: int) -> State:
        return State(index % self.width, index // self.width)

    @property
    def free_cells(self) -> list[State]:
        """All non-wall cells, row-major."""
        return [
            State(x, y)
            for y in range(self.height)
            for x in range(self.width)
            if State(x, y) not in self.walls
        ]

    @property
    def safe_cells(self) -> list[State]:
        """All non-wall, non-lava cells, row-major."""
        return [cell for cell in self.free_cells if cell not in self.lava]

    def step(self, state: State, action: Action, goal: State, t: int) -> StepResult:
        """Apply ``action`` at time ``t``; pure in all of its arguments."""
        if not isinstance(state, tuple) or len(state) != 2:
            raise ContractViolation("state must be an (x, y) pair", state=state)
        state = State(*state)
        if not self.is_valid_state(state):
            raise ContractViolation("state is out of bounds or inside a wall", state=state)
        try:
            action = Action(action)
        except ValueError as e:
            raise ContractViolation("unknown action", action=action) from e
        if not 0 <= t < self.max_steps:
            raise ContractViolation(
                "step count outside [0, max_steps)", t=t, max_steps=self.max_steps
            )

        candidate = move(state, action)
        next_state = candidate if self.is_valid_state(candidate) else state

        if next_state in self.lava:
            return StepResult(next_state, self.lava_reward, True, DoneReason.LAVA)
        if next_state == goal:
            return StepResult(next_state, self.goal_reward, True, DoneReason.GOAL_REACHED)
        if t + 1 >= self.max_steps:
            return StepResult(next_state, self.step_reward, True, DoneReason.TIMEOUT)
        return StepResult(next_state, self.step_reward, False, DoneReason.RUNNING)

    def legal_moves(self, state: State, exclude: Collection[State] = ()) -> list[Action]:
        """Actions that move ``state`` into a different lava-free cell."""
        moves = []
        for action in Action:
            target = move(state, action)
            if self.is_safe(target) and target not in exclude:
                moves.append(action)
        return moves

    def to_text(self) -> str:
        """Render the layout: ``#`` wall, ``L`` lava, ``.`` free, ``S`` start."""
        rows = []
        for y in range(self.height):
            row = []
            for x in range(self.width):
                cell = State(x, y)
                if cell in self.walls:
                    row.append("#")
                elif cell in self.lava:
                    row.append("L")
                elif cell == self.start:
                    row.append("S")
                else:
                    row.append(".")
            rows.append("".join(row))
        return "\n".join(rows)

    @classmethod
    def from_text(
        cls, text: str, name: str = "custom", seed: int = 0, **kwargs: float
    ) -> "GridEnv":
        """Parse the layout format written by :meth:`to_text`."""
        lines = [line.strip() for line in text.strip().splitlines() if line.strip()]
        if not lines:
            raise ContractViolation("empty layout")
        width = len(lines[0])
        if any(len(line) != width for line in lines):
            raise ContractViolation("layout rows have different widths")
        walls: set[State] = set()
        lava: set[State] = set()
        start: State | None = None
        for y, line in enumerate(lines):
            for x, char in enumerate(line):
                if char == "#":
                    walls.add(State(x, y))
                elif char == "L":
                    lava.add(State(x, y))
                elif char == "S":
                    if start is not None:
                        raise ContractViolation("layout has more than one start")
                    start = State(x, y)
                elif char != ".":
                    raise ContractViolation("unknown layout character", char=char, x=x, y=y)
        if start is None:
            raise ContractViolation("layout has no start cell")
        return cls(
            name=name,
            width=width,
            height=len(lines),
            walls=frozenset(walls),
            lava=frozenset(lava),
            start=start,
            seed=seed,
            **kwargs,  # type: ignore[arg-type]
        )


def _border_walls(width: int, height: int) -> set[State]:
    walls = set()
    for x in range(width):
        walls.add(State(x, 0))
        walls.add(State(x, height - 1))
    for y in range(height):
        walls.add(State(0, y))
        walls.add(State(width - 1, y))
    return walls


def make_empty_room(width: int = 5, height: int = 5) -> GridEnv:
    """A bordered room with no interior obstacles, start at (1, 1)."""
    return GridEnv(
        name=f"empty_{width}x{height}",
        width=width,
        height=height,
        walls=frozenset(_border_walls(width, height)),
        lava=frozenset(),
        start=State(1, 1),
    )


def make_simple_crossing(seed: int = 0) -> GridEnv:
    """13x13 grid split into six rooms by two walls across x and one across y.

    Each vertical wall has one gap above and one below the horizontal wall, so
    goals in the far rooms can be reached along more than one optimal route.
    """
    size = 13
    rng = np.random.default_rng(seed)
    walls = _border_walls(size, size)

    mid = size // 2
    for wall_x in (4, 8):
        upper_gap = int(rng.integers(1, mid))
        lower_gap = int(rng.integers(mid + 1, size - 1))
        for y in range(1, size - 1):
            if y not in (upper_gap, lower_gap):
                walls.add(State(wall_x, y))

    for lo, hi in ((1, 4), (5, 8), (9, 12)):
        gap = int(rng.integers(lo, hi))
        for x in range(lo, hi):
            if x != gap:
                walls.add(State(x, mid))

    return GridEnv(
        name="simple_crossing",
        width=size,
        height=size,
        walls=frozenset(walls),
        lava=frozenset(),
        start=State(1, 1),
        seed=seed,
    )


def make_lava_crossing(seed: int = 0) -> GridEnv:
    """9x9 grid crossed by two vertical lava rivers, each with one safe gap."""
    size = 9
    rng = np.random.default_rng(seed)
    walls = _border_walls(size, size)
    lava: set[State] = set()
    for river_x in (3, 6):
        gap = int(rng.integers(1, size - 1))
        for y in range(1, size - 1):
            if y != gap:
                lava.add(State(river_x, y))

    return GridEnv(
        name="lava_crossing",
        width=size,
        height=size,
        walls=frozenset(walls),
        lava=frozenset(lava),
        start=State(1, 1),
        seed=seed,
    )


ENVIRONMENTS: dict[str, Callable[[int], GridEnv]] = {
    "simple_crossing": make_simple_crossing,
    "lava_crossing": make_lava_crossing,
}


def make_env(name: str, seed: int = 0) -> GridEnv:
    """Build a registered environment by name."""
    try:
        factory = ENVIRONMENTS[name]
    except KeyError as e:
        raise ContractViolation(
            f"Unknown environment: {name}", known=sorted(ENVIRONMENTS)
        ) from e
    return factory(seed)


def initial_state(
    env: GridEnv,
    rng: np.random.Generator,
    jitter_steps: int,
    avoid: Collection[State] = (),
) -> State:
    """Random-walk ``jitter_steps`` legal moves away from ``env.start``.

    Cells in ``avoid`` (typically the goal) are never entered. A walk with no
    legal move left stays where it is.
    """
    if jitter_steps < 0:
        raise ContractViolation("jitter_steps must be non-negative", jitter_steps=jitter_steps)
    state = env.start
    for _ in range(jitter_steps):
        moves = env.legal_moves(state, exclude=avoid)
        if not moves:
            break
        state = move(state, moves[int(rng.integers(len(moves)))])
    return state


def shortest_path(env: GridEnv, source: State, target: State) -> list[Action] | None:
    """Breadth-first shortest action sequence over lava-free cells.

    The target itself may be any valid cell; ``None`` when unreachable.
    """
    if source == target:
        return []
    parents: dict[State, tuple[State, Action]] = {}
    seen = {source}
    frontier = deque([source])
    while frontier:
        current = frontier.popleft()
        for action in Action:
            nxt = move(current, action)
            if nxt in seen or not env.is_valid_state(nxt):
                continue
            if nxt in env.lava and nxt != target:
                continue
            seen.add(nxt)
            parents[nxt] = (current, action)
            if nxt == target:
                path: list[Action] = []
                cell = nxt
                while cell != source:
                    cell, step_action = parents[cell]
                    path.append(step_action)
                return path[::-1]
            frontier.append(nxt)
    return None


def reachable_cells(env: GridEnv, source: State, avoid_lava: bool = True) -> set[State]:
    """Cells reachable from ``source`` by cardinal moves."""
    seen = {source}
    frontier = deque([source])
    while frontier:
        current = frontier.popleft()
        for action in Action:
            nxt = move(current, action)
            if nxt in seen or not env.is_valid_state(nxt):
                continue
            if avoid_lava and nxt in env.lava:
                continue
            seen.add(nxt)
            frontier.append(nxt)
    return seen


def lava_segments(env: GridEnv) -> list[frozenset[State]]:
    """Lava rivers: orthogonally linked lava cells, bridging one-cell gaps in line.

    A river with its safe crossing in the middle still counts once.
    """
    remaining = set(env.lava)
    segments = []
    while remaining:
        seed_cell = remaining.pop()
        component = {seed_cell}
        frontier = deque([seed_cell])
        while frontier:
            current = frontier.popleft()
            for action in Action:
                near = move(current, action)
                for nxt in (near, move(near, action)):
                    if nxt in remaining:
                        remaining.discard(nxt)
                        component.add(nxt)
                        frontier.append(nxt)
        segments.append(frozenset(component))
    return sorted(segments, key=lambda seg: min(seg))


@dataclass(frozen=True)
class TransitionTable:
    """Dense one-step model for a fixed goal, indexed by ``state_index``.

    ``terminal`` marks goal and lava transitions; episode caps are left to the
    caller. Rows for wall cells are self-loops with zero reward.
    """

    next_index: NDArray[np.int64]
    reward: NDArray[np.float64]
    terminal: NDArray[np.bool_]
    reached_goal: NDArray[np.bool_]


def transition_table(env: GridEnv, goal: State) -> TransitionTable:
    """Tabulate :meth:`GridEnv.step` for every valid state and action."""
    n = env.n_states
    next_index = np.tile(np.arange(n, dtype=np.int64)[:, None], (1, N_ACTIONS))
    reward = np.zeros((n, N_ACTIONS))
    terminal = np.zeros((n, N_ACTIONS), dtype=bool)
    reached_goal = np.zeros((n, N_ACTIONS), dtype=bool)
    for state in env.free_cells:
        s = env.state_index(state)
        for action in Action:
            result = env.step(state, action, goal, 0)
            next_index[s, action] = env.state_index(result.next_state)
            reward[s, action] = result.reward
            terminal[s, action] = result.done_reason in (DoneReason.GOAL_REACHED, DoneReason.LAVA)
            reached_goal[s, action] = result.done_reason is DoneReason.GOAL_REACHED
    return TransitionTable(next_index, reward, terminal, reached_goal)
