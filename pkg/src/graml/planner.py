"""UCT Monte Carlo tree search over a grid environment.

The planner commits one action at a time: it runs ``iterations`` simulations
from the current root, commits the most visited action, and re-roots the tree
at the resulting child.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from graml.env import N_ACTIONS, Action, GridEnv, State, opposite, shortest_path, transition_table
from graml.errors import ContractViolation, PlanningFailure
from graml.log import get_logger
from graml.rl import Trace

logger = get_logger(__name__)


@dataclass(frozen=True)
class MctsConfig:
    iterations: int = 2000
    exploration_c: float = 1.4
    rollout_depth: int | None = None  # width + height when unset
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations <= 0:
            raise ContractViolation("iterations must be positive", iterations=self.iterations)
        if self.exploration_c <= 0:
            raise ContractViolation("exploration_c must be positive", c=self.exploration_c)
        if self.rollout_depth is not None and self.rollout_depth < 0:
            raise ContractViolation("rollout_depth must be non-negative")


@dataclass
class _Node:
    state: int
    terminal: bool = False
    reward_in: float = 0.0
    visits: int = 0
    value_sum: float = 0.0
    children: dict[int, "_Node"] = field(default_factory=dict)
    untried: list[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return self.value_sum / self.visits if self.visits else 0.0


class _Search:
    """One planning episode toward a fixed goal."""

    def __init__(self, env: GridEnv, goal: State, cfg: MctsConfig) -> None:
        self.env = env
        self.cfg = cfg
        self.gamma = env.gamma
        self.depth = cfg.rollout_depth if cfg.rollout_depth is not None else env.width + env.height
        self.rng = np.random.default_rng(cfg.seed)
        model = transition_table(env, goal)
        self.next_index = model.next_index.tolist()
        self.reward = model.reward.tolist()
        self.terminal = model.terminal.tolist()
        self.reached_goal = model.reached_goal.tolist()
        # Moves that leave the cell; wall bumps are dominated no-ops.
        self.moves = [
            [a for a in range(N_ACTIONS) if self.next_index[s][a] != s]
            for s in range(env.n_states)
        ]
        self._reverse = [int(opposite(Action(a))) for a in range(N_ACTIONS)]

    def new_node(self, state: int, terminal: bool = False, reward_in: float = 0.0) -> _Node:
        untried = [] if terminal else list(self.moves[state])
        self.rng.shuffle(untried)
        return _Node(state=state, terminal=terminal, reward_in=reward_in, untried=untried)

    def _select_child(self, node: _Node) -> tuple[int, _Node]:
        log_n = math.log(node.visits)
        c = self.cfg.exploration_c
        best_action, best_child, best_score = -1, None, -math.inf
        for action, child in node.children.items():
            score = child.mean + c * math.sqrt(log_n / child.visits)
            if score > best_score:
                best_action, best_child, best_score = action, child, score
        assert best_child is not None
        return best_action, best_child

    def _rollout(self, state: int, last_action: int | None) -> float:
        """Discounted return of a non-backtracking uniform random walk."""
        total, discount = 0.0, 1.0
        for _ in range(self.depth):
            options = self.moves[state]
            if last_action is not None and len(options) > 1:
                options = [a for a in options if a != self._reverse[last_action]]
            if not options:
                break
            action = options[int(self.rng.integers(len(options)))]
            total += discount * self.reward[state][action]
            discount *= self.gamma
            if self.terminal[state][action]:
                break
            state = self.next_index[state][action]
            last_action = action
        return total

    def simulate(self, root: _Node) -> None:
        path = [root]
        node = root
        last_action: int | None = None
        while not node.terminal and not node.untried and node.children:
            last_action, node = self._select_child(node)
            path.append(node)

        if not node.terminal and node.untried:
            action = node.untried.pop()
            s = node.state
            child = self.new_node(
                self.next_index[s][action],
                terminal=self.terminal[s][action],
                reward_in=self.reward[s][action],
            )
            node.children[action] = child
            node = child
            last_action = action
            path.append(node)

        value = 0.0 if node.terminal else self._rollout(node.state, last_action)
        for visited in reversed(path[1:]):
            value = visited.reward_in + self.gamma * value
            visited.visits += 1
            visited.value_sum += value
        root.visits += 1

    @staticmethod
    def best_action(root: _Node) -> int:
        children = root.children
        return max(children, key=lambda a: (children[a].visits, children[a].mean, -a))


def mcts_plan(env: GridEnv, goal: State, cfg: MctsConfig | None = None) -> Trace:
    """Plan a goal-reaching trace from ``env.start`` with UCT.

    Raises PlanningFailure when the goal is not reached within ``env.max_steps``
    committed actions, or the committed path enters lava.
    """
    cfg = cfg or MctsConfig()
    goal = State(*goal)
    if not env.is_safe(goal):
        raise ContractViolation("goal must be a free, lava-free cell", goal=goal)
    if goal == env.start:
        raise ContractViolation("goal coincides with the start cell", goal=goal)

    search = _Search(env, goal, cfg)
    root = search.new_node(env.state_index(env.start))
    observations: list[tuple[State, Action]] = []

    for _ in range(env.max_steps):
        if not root.untried and not root.children:
            break
        for _ in range(cfg.iterations):
            search.simulate(root)
        action = search.best_action(root)
        s = root.state
        observations.append((env.index_state(s), Action(action)))
        if search.reached_goal[s][action]:
            logger.debug("mcts_plan_found", goal=goal, length=len(observations), seed=cfg.seed)
            return Trace(observations=tuple(observations), goal=goal)
        if search.terminal[s][action]:
            raise PlanningFailure(
                "planner walked into lava", goal=list(goal), step=len(observations)
            )
        root = root.children[action]

    raise PlanningFailure(
        "goal not reached within the episode cap",
        goal=list(goal),
        max_steps=env.max_steps,
    )


def expert_trace(env: GridEnv, goal: State, start: State | None = None) -> Trace:
    """A shortest-path demonstration, standing in for a domain expert."""
    goal = State(*goal)
    start = start or env.start
    path = shortest_path(env, start, goal)
    if not path:
        raise PlanningFailure("no expert path to the goal", goal=list(goal), start=list(start))
    observations = []
    state = start
    for t, action in enumerate(path):
        observations.append((state, action))
        state = env.step(state, action, goal, t).next_state
    return Trace(observations=tuple(observations), goal=goal)
