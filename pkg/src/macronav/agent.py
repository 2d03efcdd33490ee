"""Macro-decision loop, Q-learning over replayed macro transitions, evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidConfig, NoPath
from .nav import MACRO_BUDGET, Explorer, MacroAction, MacroOutcome, execute_macro
from .policy import PolicyConfig, select_action
from .qnet import (
    AdamState,
    ArchConfig,
    FeatureCache,
    QParams,
    ReplayBuffer,
    Transition,
    candidate_values,
    init_params,
    loss_and_gradients,
    optimizer_step,
    sync_target,
    td_targets,
)
from .sim import Action, Env, RewardMode, Scene, SceneConfig, generate_scene
from .topomap import MapParams, TopoMap, sample_patches

log = logging.getLogger(__name__)

MODES = ("train", "eval", "random")
SCAN_TURNS = 24
PROBE_FORWARD = 8
_EVAL_SEED_OFFSET = 500_000
_SEED_STRIDE = 1_000_003


@dataclass
class TrainConfig:
    episodes: int = 300
    scenes: int = 8
    n_targets: int = 1
    reward_mode: str = "immediate"
    seed: int = 0
    gamma: float = 0.95
    lr: float = 1e-4
    batch: int = 32
    replay: int = 10_000
    target_sync: int = 100
    warmup_episodes: int = 20
    candidate_cap: int = 64
    macro_budget: int = MACRO_BUDGET
    eval_episodes: int = 50
    n_images: int = 10
    hidden: int = 128
    compute_dtype: str = "float32"
    scene: SceneConfig = field(default_factory=SceneConfig)
    map: MapParams = field(default_factory=MapParams)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def __post_init__(self):
        try:
            self.reward_mode = RewardMode(self.reward_mode).value
        except ValueError:
            raise InvalidConfig(f"reward_mode must be immediate or terminal, got {self.reward_mode!r}") from None
        self.scene.n_targets = self.n_targets
        for name in ("scenes", "batch", "replay", "target_sync", "candidate_cap", "macro_budget", "n_images", "hidden"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.compute_dtype not in ("float32", "float64"):
            raise InvalidConfig("compute_dtype must be float32 or float64")
        if self.episodes < 0 or self.warmup_episodes < 0 or self.eval_episodes < 0:
            raise InvalidConfig("episode counts must be non-negative")

    @property
    def arch(self) -> ArchConfig:
        return ArchConfig(n_images=self.n_images, n_targets=self.n_targets, hidden=self.hidden)

    def flat(self) -> dict[str, object]:
        """Every resolved parameter as one flat mapping (for ``config.txt``)."""
        out: dict[str, object] = {}
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                for k2, v2 in v.items():
                    out[f"{k}.{k2}"] = v2
            else:
                out[k] = v
        return out


@dataclass
class EpisodeStats:
    elementary_steps: int
    macro_decisions: int
    episode_return: float
    success: bool
    scene_seed: int
    wall_time: float
    mode: str = "eval"
    epsilon: float = 0.0


def train_scene_seeds(seed: int, n: int) -> list[int]:
    return [seed * _SEED_STRIDE + i for i in range(n)]


def eval_scene_seeds(seed: int, n: int) -> list[int]:
    return [seed * _SEED_STRIDE + _EVAL_SEED_OFFSET + i for i in range(n)]


def episode_seed(seed: int, phase: int, index: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFF, phase, index]).generate_state(2, np.uint64)[0])


class Learner:
    """Replay memory, online/target parameters and the optimizer."""

    def __init__(self, params: QParams, cfg: TrainConfig, rng: np.random.Generator):
        self.params = params
        self.cfg = cfg
        self.rng = rng
        self.buffer = ReplayBuffer(cfg.replay)
        self.opt = AdamState(lr=cfg.lr)
        self.dtype = np.dtype(cfg.compute_dtype)
        self.target = sync_target(params).astype(self.dtype)
        self.cache = FeatureCache(self.target)
        self.updates = 0
        self.enabled = True
        self.last_loss: Optional[float] = None

    def push(self, t: Transition) -> None:
        self.buffer.push(t)

    def update(self) -> Optional[float]:
        if not self.enabled or len(self.buffer) == 0:
            return None
        batch = self.buffer.sample(self.cfg.batch, self.rng)
        y = td_targets(batch, self.target, self.cfg.gamma, self.cache)
        online = self.params if self.params.dtype == self.dtype else self.params.astype(self.dtype)
        loss, grads = loss_and_gradients(online, batch, y)
        optimizer_step(self.params, grads, self.opt)
        if not self.params.all_finite():
            raise FloatingPointError(f"non-finite parameters after update {self.updates + 1}")
        self.updates += 1
        if self.updates % self.cfg.target_sync == 0:
            self.target = sync_target(self.params).astype(self.dtype)
            self.cache = FeatureCache(self.target)
        self.last_loss = loss
        return loss


def _scan(explorer: Explorer) -> None:
    env = explorer.env
    for _ in range(SCAN_TURNS):
        if env.done or env.truncated:
            return
        explorer.act(Action.TURN_LEFT)


def _probe(explorer: Explorer, rng: np.random.Generator, random_heading: bool) -> None:
    """Walk a short straight leg (optionally after a random turn), then rescan."""
    env = explorer.env
    if random_heading:
        for _ in range(int(rng.integers(SCAN_TURNS))):
            if env.done or env.truncated:
                return
            explorer.act(Action.TURN_LEFT)
    for _ in range(PROBE_FORWARD):
        if env.done or env.truncated:
            return
        explorer.act(Action.FORWARD)
    _scan(explorer)


def bootstrap(explorer: Explorer, rng: np.random.Generator) -> None:
    """Scan in place; while no object is on the map, probe forward and rescan."""
    _scan(explorer)
    first = True
    env = explorer.env
    while not explorer.map.action_set() and not env.done and not env.truncated:
        _probe(explorer, rng, random_heading=not first)
        first = False


def _snapshot(
    tmap: TopoMap, actions: Sequence[int], n_images: int, rng: np.random.Generator
) -> dict[int, tuple]:
    return {nid: tuple(sample_patches(tmap.nodes[nid], n_images, rng)) for nid in actions}


def _cap_candidates(sets: dict[int, tuple], cap: int, rng: np.random.Generator) -> list[tuple]:
    ids = sorted(sets)
    if len(ids) > cap:
        keep = np.sort(rng.choice(len(ids), size=cap, replace=False))
        ids = [ids[int(i)] for i in keep]
    return [sets[i] for i in ids]


def run_episode(
    scene: Scene,
    params: Optional[QParams],
    cfg: TrainConfig,
    mode: str,
    ep_seed: int,
    *,
    learner: Optional[Learner] = None,
    epsilon: Optional[float] = None,
    record: bool = True,
    on_decision: Optional[Callable[[dict], None]] = None,
) -> tuple[EpisodeStats, list[Transition]]:
    """Play one episode from an empty map.

    ``mode`` is ``train`` (policy with exploration, transitions go to
    ``learner`` with one update per decision), ``eval`` (greedy unless
    ``epsilon`` is given) or ``random`` (uniform over current object nodes).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode != "random" and params is None:
        raise ValueError(f"mode {mode!r} needs parameters")
    if epsilon is None:
        epsilon = cfg.policy.epsilon if mode == "train" else 0.0
    pcfg = PolicyConfig(epsilon, cfg.policy.temperature, cfg.policy.bonus_q)
    dtype = np.dtype(cfg.compute_dtype)
    record = record or learner is not None

    t0 = time.perf_counter()
    rng = np.random.default_rng([ep_seed & 0xFFFFFFFFFFFFFFFF, 0xE9])
    env = Env(scene, cfg.reward_mode, ep_seed, scene.sample_spawn(rng))
    tmap = TopoMap(cfg.map, scene.plan.walls, seed=ep_seed)
    acc = {"reward": 0.0}

    def on_step(reward, events):
        acc["reward"] += reward

    explorer = Explorer(env, tmap, on_step)
    explorer.observe()
    bootstrap(explorer, rng)

    transitions: list[Transition] = []
    pending: Optional[tuple] = None
    current: Optional[int] = None
    decisions = 0
    zero_streak = 0

    def commit(next_sets, x_next, done):
        t = Transition(pending[0], pending[1], acc["reward"], next_sets, x_next, done)
        transitions.append(t)
        if learner is not None:
            learner.push(t)
            learner.update()

    while not env.done and not env.truncated:
        actions = tmap.action_set()
        if not actions:
            _probe(explorer, rng, random_heading=True)
            continue
        x = env.task.progress_vector()
        need_sets = mode != "random" or record
        sets = _snapshot(tmap, actions, cfg.n_images, rng) if need_sets else None
        if pending is not None:
            commit(_cap_candidates(sets, cfg.candidate_cap, rng), x, False)
            pending = None

        if mode == "random":
            choice = actions[int(rng.integers(len(actions)))]
            qvals = None
        else:
            act = params if params.dtype == dtype else params.astype(dtype)
            qvals = candidate_values(act, [sets[a] for a in actions], x)
            choice = select_action(qvals, tmap.unexplored(actions), actions, current, pcfg, rng)
        if on_decision is not None:
            on_decision({"actions": actions, "q": qvals, "choice": choice, "current": current, "map": tmap, "env": env})
        if record:
            pending = (sets[choice], x)
        acc["reward"] = 0.0
        decisions += 1

        budget = min(cfg.macro_budget, scene.config.max_steps - env.steps)
        try:
            outcome = execute_macro(explorer, MacroAction(choice), budget=budget)
        except NoPath:
            outcome = MacroOutcome(events=["no_path"])
        current = choice
        zero_streak = zero_streak + 1 if outcome.elementary_steps == 0 else 0
        if zero_streak >= 2 and not env.done:
            _probe(explorer, rng, random_heading=True)
            zero_streak = 0

    if pending is not None:
        if env.done:
            commit([], env.task.progress_vector(), True)
        else:
            actions = tmap.action_set()
            sets = _snapshot(tmap, actions, cfg.n_images, rng)
            commit(_cap_candidates(sets, cfg.candidate_cap, rng), env.task.progress_vector(), False)

    stats = EpisodeStats(
        elementary_steps=env.steps,
        macro_decisions=decisions,
        episode_return=env.total_reward,
        success=env.done,
        scene_seed=scene.seed,
        wall_time=time.perf_counter() - t0,
        mode=mode,
        epsilon=epsilon if mode != "random" else 1.0,
    )
    return stats, transitions


def _scene_cache(cfg: TrainConfig):
    cache: dict[int, Scene] = {}

    def get(seed: int) -> Scene:
        if seed not in cache:
            cache[seed] = generate_scene(seed, cfg.scene)
        return cache[seed]

    return get


@dataclass
class TrainResult:
    params: QParams
    rows: list[EpisodeStats]
    snapshots: dict[int, QParams]
    updates: int
    learner: Learner


def train(
    cfg: TrainConfig,
    snapshot_at: Sequence[int] = (),
    progress: Optional[Callable[[int, EpisodeStats], None]] = None,
) -> TrainResult:
    """Warm up the replay memory with random macros, then train for ``cfg.episodes``.

    No updates happen during warm-up. One row per post-warm-up episode is
    returned; ``snapshot_at`` lists post-warm-up episode counts at which a
    copy of the parameters is kept.
    """
    train_seeds = train_scene_seeds(cfg.seed, cfg.scenes)
    assert not set(train_seeds) & set(eval_scene_seeds(cfg.seed, max(cfg.eval_episodes, 1)))
    scenes = _scene_cache(cfg)
    params = init_params(cfg.seed, cfg.arch)
    learner = Learner(params, cfg, np.random.default_rng([cfg.seed & 0xFFFFFFFF, 0x1EA]))
    pick = np.random.default_rng([cfg.seed & 0xFFFFFFFF, 0x5C])

    learner.enabled = False
    for k in range(cfg.warmup_episodes):
        scene = scenes(train_seeds[int(pick.integers(len(train_seeds)))])
        run_episode(scene, None, cfg, "random", episode_seed(cfg.seed, 1, k), learner=learner)
    learner.enabled = True

    rows: list[EpisodeStats] = []
    snapshots: dict[int, QParams] = {}
    wanted = set(snapshot_at)
    if 0 in wanted:
        snapshots[0] = params.copy()
    for k in range(cfg.episodes):
        scene = scenes(train_seeds[int(pick.integers(len(train_seeds)))])
        stats, _ = run_episode(scene, params, cfg, "train", episode_seed(cfg.seed, 2, k), learner=learner)
        rows.append(stats)
        if progress is not None:
            progress(k, stats)
        if k + 1 in wanted:
            snapshots[k + 1] = params.copy()
    return TrainResult(params, rows, snapshots, learner.updates, learner)


@dataclass
class EvalSummary:
    rows: list[EpisodeStats]

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.elementary_steps for r in self.rows], dtype=float)

    @property
    def median_steps(self) -> float:
        return float(np.median(self.steps))

    @property
    def mean_steps(self) -> float:
        return float(np.mean(self.steps))

    @property
    def success_rate(self) -> float:
        return float(np.mean([r.success for r in self.rows]))


def evaluate(
    params: Optional[QParams],
    cfg: TrainConfig,
    n_episodes: int,
    mode: str = "eval",
    progress: Optional[Callable[[int, EpisodeStats], None]] = None,
    training_scenes: bool = False,
) -> EvalSummary:
    """Run ``n_episodes`` on held-out scenes (one fresh scene per episode).

    ``training_scenes=True`` instead cycles over the training scenes with
    spawns and noise streams that training never used (a diagnostic for
    memorisation versus transfer). ``mode="random"`` gives the uniform-macro
    baseline on the very same scenes, spawns and noise streams.
    """
    if n_episodes <= 0:
        raise ValueError("evaluation needs at least one episode")
    train_seeds = train_scene_seeds(cfg.seed, cfg.scenes)
    if training_scenes:
        seeds = [train_seeds[k % cfg.scenes] for k in range(n_episodes)]
    else:
        seeds = eval_scene_seeds(cfg.seed, n_episodes)
        assert not set(seeds) & set(train_seeds), "train/eval scenes overlap"
    scene_of = _scene_cache(cfg)
    rows = []
    for k, s in enumerate(seeds):
        stats, _ = run_episode(scene_of(s), params, cfg, mode, episode_seed(cfg.seed, 3, k), record=False)
        rows.append(stats)
        if progress is not None:
            progress(k, stats)
    return EvalSummary(rows)
