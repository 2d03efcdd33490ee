"""Acceptance criteria, one test each, with a PASS/FAIL summary line per criterion.

Criteria 1 to 3 train the agent at full size and take a long time on one
core; the remaining criteria finish in a few minutes.
"""

from __future__ import annotations

import math
import time

import networkx as nx
import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import ACCEPTANCE
from macronav.agent import TrainConfig, evaluate, train
from macronav.errors import NoPath
from macronav.harness import cli_main
from macronav.nav import Explorer, MacroAction, execute_macro, path_cost, shortest_path
from macronav.policy import PolicyConfig, boltzmann_probs, greedy_choice, select_action
from macronav.qnet import ArchConfig, forward_batch, init_params, loss_and_gradients_arrays
from macronav.qnet.network import PARAM_ORDER
from macronav.sim import Action, Env, SceneConfig, generate_scene
from macronav.topomap import MapParams, NodeKind, TopoMap


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


# ------------------------------------------------------------ criteria 1-3
EASY = dict(episodes=300, scenes=8, n_targets=1, reward_mode="immediate", eval_episodes=50, seed=0)
HARD = dict(episodes=600, scenes=8, n_targets=3, reward_mode="terminal", eval_episodes=50, seed=0)
FAST_EPISODES = 100


@pytest.fixture(scope="module")
def easy_run():
    cfg = TrainConfig(**EASY)
    t0 = time.perf_counter()
    res = train(cfg, snapshot_at=(FAST_EPISODES,))
    train_time = time.perf_counter() - t0
    base = evaluate(None, cfg, cfg.eval_episodes, mode="random")
    trained = evaluate(res.params, cfg, cfg.eval_episodes)
    early = evaluate(res.snapshots[FAST_EPISODES], cfg, cfg.eval_episodes)
    return dict(train_time=train_time, base=base, trained=trained, early=early)


def test_criterion_1_easy_regime(easy_run):
    base, trained = easy_run["base"], easy_run["trained"]
    ratio = trained.median_steps / base.median_steps
    ok = ratio <= 0.7
    record(
        1,
        ok,
        f"easy regime median {trained.median_steps:g} vs random {base.median_steps:g} (ratio {ratio:.3f}, need <= 0.7); "
        f"success {trained.success_rate:.2f} vs {base.success_rate:.2f}; training {easy_run['train_time'] / 60:.1f} min",
    )
    assert ok


def test_criterion_3_fast_convergence(easy_run):
    base, early = easy_run["base"], easy_run["early"]
    ratio = early.median_steps / base.median_steps
    ok = ratio <= 0.85
    record(
        3,
        ok,
        f"after {FAST_EPISODES} episodes median {early.median_steps:g} vs random {base.median_steps:g} "
        f"(ratio {ratio:.3f}, need <= 0.85)",
    )
    assert ok


def test_criterion_2_hard_regime():
    cfg = TrainConfig(**HARD)
    t0 = time.perf_counter()
    res = train(cfg)
    train_time = time.perf_counter() - t0
    base = evaluate(None, cfg, cfg.eval_episodes, mode="random")
    trained = evaluate(res.params, cfg, cfg.eval_episodes)
    ratio = trained.median_steps / base.median_steps
    gain = trained.success_rate - base.success_rate
    ok = ratio <= 0.8 or gain >= 0.2 - 1e-12
    record(
        2,
        ok,
        f"hard regime median {trained.median_steps:g} vs random {base.median_steps:g} (ratio {ratio:.3f}, need <= 0.8) "
        f"or success {trained.success_rate:.2f} vs {base.success_rate:.2f} (need +0.20); training {train_time / 60:.1f} min",
    )
    assert ok


# ------------------------------------------------------------- criterion 4
FD_ARCH = ArchConfig(n_images=2, n_targets=2, conv1=3, conv2=4, hidden=6)


def _fd_worst(seed: int, arch: ArchConfig, coords: int | None, h: float = 1e-5, floor: float = 1e-6) -> float:
    rng = np.random.default_rng(seed)
    p = init_params(seed, arch)
    for k in PARAM_ORDER:
        if k.endswith("_b"):
            p.w[k] = rng.normal(scale=0.1, size=p[k].shape)
    b = 4
    patches = rng.random((b, arch.n_images, 16, 16, 3))
    x = np.eye(arch.n_targets)[rng.integers(arch.n_targets, size=b)]
    y = forward_batch(p, patches, x) + rng.uniform(-2.0, 2.0, size=b)
    _, grads = loss_and_gradients_arrays(p, patches, x, y)
    worst = 0.0
    for k in PARAM_ORDER:
        w = p.w[k].reshape(-1)
        idx = range(w.size) if coords is None or w.size <= coords else rng.choice(w.size, size=coords, replace=False)
        for j in idx:
            old = w[j]
            w[j] = old + h
            lp, _ = loss_and_gradients_arrays(p, patches, x, y)
            w[j] = old - h
            lm, _ = loss_and_gradients_arrays(p, patches, x, y)
            w[j] = old
            num = (lp - lm) / (2.0 * h)
            ana = grads[k].reshape(-1)[j]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
    return worst


def test_criterion_4_gradient_oracle():
    # every coordinate of a reduced network (same code path), plus sampled
    # coordinates of the full-size network
    worst_small = max(_fd_worst(seed, FD_ARCH, None) for seed in range(10))
    worst_full = _fd_worst(100, ArchConfig(), 8)
    worst = max(worst_small, worst_full)
    ok = worst <= 1e-4
    record(4, ok, f"max relative error {worst:.2e} over 10 draws, all {FD_ARCH.n_params()} coordinates (need <= 1e-4)")
    assert ok


# ------------------------------------------------------------- criterion 5
def _dijkstra_oracle(tmap: TopoMap, a: int, b: int) -> float | None:
    g = nx.Graph()
    g.add_nodes_from(tmap.nodes)
    for (u, v), w in tmap.edges.items():
        g.add_edge(u, v, weight=w)
    try:
        return nx.dijkstra_path_length(g, a, b)
    except nx.NetworkXNoPath:
        return None


def test_criterion_5_planner_oracle():
    rng = np.random.default_rng(55)
    mismatches = 0
    connected = 0
    for _ in range(100):
        n = int(rng.integers(20, 201))
        m = TopoMap()
        pts = rng.uniform(0.0, 10.0, size=(n, 2))
        for p in pts:
            m.add_node(NodeKind.WAYPOINT, p)
        r = 2.0 * math.sqrt(100.0 / n)
        for i in range(n):
            for j in range(i + 1, n):
                if math.dist(pts[i], pts[j]) <= r:
                    m.add_edge(i, j)
        a, b = (int(v) for v in rng.choice(n, size=2, replace=False))
        expected = _dijkstra_oracle(m, a, b)
        try:
            got = path_cost(m, shortest_path(m, a, b))
        except NoPath:
            got = None
        connected += expected is not None
        mismatches += got != expected
    ok = mismatches == 0
    record(5, ok, f"A* vs Dijkstra on 100 graphs ({connected} connected pairs): {mismatches} mismatches")
    assert ok


# ------------------------------------------------------------- criterion 6
def test_criterion_6_policy_suite():
    rng = np.random.default_rng(66)
    worst_sum = worst_shift = 0.0
    mono = conc = greedy_ok = True
    for _ in range(2000):
        n = int(rng.integers(1, 40))
        scale = 10.0 ** rng.uniform(-3, 6)
        q = rng.uniform(-scale, scale, size=n)
        flags = rng.random(n) < 0.5
        t = 10.0 ** rng.uniform(-3, 3)
        p = boltzmann_probs(q, flags, t, 1.0)
        worst_sum = max(worst_sum, abs(p.sum() - 1.0))
        if not (np.all(np.isfinite(p)) and np.all(p >= 0)):
            worst_sum = math.inf

        qs = rng.normal(size=n)
        c = rng.uniform(-100, 100)
        worst_shift = max(worst_shift, np.max(np.abs(boltzmann_probs(qs, flags, 1.0, 1.0) - boltzmann_probs(qs + c, flags, 1.0, 1.0))))
        qi = rng.integers(-400, 400, size=n) / 4.0
        ids = list(range(n))
        cur = int(rng.integers(n))
        greedy_ok &= greedy_choice(qi, ids, cur) == greedy_choice(qi + float(rng.integers(-50, 50)), ids, cur)

        if n >= 2:
            # with a single action its probability is identically 1
            i = int(rng.integers(n))
            off, on = flags.copy(), flags.copy()
            off[i], on[i] = False, True
            mono &= bool(boltzmann_probs(qs, on, 1.0, 1.0)[i] > boltzmann_probs(qs, off, 1.0, 1.0)[i])

        pt = boltzmann_probs(qs, flags, 1e-6, 1.0)
        conc &= bool(pt[int(np.argmax(qs + flags))] >= 0.999)

        if n >= 2:
            greedy_ok &= greedy_choice(qs, ids, cur) != cur
            greedy_ok &= select_action(qs, flags, ids, cur, PolicyConfig(epsilon=0.0), rng) != cur

    q = np.array([0.3, -0.2, 1.1, 0.0, 0.7])
    flags = [True, False, False, True, False]
    ids = [10, 11, 12, 13, 14]
    draw_rng = np.random.default_rng(2024)
    draws = [select_action(q, flags, ids, None, PolicyConfig(epsilon=1.0), draw_rng) for _ in range(10_000)]
    counts = np.array([draws.count(i) for i in ids])
    pval = chisquare(counts, 10_000 * boltzmann_probs(q, flags, 1.0, 1.0)).pvalue

    checks = {
        "sum": worst_sum <= 1e-9,
        "shift": worst_shift <= 1e-12 and greedy_ok,
        "bonus": mono,
        "T->0": conc,
        "chi2": pval > 0.01,
        "fallback": greedy_ok,
    }
    ok = all(checks.values())
    record(
        6,
        ok,
        f"sum err {worst_sum:.1e}, shift err {worst_shift:.1e}, chi-square p={pval:.3f}; "
        + ", ".join(f"{k} {'ok' if v else 'BAD'}" for k, v in checks.items()),
    )
    assert ok


# ------------------------------------------------------------- criterion 7
class _MapChecker:
    def __init__(self, tmap: TopoMap):
        self.map = tmap
        self.visited: set[tuple[float, float]] = set()
        self.detected: set[int] = set()
        self.prev_nodes: set[int] = set()
        self.prev_edges: set[tuple[int, int]] = set()
        self.prev_explored: set[int] = set()
        self.failures: list[str] = []

    def wrap(self, env: Env) -> None:
        observe = env.observe

        def recording():
            self.visited.add(env.pose.xy)
            dets = observe()
            self.detected.update(d.object_id for d in dets)
            return dets

        env.observe = recording

    def check(self, *_):
        m = self.map
        nodes = set(m.nodes)
        for (a, b), w in m.edges.items():
            if a not in nodes or b not in nodes:
                self.failures.append(f"edge {(a, b)} has a missing endpoint")
            elif abs(w - math.dist(m.nodes[a].position, m.nodes[b].position)) > 1e-9:
                self.failures.append(f"edge {(a, b)} weight {w} is not Euclidean")
        edges = set(m.edges)
        explored = {i for i, n in m.nodes.items() if n.explored}
        if not self.prev_nodes <= nodes or not self.prev_edges <= edges or not self.prev_explored <= explored:
            self.failures.append("nodes, edges or explored flags shrank")
        self.prev_nodes, self.prev_edges, self.prev_explored = nodes, edges, explored
        for n in m.nodes.values():
            if n.kind == NodeKind.WAYPOINT and tuple(n.position) not in self.visited:
                self.failures.append(f"waypoint {n.id} at {n.position} is not a visited pose")
        n_obj = sum(1 for n in m.nodes.values() if n.kind == NodeKind.OBJECT)
        if n_obj != len(self.detected):
            self.failures.append(f"{n_obj} object nodes but {len(self.detected)} detected ids")


def _fuzz_episode(seed: int) -> list[str]:
    rng = np.random.default_rng([seed, 77])
    cfg = SceneConfig(
        rooms=int(rng.integers(2, 5)),
        objects_per_room=int(rng.integers(1, 4)),
        n_targets=int(rng.integers(1, 3)),
        max_steps=int(rng.integers(60, 200)),
    )
    scene = generate_scene(seed, cfg)
    env = Env(scene, "immediate", seed, scene.sample_spawn(rng))
    tmap = TopoMap(MapParams(), scene.plan.walls, seed=seed)
    checker = _MapChecker(tmap)
    checker.wrap(env)
    explorer = Explorer(env, tmap, checker.check)
    explorer.observe()
    checker.check()
    for _ in range(200):
        if env.done or env.truncated:
            break
        acts = tmap.action_set()
        if not acts or rng.random() < 0.2:
            explorer.act(Action(int(rng.integers(3))))
            continue
        try:
            execute_macro(explorer, MacroAction(int(rng.choice(acts))), budget=int(rng.integers(5, 80)))
        except NoPath:
            explorer.act(Action(int(rng.integers(3))))
        checker.check()
    return checker.failures


def test_criterion_7_map_fuzz():
    failures = {}
    for seed in range(1000):
        f = _fuzz_episode(seed)
        if f:
            failures[seed] = f[:3]
    ok = not failures
    detail = "1000 random episodes, every invariant held after every step" if ok else f"{len(failures)} episodes failed, e.g. {next(iter(failures.items()))}"
    record(7, ok, detail)
    assert ok


# ------------------------------------------------------------- criterion 8
TINY = "n_images = 2\nhidden = 8\nbatch = 4\nwarmup_episodes = 1\nscene.rooms = 2\nscene.objects_per_room = 2\nscene.max_steps = 400\n"


def _subcommands(root, cfg_path):
    common = ["--config", cfg_path, "--episodes", "3", "--scenes", "2", "--seed", "11", "--eval-episodes", "3"]
    ckpt = root / "train" / "checkpoint.qnet"
    return [
        ("train", ["train", "--targets", "2", "--reward", "terminal", *common]),
        ("baseline", ["baseline", "--targets", "2", "--reward", "terminal", *common]),
        ("eval", ["eval", "--targets", "2", "--reward", "terminal", *common, "--checkpoint", ckpt]),
        ("dump-map", ["dump-map", "--targets", "2", "--reward", "terminal", *common, "--checkpoint", ckpt]),
    ]


def test_criterion_8_determinism(tmp_path):
    cfg_path = tmp_path / "tiny.txt"
    cfg_path.write_text(TINY)
    outputs = []
    for run in ("r1", "r2"):
        root = tmp_path / run
        files = {}
        for name, argv in _subcommands(root, cfg_path):
            out = root / name
            assert cli_main([str(a) for a in argv] + ["--out", str(out)]) == 0
            for f in sorted(out.glob("*.csv")):
                files[f"{name}/{f.name}"] = f.read_bytes()
        curves = [str(root / n / "curve.csv") for n in ("train", "baseline")]
        assert cli_main(["plot", "--in", *curves, "--out", str(root / "fig.svg")]) == 0
        files["fig.svg"] = (root / "fig.svg").read_bytes()
        outputs.append(files)
    differing = [k for k in outputs[0] if outputs[0][k] != outputs[1].get(k)]
    ok = not differing and outputs[0].keys() == outputs[1].keys() and len(outputs[0]) >= 6
    record(8, ok, f"{len(outputs[0])} output files from 5 subcommands compared byte for byte; differing: {differing or 'none'}")
    assert ok
