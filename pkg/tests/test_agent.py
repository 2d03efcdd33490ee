from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from scipy.stats import kstest

from conftest import make_scene
from macronav.agent import (
    Learner,
    TrainConfig,
    episode_seed,
    eval_scene_seeds,
    evaluate,
    run_episode,
    train,
    train_scene_seeds,
)
from macronav.errors import InvalidConfig
from macronav.qnet import init_params, loss_and_gradients, optimizer_step, td_targets
from macronav.sim import SceneConfig, SceneObject, generate_scene


def small_cfg(**kw):
    scene = SceneConfig(rooms=2, objects_per_room=2, max_steps=kw.pop("max_steps", 400))
    base = dict(episodes=2, scenes=2, warmup_episodes=1, n_images=2, hidden=8, eval_episodes=2, batch=4, scene=scene)
    base.update(kw)
    return TrainConfig(**base)


def stats_key(s):
    d = dataclasses.asdict(s)
    d.pop("wall_time")
    return d


def advance(x, x_next):
    i = int(np.argmax(x))
    j = len(x_next) if not x_next.any() else int(np.argmax(x_next))
    return j - i


def test_config_validation_and_flat():
    with pytest.raises(InvalidConfig):
        TrainConfig(scenes=0)
    with pytest.raises(InvalidConfig):
        TrainConfig(reward_mode="sparse")
    with pytest.raises(InvalidConfig):
        TrainConfig(compute_dtype="float16")
    cfg = TrainConfig(n_targets=3)
    assert cfg.scene.n_targets == 3 and cfg.arch.n_targets == 3
    flat = cfg.flat()
    assert flat["episodes"] == 300 and flat["scene.rooms"] == cfg.scene.rooms and "policy.epsilon" in flat


def test_train_and_eval_seeds_disjoint():
    for seed in range(5):
        assert not set(train_scene_seeds(seed, 8)) & set(eval_scene_seeds(seed, 1000))


def test_single_target_scene_needs_one_decision():
    target = SceneObject(0, 0, (0.0, 0.0), 7, True, 0)
    scene = make_scene([target], rooms=((-3.0, -3.0, 3.0, 3.0),))
    cfg = small_cfg()
    for mode in ("random", "eval"):
        params = None if mode == "random" else init_params(0, cfg.arch)
        for k in range(3):
            stats, trans = run_episode(scene, params, cfg, mode, k)
            assert stats.success and stats.macro_decisions == 1 and stats.episode_return == 1.0
            assert len(trans) == 1 and trans[0].done and trans[0].reward == 1.0


def test_random_mode_is_uniform_over_object_nodes():
    cfg = small_cfg(max_steps=600)
    u = []
    rng = np.random.default_rng(0)

    def hook(info):
        acts = info["actions"]
        assert info["q"] is None and info["choice"] in acts
        assert acts == info["map"].action_set()
        u.append((acts.index(info["choice"]) + rng.random()) / len(acts))

    for k, s in enumerate(train_scene_seeds(3, 12)):
        run_episode(generate_scene(s, cfg.scene), None, cfg, "random", k, record=False, on_decision=hook)
    assert len(u) > 100
    assert kstest(u, "uniform").pvalue > 0.001


@pytest.mark.parametrize("reward_mode,n_targets", [("immediate", 2), ("terminal", 2), ("immediate", 1)])
def test_transition_accounting(reward_mode, n_targets):
    cfg = small_cfg(reward_mode=reward_mode, n_targets=n_targets, max_steps=1500)
    params = init_params(1, cfg.arch)
    totals = []
    for k, s in enumerate(train_scene_seeds(7, 3)):
        totals.clear()
        scene = generate_scene(s, cfg.scene)
        stats, trans = run_episode(scene, params, cfg, "train", k, on_decision=lambda info: totals.append(info["env"].total_reward))
        assert len(trans) == stats.macro_decisions == len(totals)
        ends = totals[1:] + [stats.episode_return]
        for t, a, b in zip(trans, totals, ends):
            assert t.reward == b - a
            assert t.x.sum() == 1.0
            if reward_mode == "immediate":
                assert t.reward == advance(t.x, t.x_next)
        for t, t2 in zip(trans, trans[1:]):
            assert np.array_equal(t.x_next, t2.x) and not t.done
        assert trans[-1].done == stats.success
        if stats.success:
            assert not trans[-1].x_next.any() and trans[-1].next_candidates == []
            assert stats.episode_return == (n_targets if reward_mode == "immediate" else 1.0)
        assert stats.elementary_steps <= cfg.scene.max_steps
        for t in trans:
            assert len(t.action_patches) == cfg.n_images
            assert all(not p.flags.writeable for p in t.action_patches)
            assert len(t.next_candidates) <= cfg.candidate_cap


def test_eval_episode_is_deterministic():
    cfg = small_cfg()
    params = init_params(2, cfg.arch)
    scene = generate_scene(11, cfg.scene)
    a, ta = run_episode(scene, params, cfg, "eval", 5)
    b, tb = run_episode(scene, params, cfg, "eval", 5)
    assert stats_key(a) == stats_key(b)
    assert [t.reward for t in ta] == [t.reward for t in tb]


def test_mode_validation():
    cfg = small_cfg()
    scene = generate_scene(0, cfg.scene)
    with pytest.raises(ValueError):
        run_episode(scene, None, cfg, "eval", 0)
    with pytest.raises(ValueError):
        run_episode(scene, None, cfg, "explore", 0)


def test_zero_episodes_keeps_init_params():
    cfg = small_cfg(episodes=0, warmup_episodes=2)
    res = train(cfg)
    assert res.params.equals(init_params(cfg.seed, cfg.arch))
    assert res.rows == [] and res.updates == 0
    assert len(res.learner.buffer) > 0


def test_train_rows_updates_and_determinism():
    cfg = small_cfg(episodes=3)
    a = train(cfg, snapshot_at=(0, 2))
    b = train(cfg)
    assert len(a.rows) == 3
    assert a.updates == sum(r.macro_decisions for r in a.rows) > 0
    assert a.params.equals(b.params) and a.params.all_finite()
    assert [stats_key(r) for r in a.rows] == [stats_key(r) for r in b.rows]
    assert set(a.snapshots) == {0, 2} and a.snapshots[0].equals(init_params(cfg.seed, cfg.arch))


def test_overfit_one_batch():
    cfg = small_cfg(episodes=0, warmup_episodes=2)
    res = train(cfg)
    batch = res.learner.buffer.sample(8, np.random.default_rng(0))
    params = init_params(0, cfg.arch)
    learner = Learner(params, dataclasses.replace(cfg, lr=1e-3), np.random.default_rng(0))
    y = td_targets(batch, learner.target, cfg.gamma)
    losses = []
    for _ in range(100):
        loss, grads = loss_and_gradients(params, batch, y)
        optimizer_step(params, grads, learner.opt)
        losses.append(loss)
    assert losses[-1] < 0.5 * losses[0]


def test_evaluate():
    cfg = small_cfg()
    with pytest.raises(ValueError):
        evaluate(None, cfg, 0, mode="random")
    summary = evaluate(None, cfg, 3, mode="random")
    assert len(summary.rows) == 3
    assert {r.scene_seed for r in summary.rows} == set(eval_scene_seeds(cfg.seed, 3))
    assert summary.median_steps == float(np.median([r.elementary_steps for r in summary.rows]))
    on_train = evaluate(None, cfg, 4, mode="random", training_scenes=True)
    assert {r.scene_seed for r in on_train.rows} == set(train_scene_seeds(cfg.seed, cfg.scenes))


def test_random_policy_against_itself():
    # same held-out scenes, two independent spawn/noise streams
    cfg = small_cfg(max_steps=2000)
    scenes = [generate_scene(s, cfg.scene) for s in eval_scene_seeds(cfg.seed, 100)]
    a = [run_episode(sc, None, cfg, "random", episode_seed(0, 3, k), record=False)[0].elementary_steps for k, sc in enumerate(scenes)]
    b = [run_episode(sc, None, cfg, "random", episode_seed(0, 7, k), record=False)[0].elementary_steps for k, sc in enumerate(scenes)]
    assert 0.85 <= np.median(a) / np.median(b) <= 1.15
