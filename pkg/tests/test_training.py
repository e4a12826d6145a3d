import json

import numpy as np
import pytest

from semcodec.dataset import PhantomConfig, gen_phantom
from semcodec.policy import (
    ACTOR,
    CRITIC,
    GROUPS,
    PolicyNet,
    State,
    ctu_arch,
    forward,
    frame_arch,
    fresh,
    greedy_actions,
    sample_actions,
    tensor_hashes,
)
from semcodec.training import (
    Adam,
    RewardConfig,
    TrainConfig,
    Trainer,
    TrainingError,
    a2c_step,
    a2c_update,
    evaluate,
    prepare,
    pretrain,
    reward,
    rows_to_csv,
    run_episode,
    scaled_return,
    train_loop,
)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Twenty 64x64 two-frame domain-A phantoms: the smallest legal pretraining corpus."""
    return [gen_phantom(PhantomConfig(seed=s, domain="A", width=64, height=64, n_frames=2))[0] for s in range(20)]


@pytest.fixture(scope="session")
def tiny_prep(small_phantoms):
    return prepare(small_phantoms[:1])[0]


# -- reward ---------------------------------------------------------------------------


def test_reward_examples():
    assert reward(0.0, [0, 0], RewardConfig(5.0, 1.0)) == 0.0
    assert reward(3.0, [0.2, 0.2], RewardConfig(0.0, 1.0)) == pytest.approx(-0.2)
    assert reward(0.5, [0.0], RewardConfig(10.0, 0.5)) == pytest.approx(-10.0)


def test_reward_monotone():
    cfg = RewardConfig(2.0, 0.3)
    bpps = np.linspace(0, 2, 9)
    r = [reward(b, [0.1], cfg) for b in bpps]
    assert all(b < a for a, b in zip(r, r[1:]))
    d = [reward(0.4, [x], cfg) for x in np.linspace(0, 1, 9)]
    assert all(b < a for a, b in zip(d, d[1:]))


def test_reward_config_validation():
    for bad in (-1.0, 100.5):
        with pytest.raises(TrainingError):
            RewardConfig(bad, 1.0)
    with pytest.raises(TrainingError):
        RewardConfig(1.0, 0.0)


def test_scaled_return():
    assert scaled_return(-2.0, 0.0) == -2.0
    assert scaled_return(-2.0, 16.0, 16.0) == -1.0


def test_train_config_roundtrip_and_validation():
    cfg = TrainConfig(iterations=5, batch_size=2, seed=3)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.lr_frame == 1e-3 and cfg.lr_ctu == 1e-4 and TrainConfig().iterations == 1000
    with pytest.raises(TrainingError, match="unknown"):
        TrainConfig.from_dict({"iters": 3})
    for kw in (dict(iterations=0), dict(lr_ctu=0.0), dict(entropy_coef=-1), dict(lambdas=(200,))):
        with pytest.raises(TrainingError):
            TrainConfig(**kw)


# -- episodes ---------------------------------------------------------------------------


def test_episode_geometry_and_determinism(tiny_prep):
    ck = fresh(0)
    rc = RewardConfig(5.0, 0.5)
    a, b = run_episode(tiny_prep, ck, rc), run_episode(tiny_prep, ck, rc)
    assert a.frame_qps == b.frame_qps and np.array_equal(a.ctu_actions, b.ctu_actions)
    assert a.reward == b.reward and a.stats.total_bits == b.stats.total_bits
    n_ctu = tiny_prep.n_ctu * tiny_prep.n_frames
    assert len(a.ctu_actions) == len(a.ctu_log_probs) == len(a.ctu_values) == len(a.ctu_rewards) == n_ctu
    assert len(a.distortions) == len(a.frame_qps) == tiny_prep.n_frames
    assert tiny_prep.legal[np.arange(n_ctu), a.ctu_actions].all()
    assert 14 <= a.qp_i <= 37


def test_ctu_rewards_decompose_episode_reward(tiny_prep):
    e = run_episode(tiny_prep, fresh(2), RewardConfig(3.0, 0.5), "sample", np.random.default_rng(0))
    # per-CTU shares add back up to the reward, up to the frame-header bits
    header = sum(f.header_bits for f in e.stats.frames) / (e.stats.frames[0].per_ctu_bits.size * 64 * 64)
    head_term = 3.0 * header / tiny_prep.n_frames / 0.5
    total = e.ctu_rewards.sum() / (tiny_prep.n_ctu * tiny_prep.n_frames)
    assert total - head_term == pytest.approx(e.reward, abs=1e-9)


def test_sampled_rewards_vary(small_phantoms):
    prep = prepare(small_phantoms[1:2])[0]
    rng = np.random.default_rng(0)
    ck = fresh(1)
    rs = [run_episode(prep, ck, RewardConfig(5.0, 0.5), "sample", rng).reward for _ in range(100)]
    assert np.var(rs) > 0


def test_lambda_zero_prefers_low_qp(tiny_prep):
    # with the rate term gone the lowest QP_I wins among the explored extremes
    rc = RewardConfig(0.0, 1.0)
    ck = fresh(0)
    out = {}
    for a in (0, 23):
        ck.frame.params["actor.b"][:] = 0
        ck.frame.params["actor.b"][a] = 1e6
        out[a] = run_episode(tiny_prep, ck, rc)
    assert out[0].qp_i == 14 and out[23].qp_i == 37
    assert out[0].reward >= out[23].reward


def test_bad_mode(tiny_prep):
    with pytest.raises(TrainingError):
        run_episode(tiny_prep, fresh(0), RewardConfig(1.0, 1.0), "explore")
    with pytest.raises(TrainingError):
        run_episode(tiny_prep, fresh(0), RewardConfig(1.0, 1.0), "sample", None)


# -- updates ---------------------------------------------------------------------------


def test_zero_advantage_zero_error_is_a_no_op(rng):
    net = PolicyNet(ctu_arch(), 0)
    state = State(rng.random((4, 32, 32, 2)), rng.random((4, 4)), np.ones((4, 7), bool))
    _, v = forward(net, state)
    before = {k: x.copy() for k, x in net.params.items()}
    # returns == V: zero advantage and zero critic error, hence no update at all
    a2c_update(net, Adam(1e-2), state, [0, 1, 2, 3], v, GROUPS)
    for k in before:
        assert np.array_equal(before[k], net.params[k]), k


def test_critic_moves_toward_targets(rng):
    net = PolicyNet(ctu_arch(), 0)
    state = State(rng.random((4, 32, 32, 2)), rng.random((4, 4)), np.ones((4, 7), bool))
    opt = Adam(1e-2)
    targets = np.full(4, 2.0)
    err0 = np.abs(forward(net, state)[1] - targets).mean()
    for _ in range(20):
        a2c_update(net, opt, state, [0, 1, 2, 3], targets, {CRITIC})
    assert np.abs(forward(net, state)[1] - targets).mean() < err0


def test_empty_mask_changes_nothing(rng):
    net = PolicyNet(frame_arch(), 0)
    state = State(rng.random((2, 64, 64, 3)), None, np.ones((2, 24), bool))
    h = tensor_hashes(net)
    rep = a2c_update(net, Adam(1e-2), state, [3, 4], [-1.0, 1.0], set())
    assert tensor_hashes(net) == h and np.isfinite(rep.total)


@pytest.mark.parametrize("level", ["frame", "ctu"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_toy_bandit_converges(level, seed):
    """Two legal actions; action 1 pays 1 and action 0 pays 0, with noise."""
    rng = np.random.default_rng(seed)
    if level == "frame":
        net, lr = PolicyNet(frame_arch(), seed), 1e-3
        state = State(rng.random((1, 64, 64, 3)), None, np.zeros((1, 24), bool))
    else:
        net, lr = PolicyNet(ctu_arch(), seed), 1e-4
        state = State(rng.random((1, 32, 32, 2)), rng.random((1, 4)), np.zeros((1, 7), bool))
    state.legal[0, :2] = True
    opt = Adam(lr)
    for _ in range(200):
        logits, _ = forward(net, state)
        a = sample_actions(logits, rng)
        r = (a == 1).astype(float) + rng.normal(0, 0.1, 1)
        a2c_update(net, opt, state, a, r, GROUPS, entropy_coef=0.01)
    assert greedy_actions(forward(net, state)[0])[0] == 1


def test_a2c_step_respects_mask(tiny_prep):
    ck = fresh(0)
    frozen = {a: tensor_hashes(n) for a, n in ck.nets().items()}
    trainer = Trainer(ck, TrainConfig(), groups={ACTOR, CRITIC})
    eps = [run_episode(tiny_prep, ck, RewardConfig(1.0, 0.5), "sample", np.random.default_rng(i)) for i in range(2)]
    trainer.step(eps)
    for agent, net in ck.nets().items():
        after = tensor_hashes(net)
        for k, h in frozen[agent].items():
            if net.group_of(k) not in (ACTOR, CRITIC):
                assert after[k] == h, (agent, k)
        assert after["actor.w"] != frozen[agent]["actor.w"]
    with pytest.raises(TrainingError):
        a2c_step(trainer, [])


def test_non_finite_loss_dumps_diagnostics(tiny_prep, tmp_path):
    ck = fresh(0)
    e = run_episode(tiny_prep, ck, RewardConfig(1.0, 0.5), "sample", np.random.default_rng(0))
    e.reward = float("nan")
    trainer = Trainer(ck, TrainConfig(), dump_path=tmp_path / "dump.json")
    with pytest.raises(TrainingError, match="non-finite"):
        trainer.step([e])
    diag = json.loads((tmp_path / "dump.json").read_text())
    assert diag["episodes"][0]["name"] == tiny_prep.name


# -- pretraining -------------------------------------------------------------------------


def test_pretrain_smoke(tiny_corpus, tmp_path):
    cfg = TrainConfig(iterations=20, seed=4)
    ck, rows = pretrain(tiny_corpus, cfg, log_path=tmp_path / "log.csv")
    assert len(rows) == 20
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == "iteration,mean_reward,actor_loss,critic_loss,entropy,mean_bpp,mean_distortion"
    assert ck.meta["bpp_norm"] == pytest.approx(cfg.norm_scale * ck.meta["reference_bpp"])
    ck.save(tmp_path / "ck.smck")
    from semcodec.policy import Checkpoint

    back = Checkpoint.load(tmp_path / "ck.smck")
    e = run_episode(prepare(tiny_corpus[:1])[0], back, RewardConfig(5.0, ck.meta["bpp_norm"]))
    assert np.isfinite(e.reward)


def test_pretrain_seed_determinism(tiny_corpus):
    cfg = TrainConfig(iterations=5, seed=9)
    a, ra = pretrain(tiny_corpus, cfg)
    b, rb = pretrain(tiny_corpus, cfg)
    assert a.to_bytes() == b.to_bytes() and rows_to_csv(ra) == rows_to_csv(rb)
    c, _ = pretrain(tiny_corpus, TrainConfig(iterations=5, seed=10))
    assert c.to_bytes() != a.to_bytes()


def test_pretrain_needs_twenty_sequences(tiny_corpus):
    with pytest.raises(TrainingError, match="at least 20"):
        pretrain(tiny_corpus[:19], TrainConfig(iterations=1))


def test_evaluate_is_deterministic(tiny_corpus):
    preps = prepare(tiny_corpus[:2])
    ck = fresh(0)
    assert evaluate(ck, preps, (0.0, 5.0), 0.5) == evaluate(ck, preps, (0.0, 5.0), 0.5)


def test_train_loop_callback(tiny_corpus):
    preps = prepare(tiny_corpus[:3])
    seen = []
    train_loop(Trainer(fresh(0), TrainConfig(iterations=3)), preps, 0.5, np.random.default_rng(0), on_iteration=seen.append)
    assert seen == [1, 2, 3]
