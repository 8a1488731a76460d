import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_qmix
from oracles import central_diff, max_rel_error
from ridemix.grid_world import ConfigError
from ridemix.obs_encoding import observation_size
from ridemix.policies import IdqnModel, QmixModel
from ridemix.tensor_core import AdamState, DenseNet, Layer, adam_step, huber
from ridemix.training import (
    EpsilonSchedule,
    ReplayBuffer,
    TrainConfig,
    Transition,
    epsilon_at,
    idqn_loss,
    make_model,
    qmix_loss,
    read_curve,
    train,
    write_curve,
)


def bias_only_idqn(q_values, p_max, c_max):
    """IDQN model whose Q-matrix is the constant ``q_values`` for every observation."""
    d = observation_size(p_max, c_max)
    net = DenseNet([Layer(np.zeros((p_max * c_max, d)), np.asarray(q_values, float).ravel())])
    return IdqnModel(net, p_max, c_max)


def transition(obs, action, rewards, total):
    return Transition(np.asarray(obs, float), tuple(action), tuple(rewards), float(total))


class TestEpsilon:
    def test_start(self):
        assert epsilon_at(EpsilonSchedule(), 0) == 0.9

    def test_limit(self):
        assert epsilon_at(EpsilonSchedule(), 10**9) == pytest.approx(0.05, abs=1e-12)

    def test_at_decay_constant(self):
        assert epsilon_at(EpsilonSchedule(), 20000) == pytest.approx(0.05 + 0.85 * math.exp(-1), abs=1e-15)

    @given(st.integers(0, 10**6), st.integers(0, 10**6))
    def test_non_increasing(self, a, b):
        s = EpsilonSchedule()
        lo, hi = sorted((a, b))
        assert epsilon_at(s, lo) >= epsilon_at(s, hi)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            EpsilonSchedule(0.1, 0.5, 100)
        with pytest.raises(ConfigError):
            EpsilonSchedule(0.9, 0.05, 0)


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(5)
        for i in range(8):
            buf.add(transition([i], [0], [-i], -i))
        assert len(buf) == 5 and buf.inserted == 8
        assert [t.global_reward for t in buf] == [-3.0, -4.0, -5.0, -6.0, -7.0]

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            buf.add(transition([i], [0], [-i], -i))
        batch = buf.sample(10, np.random.default_rng(0))
        assert sorted(t.global_reward for t in batch) == [-float(i) for i in range(9, -1, -1)]

    def test_transition_has_no_next_state(self):
        assert not any("next" in f for f in Transition.__dataclass_fields__)


class TestIdqnLoss:
    def test_zero_residual(self):
        model = bias_only_idqn([[-3.0]], 1, 1)
        loss, _ = idqn_loss(model, [transition(np.zeros(8), [0], [-3.0], -3.0)])
        assert loss == 0.0

    def test_quadratic_branch(self):
        model = bias_only_idqn([[-2.5]], 1, 1)
        loss, _ = idqn_loss(model, [transition(np.zeros(8), [0], [-3.0], -3.0)])
        assert loss == 0.125

    def test_hand_summed_batch(self):
        q = np.array([[-1.0, -4.0], [-2.0, -0.5]])
        model = bias_only_idqn(q, 2, 2)
        obs = np.zeros(observation_size(2, 2))
        batch = [
            transition(obs, [1, 0], [-3.5, -2.2], -6.0),  # residuals 0.5, -0.2
            transition(obs, [0], [-6.0], -6.0),  # residual -5.0; second passenger absent
        ]
        expected = (0.5 * 0.5**2 + 0.5 * 0.2**2 + (5.0 - 0.5) + 0.0) / (2 * 2)
        loss, _ = idqn_loss(model, batch)
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_zero_residual_two_elements(self):
        q = np.array([[-1.0, -4.0], [-2.0, -0.5]])
        model = bias_only_idqn(q, 2, 2)
        obs = np.zeros(observation_size(2, 2))
        batch = [transition(obs, [1, 0], [-4.0, -2.0], -6.0), transition(obs, [0, 1], [-1.0, -0.5], -2.0)]
        assert idqn_loss(model, batch)[0] == 0.0

    def test_unchosen_entries_get_no_gradient(self, rng):
        model = IdqnModel.create(3, 3, hidden=8, rng=rng)
        batch = [
            transition(rng.uniform(size=observation_size(3, 3)), [0, 2], [-4.0, -9.0], -12.0),
            transition(rng.uniform(size=observation_size(3, 3)), [2, 2, 1], [-1.0, -3.0, -7.0], -9.0),
        ]
        _, grads = idqn_loss(model, batch)
        d_bias = grads["agent"].grads[-1].reshape(3, 3)
        chosen = {(0, 0), (1, 2), (0, 2), (2, 1)}
        for i in range(3):
            for j in range(3):
                if (i, j) not in chosen:
                    assert d_bias[i, j] == 0.0
                else:
                    assert d_bias[i, j] != 0.0

    def test_empty_batch(self, rng):
        with pytest.raises(ValueError):
            idqn_loss(IdqnModel.create(1, 1, hidden=2, rng=rng), [])

    def test_finite_difference(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(20):
            model = IdqnModel.create(2, 2, hidden=5, rng=rng)
            batch = random_batch(rng, 2, 2, 3)
            _, grads = idqn_loss(model, batch)
            numeric = central_diff(lambda: idqn_loss(model, batch)[0], model.net.params())
            worst = max(worst, max_rel_error(grads["agent"].grads, numeric))
        assert worst < 1e-4


def random_batch(rng, p_max, c_max, size, reward_scale=3.0):
    batch = []
    for _ in range(size):
        n_p = int(rng.integers(1, p_max + 1))
        n_c = int(rng.integers(1, c_max + 1))
        obs = np.zeros(observation_size(p_max, c_max))
        obs[: 2 * n_c] = rng.uniform(size=2 * n_c)
        obs[2 * c_max : 2 * c_max + n_c] = 1
        base = 3 * c_max
        obs[base : base + 4 * n_p] = rng.uniform(size=4 * n_p)
        obs[base + 4 * p_max : base + 4 * p_max + n_p] = 1
        action = [int(a) for a in rng.integers(n_c, size=n_p)]
        rewards = [-float(r) for r in rng.uniform(0, reward_scale, size=n_p)]
        batch.append(transition(obs, action, rewards, -float(rng.uniform(0, reward_scale))))
    return batch


class TestQmixLoss:
    def constant_qtot_model(self, p_max=2, c_max=2):
        """QMIX model with Q_tot(s, a) = -obs[0] exactly."""
        model = QmixModel.create(p_max, c_max, hidden=4, mixing_width=3, rng=0)
        for net in model.subnets().values():
            for p in net.params():
                p[...] = 0.0
        model.hyper_b2.layers[0].weight[0, 0] = 1.0
        model.hyper_b2.layers[1].weight[0, 0] = -1.0
        return model

    def test_zero_residual(self):
        model = self.constant_qtot_model()
        obs_a, obs_b = np.zeros(16), np.zeros(16)
        obs_a[0], obs_b[0] = 0.25, 0.75
        batch = [transition(obs_a, [0, 1], [-1, -2], -0.25), transition(obs_b, [1], [-3], -0.75)]
        assert qmix_loss(model, batch)[0] == 0.0

    def test_linear_branch(self):
        model = self.constant_qtot_model()
        obs = np.zeros(16)
        obs[0] = 0.5
        loss, _ = qmix_loss(model, [transition(obs, [0], [-1], -2.5)])
        assert loss == 1.5

    def test_hand_computed_batch(self, rng):
        model = random_qmix(rng, 2, 2, scale=1.0)
        batch = random_batch(rng, 2, 2, 2)
        expected = 0.0
        for t in batch:
            qmat = model.agent(t.observation).reshape(2, 2)
            chosen = np.zeros(2)
            for i, a in enumerate(t.action):
                chosen[i] = qmat[i, a]
            w1 = model.hyper_w1(t.observation).reshape(3, 2)
            w2 = model.hyper_w2(t.observation)
            b1 = model.hyper_b1(t.observation)
            b2 = model.hyper_b2(t.observation)[0]
            hidden = [math.exp(z) - 1 if z <= 0 else z for z in w1 @ chosen + b1]
            q_tot = sum(w * h for w, h in zip(w2, hidden)) + b2
            r = t.global_reward - q_tot
            expected += 0.5 * r * r if abs(r) <= 1 else abs(r) - 0.5
        assert qmix_loss(model, batch)[0] == pytest.approx(expected / 2, abs=1e-12)

    def test_nonnegative(self, rng):
        for _ in range(50):
            model = random_qmix(rng, 3, 2)
            assert qmix_loss(model, random_batch(rng, 3, 2, 4))[0] >= 0

    def test_finite_difference_all_parameters(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(20):
            model = random_qmix(rng, 2, 2, hidden=4, mixing_width=3, scale=1.0)
            batch = random_batch(rng, 2, 2, 3)
            _, grads = qmix_loss(model, batch)
            names = list(model.subnets())
            params = [p for n in names for p in model.subnets()[n].params()]
            numeric = central_diff(lambda: qmix_loss(model, batch)[0], params)
            analytic = [g for n in names for g in grads[n].grads]
            worst = max(worst, max_rel_error(analytic, numeric))
        assert worst < 1e-4

    def test_absent_passengers_get_no_agent_gradient(self, rng):
        model = random_qmix(rng, 3, 2, scale=1.0)
        batch = random_batch(rng, 3, 2, 1)
        batch = [transition(batch[0].observation, [1], [-1.0], -4.0)]
        _, grads = qmix_loss(model, batch)
        d_bias = grads["agent"].grads[-1].reshape(3, 2)
        assert d_bias[0, 1] != 0.0
        assert np.count_nonzero(d_bias) == 1

    def test_zero_lr_step_keeps_params(self, rng):
        model = random_qmix(rng, 2, 2)
        _, grads = qmix_loss(model, random_batch(rng, 2, 2, 4))
        before = {n: net.copy() for n, net in model.subnets().items()}
        for name, net in model.subnets().items():
            adam_step(net, grads[name], AdamState.for_net(net, lr=0.0))
            assert net.same_params(before[name])


def small_config(**kw):
    base = dict(episodes=300, width=6, height=6, p=3, c=2, batch_size=32, buffer_capacity=200, hidden=16, seed=4)
    base.update(kw)
    return TrainConfig(**base)


class TestTrain:
    @pytest.mark.parametrize("algo", ["idqn", "qmix"])
    def test_zero_episodes_is_init(self, algo):
        config = small_config(episodes=0)
        result = train(algo, config)
        init = make_model(algo, config, np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[0]))
        for name, net in result.model.subnets().items():
            assert net.same_params(init.subnets()[name])
        assert result.curve == []

    @pytest.mark.parametrize("algo", ["idqn", "qmix"])
    def test_bit_identical_reruns(self, algo):
        a = train(algo, small_config())
        b = train(algo, small_config())
        for name, net in a.model.subnets().items():
            assert net.same_params(b.model.subnets()[name])
        assert [(p.duration, p.epsilon) for p in a.curve] == [(p.duration, p.epsilon) for p in b.curve]

    def test_parameters_move_after_warmup(self):
        config = small_config(episodes=40)
        result = train("qmix", config)
        init = make_model("qmix", config, np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[0]))
        assert not result.model.agent.same_params(init.agent)
        assert math.isnan(result.curve[30].loss) and not math.isnan(result.curve[31].loss)

    def test_variable_agents(self):
        result = train("qmix", small_config(variable=True, p=5, c=3, episodes=100))
        assert result.model.p_max == 5 and result.model.c_max == 3
        assert len(result.curve) == 100

    def test_frozen_map(self):
        result = train("idqn", small_config(frozen_map=True, episodes=50))
        assert len(result.curve) == 50

    def test_curve_csv_round_trip(self, tmp_path):
        curve = train("idqn", small_config(episodes=40)).curve
        write_curve(curve, tmp_path / "c.csv")
        back = read_curve(tmp_path / "c.csv")
        assert len(back) == 40
        assert (tmp_path / "c.csv").read_text().splitlines()[0] == "episode,epsilon,duration,loss"
        for a, b in zip(curve, back):
            assert a.episode == b.episode and a.duration == b.duration and a.epsilon == b.epsilon
            assert (math.isnan(a.loss) and math.isnan(b.loss)) or a.loss == b.loss

    @pytest.mark.parametrize(
        "kw",
        [dict(batch_size=300, buffer_capacity=200), dict(p=4, p_max=3), dict(lr=0.0), dict(episodes=-1)],
    )
    def test_config_errors(self, kw):
        with pytest.raises(ConfigError):
            small_config(**kw)

    def test_unknown_algo(self):
        with pytest.raises(ConfigError):
            train("vdn", small_config())

    def test_config_file(self, tmp_path):
        path = tmp_path / "train.ini"
        path.write_text("[train]\nepisodes = 12\nwidth = 10\nheight = 10\np = 4\nc = 2\nvariable = false\nlr = 0.01\n")
        config = TrainConfig.from_file(path, seed=9)
        assert (config.episodes, config.width, config.p, config.lr, config.seed) == (12, 10, 4, 0.01, 9)
        assert config.p_max == 4 and config.variable is False

    def test_config_file_unknown_key(self, tmp_path):
        path = tmp_path / "train.ini"
        path.write_text("[train]\nepisodez = 12\n")
        with pytest.raises(ConfigError):
            TrainConfig.from_file(path)

    def test_defaults_follow_reported_hyperparameters(self):
        c = TrainConfig()
        assert (c.episodes, c.lr, c.hidden, c.batch_size, c.decay) == (50000, 0.001, 128, 128, 20000)


def test_desk_scale_loss_decreases(desk_runs):
    for seed, run in desk_runs.items():
        losses = np.array([p.loss for p in run.curve])
        assert np.nanmean(losses[-1000:]) < np.nanmean(losses[:1000]), seed
