import numpy as np
import pytest

from mfgsolver.baselines import baseline_systemic, conditional_optimal_control, conditional_rho
from mfgsolver.evaluate import actor_control, evaluate_cost
from mfgsolver.langevin import LmcConfig
from mfgsolver.models import (FixedMeanMeasure, ParticleEnsemble, SystemicRiskParams,
                              TimeGrid, make_systemic_risk)
from mfgsolver.neural import forward, make_netstack
from mfgsolver.objectives import critic_loss_and_grads
from mfgsolver.simulate import simulate
from mfgsolver.streams import substream
from mfgsolver.trainer import (STAGES, IterationRecord, TrainConfig, TrainingAbort,
                               lyapunov_actor, lyapunov_critic, read_history_csv,
                               train, w2_gap, write_history_csv)

TOY_LMC = LmcConfig(n_steps=40, step=0.05, total=2.0)


def toy_config(**overrides):
    base = dict(model_id="systemic_risk", model_params=SystemicRiskParams(),
                n_steps=8, k_end=2, n_batch=40, minibatch=16, lmc=TOY_LMC,
                diagnostics_every=1, n_eval_diagnostics=100, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainLoop:
    def test_single_iteration_runs_all_six_stages_once(self):
        res = train(toy_config(k_end=1))
        assert len(res.history) == 1
        assert res.trace == list(STAGES)

    def test_stage_order_audit_over_iterations(self):
        res = train(toy_config(k_end=3))
        assert res.trace == list(STAGES) * 3

    def test_history_is_finite(self):
        res = train(toy_config(k_end=2))
        for rec in res.history:
            for val in (rec.score_loss, rec.critic_loss, rec.actor_loss,
                        rec.lyap_actor, rec.lyap_critic, rec.w2_gap):
                assert val is not None and np.isfinite(val)

    def test_bitwise_determinism_across_runs(self):
        r1 = train(toy_config(k_end=2))
        r2 = train(toy_config(k_end=2))
        for a, b in zip(r1.history, r2.history):
            assert a.score_loss == b.score_loss
            assert a.critic_loss == b.critic_loss
            assert a.actor_loss == b.actor_loss
            assert a.lyap_critic == b.lyap_critic
            assert a.w2_gap == b.w2_gap
        for n1, n2 in zip(r1.stack.actor, r2.stack.actor):
            for name, val in n1.params().items():
                assert np.array_equal(val, getattr(n2, name))

    def test_beta_a_zero_freezes_actor(self):
        cfg = toy_config(k_end=2, beta_a=0.0)
        res = train(cfg)
        fresh = make_netstack(1, 1, 1, cfg.n_steps, cfg.hidden, substream(cfg.seed, "init"))
        for trained, init in zip(res.stack.actor, fresh.actor):
            for name, val in trained.params().items():
                assert np.array_equal(val, getattr(init, name))

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            toy_config(beta_mu=3.0, dtau=1.0)  # dtau * beta_mu > 1
        with pytest.raises(ValueError):
            toy_config(k_end=0)

    def test_abort_carries_iteration_and_stage(self):
        # an absurd learning rate drives the actor into overflow within 2 iterations
        cfg = toy_config(k_end=8, lr_actor=1e12, lr_critic=1e12, lr_score=1e12)
        with pytest.raises(TrainingAbort) as info:
            train(cfg)
        assert info.value.stage in STAGES
        assert 0 <= info.value.iteration < 8


class TestDiagnostics:
    def setup_method(self):
        self.p = SystemicRiskParams()
        self.model = make_systemic_risk(self.p)
        self.grid = TimeGrid(1.0, 10)
        self.baseline = baseline_systemic(self.p, self.grid)
        self.stack = make_netstack(1, 1, 1, 10, 16, substream(17, "stack"))
        self.measures = [FixedMeanMeasure(np.array([1.0])) for _ in range(10)]
        x0 = substream(17, "x0").standard_normal((200, 1)) + 1.0
        self.traj = simulate(self.model, self.grid, actor_control(self.stack),
                             self.measures, x0, rng=substream(17, "noise"))

    def test_lyapunov_critic_equals_critic_loss(self):
        loss, _, _ = critic_loss_and_grads(self.stack, self.traj, self.measures,
                                           self.model, self.grid)
        assert lyapunov_critic(self.stack, self.traj, self.measures, self.model,
                               self.grid) == loss

    def test_lyapunov_actor_zero_for_optimal_control(self):
        m_path = np.full(self.grid.n_steps, 1.0)
        rho = conditional_rho(self.baseline, m_path)

        def star(j, t, x):
            return conditional_optimal_control(self.baseline, m_path, t, x, rho=rho)

        gap = lyapunov_actor(star, self.measures, self.model, self.baseline,
                             self.grid, 500, substream(18, "lyap"))
        assert gap == 0.0  # identical controls under common noise

    def test_lyapunov_actor_positive_for_shifted_control(self):
        m_path = np.full(self.grid.n_steps, 1.0)
        rho = conditional_rho(self.baseline, m_path)

        def shifted(j, t, x):
            return conditional_optimal_control(self.baseline, m_path, t, x, rho=rho) + 0.1

        gap = lyapunov_actor(shifted, self.measures, self.model, self.baseline,
                             self.grid, 2000, substream(19, "lyap"))
        # oracle: paired MC estimate of the same two costs with its own streams
        rng = substream(19, "oracle")
        r_x0, r_noise = rng.spawn(2)
        x0 = self.model.init_sampler(2000, r_x0)
        xi = r_noise.standard_normal((self.grid.n_steps, 2000, 1))

        def star(j, t, x):
            return conditional_optimal_control(self.baseline, m_path, t, x, rho=rho)

        term = FixedMeanMeasure(np.array([1.0]))
        h = self.grid.h
        per_path = np.zeros(2000)
        t_star = simulate(self.model, self.grid, star, self.measures, x0, increments=xi)
        t_shift = simulate(self.model, self.grid, shifted, self.measures, x0, increments=xi)
        for j, t in enumerate(self.grid.points):
            per_path += (self.model.running_cost(t, t_shift.states[j], self.measures[j],
                                                 t_shift.controls[j])
                         - self.model.running_cost(t, t_star.states[j], self.measures[j],
                                                   t_star.controls[j])) * h
        per_path += (self.model.terminal_cost(t_shift.states[-1], term)
                     - self.model.terminal_cost(t_star.states[-1], term))
        se = per_path.std() / np.sqrt(2000)
        assert gap >= 3 * se  # positive at three standard errors
        # gap and oracle come from independent streams of the same design
        assert abs(gap - per_path.mean()) <= 3 * np.sqrt(2) * se

    def test_lyapunov_actor_quadratic_in_shift(self):
        # fit a quadratic through gaps at shifts +-0.05, +-0.1 and compare
        m_path = np.full(self.grid.n_steps, 1.0)
        rho = conditional_rho(self.baseline, m_path)

        def gap_of(shift):
            def control(j, t, x):
                return conditional_optimal_control(self.baseline, m_path, t, x, rho=rho) + shift
            return lyapunov_actor(control, self.measures, self.model, self.baseline,
                                  self.grid, 4000, substream(20, "lyap"))

        shifts = np.array([-0.1, -0.05, 0.05, 0.1])
        gaps = np.array([gap_of(s) for s in shifts])
        coeff = np.polyfit(shifts, gaps, 2)
        predicted = np.polyval(coeff, 0.1)
        assert abs(gap_of(0.1) - predicted) <= 0.3 * abs(predicted)

    def test_lyapunov_actor_requires_baseline(self):
        with pytest.raises(ValueError, match="baseline missing"):
            lyapunov_actor(self.stack, self.measures, self.model, None, self.grid,
                           100, substream(21, "x"))


class TestW2Gap:
    def test_zero_when_measures_equal_states(self, rng):
        grid = TimeGrid(1.0, 5)
        states = rng.standard_normal((6, 30, 1))
        from mfgsolver.simulate import TrajectoryBatch
        traj = TrajectoryBatch(states=states, increments=None,
                               controls=np.zeros((5, 30, 1)))
        measures = [ParticleEnsemble(states[j]) for j in range(5)]
        assert w2_gap(measures, traj, grid) <= 1e-20

    def test_translation_gives_half_horizon_csq(self, rng):
        grid = TimeGrid(1.0, 5)
        states = rng.standard_normal((6, 30, 1))
        from mfgsolver.simulate import TrajectoryBatch
        traj = TrajectoryBatch(states=states, increments=None,
                               controls=np.zeros((5, 30, 1)))
        c = 0.8
        measures = [ParticleEnsemble(states[j] + c) for j in range(5)]
        got = w2_gap(measures, traj, grid)
        assert np.isclose(got, 0.5 * grid.horizon * c**2, rtol=1e-9)


class TestHistoryCsv:
    def test_roundtrip(self, tmp_path):
        recs = [IterationRecord(k=0, score_loss=-0.5, critic_loss=1.25, actor_loss=0.5,
                                lyap_actor=None, lyap_critic=0.3, w2_gap=0.1,
                                wall_time=1.0),
                IterationRecord(k=1, score_loss=-0.6, critic_loss=1.0, actor_loss=0.4,
                                lyap_actor=0.2, lyap_critic=0.2, w2_gap=0.05,
                                wall_time=2.0)]
        path = tmp_path / "history.csv"
        write_history_csv(recs, path)
        back = read_history_csv(path)
        assert back[0].lyap_actor is None
        assert back[1].critic_loss == 1.0
        assert back[0].score_loss == -0.5

    def test_zeroed_wall_time(self, tmp_path):
        recs = [IterationRecord(k=0, score_loss=0.0, critic_loss=0.0, actor_loss=0.0,
                                lyap_actor=None, lyap_critic=None, w2_gap=None,
                                wall_time=3.21)]
        path = tmp_path / "history.csv"
        write_history_csv(recs, path, zero_wall_time=True)
        assert path.read_text().splitlines()[1].endswith(",0")
