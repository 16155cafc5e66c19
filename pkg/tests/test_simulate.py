import numpy as np
import pytest

from mfgsolver.models import (Coupling, FixedMeanMeasure, MfgModel, ParticleEnsemble,
                              SystemicRiskParams, TimeGrid, make_flocking,
                              FlockingParams, make_systemic_risk)
from mfgsolver.simulate import (TrajectoryBatch, dump_trajectories, sample_initial,
                                simulate)
from mfgsolver.streams import substream


def toy_model(drift_fn, diffusion_fn, d=1, n_noise=1):
    return MfgModel(
        name="toy", dim_state=d, dim_control=1, dim_noise=n_noise,
        coupling=Coupling.STATE_MEASURE,
        drift=drift_fn, diffusion=diffusion_fn,
        running_cost=lambda t, x, mu, a: np.zeros(x.shape[0]),
        terminal_cost=lambda x, mu: np.zeros(x.shape[0]),
        grad_alpha_h=lambda t, x, mu, a, g: np.zeros_like(a),
        init_sampler=lambda n, rng: np.zeros((n, d)),
    )


def zero_control(j, t, x):
    return np.zeros((x.shape[0], 1))


def fixed_measures(grid, value=0.0):
    return [FixedMeanMeasure(np.array([value])) for _ in range(grid.n_steps)]


class TestSimulate:
    def test_zero_drift_zero_noise_paths_constant(self, rng):
        grid = TimeGrid(1.0, 20)
        model = toy_model(lambda t, x, mu, a: np.zeros_like(x),
                          lambda t, x, mu: np.array([[0.0]]))
        x0 = rng.standard_normal((50, 1))
        traj = simulate(model, grid, zero_control, fixed_measures(grid), x0, rng=rng)
        assert np.array_equal(traj.states[0], x0)
        assert np.all(traj.states == traj.states[0])

    def test_brownian_variance(self):
        grid = TimeGrid(1.0, 50)
        model = toy_model(lambda t, x, mu, a: np.zeros_like(x),
                          lambda t, x, mu: np.array([[1.0]]))
        x0 = np.zeros((5000, 1))
        traj = simulate(model, grid, zero_control, fixed_measures(grid), x0,
                        rng=substream(8, "bm"))
        var = traj.states[-1][:, 0].var()
        assert abs(var - 1.0) <= 0.1

    def test_ou_mean_matches_closed_form(self):
        # systemic-risk drift with zero control and frozen mean is an OU process
        p = SystemicRiskParams()
        model = make_systemic_risk(p)
        grid = TimeGrid(1.0, 50)
        x0 = np.full((5000, 1), 3.0)
        m0 = 1.0
        traj = simulate(model, grid, zero_control, fixed_measures(grid, m0), x0,
                        rng=substream(8, "ou"))
        want = m0 + (3.0 - m0) * np.exp(-p.a * grid.horizon)
        got = traj.states[-1][:, 0]
        se = got.std() / np.sqrt(len(got))
        assert abs(got.mean() - want) <= 3 * se

    def test_replaying_increments_reproduces_states_bitwise(self, rng):
        p = SystemicRiskParams()
        model = make_systemic_risk(p)
        grid = TimeGrid(1.0, 10)
        x0 = rng.standard_normal((20, 1))
        measures = fixed_measures(grid, 1.0)

        def control(j, t, x):
            return 0.3 * (1.0 - x)

        traj = simulate(model, grid, control, measures, x0, rng=substream(3, "sim"))
        replay = simulate(model, grid, control, measures, x0, increments=traj.increments)
        assert np.array_equal(traj.states, replay.states)
        assert np.array_equal(traj.controls, replay.controls)

    def test_grid_refinement_leaves_driftless_law_unchanged(self):
        model = toy_model(lambda t, x, mu, a: np.zeros_like(x),
                          lambda t, x, mu: np.array([[1.0]]))
        x0 = np.zeros((4000, 1))
        vs = []
        for n_steps in (25, 50):
            grid = TimeGrid(1.0, n_steps)
            traj = simulate(model, grid, zero_control, fixed_measures(grid), x0,
                            rng=substream(9, "refine", n_steps))
            vs.append(traj.states[-1][:, 0].var())
        # both are chi^2 estimates of 1 with ~2% MC noise
        assert abs(vs[0] - 1.0) <= 3 * np.sqrt(2 / 4000)
        assert abs(vs[1] - 1.0) <= 3 * np.sqrt(2 / 4000)

    def test_blowup_reports_path_and_step(self):
        grid = TimeGrid(1.0, 5)
        bad = toy_model(lambda t, x, mu, a: np.where(np.arange(x.shape[0])[:, None] == 2,
                                                     np.inf, 0.0),
                        lambda t, x, mu: np.array([[0.0]]))
        with pytest.raises(RuntimeError, match=r"path 2, step 1"):
            simulate(bad, grid, zero_control, fixed_measures(grid), np.zeros((4, 1)),
                     rng=substream(1, "x"))

    def test_measure_count_mismatch_raises(self, rng):
        grid = TimeGrid(1.0, 5)
        model = toy_model(lambda t, x, mu, a: np.zeros_like(x),
                          lambda t, x, mu: np.array([[0.0]]))
        with pytest.raises(ValueError):
            simulate(model, grid, zero_control, fixed_measures(TimeGrid(1.0, 4)),
                     np.zeros((3, 1)), rng=rng)


class TestSampleInitial:
    def test_zero_variance_collapses_to_mean(self):
        model = make_systemic_risk(SystemicRiskParams(init_var=0.0))
        ens = sample_initial(model, 50, substream(2, "init"))
        assert np.all(ens.particles == 1.0)

    def test_clt_bound_on_sample_mean(self):
        model = make_systemic_risk(SystemicRiskParams())
        ens = sample_initial(model, 10000, substream(2, "clt"))
        assert abs(ens.particles.mean() - 1.0) <= 0.05

    def test_flocking_block_gaussian(self):
        model = make_flocking(FlockingParams())
        ens = sample_initial(model, 20000, substream(2, "flock"))
        assert abs(ens.particles[:, :3].mean()) <= 0.03
        assert abs(ens.particles[:, 3:].mean() - 1.0) <= 0.03

    def test_nonpositive_count_raises(self):
        model = make_systemic_risk(SystemicRiskParams())
        with pytest.raises(ValueError):
            sample_initial(model, 0, substream(2, "zero"))


def test_trajectory_dump_roundtrips(tmp_path, rng):
    model = make_systemic_risk(SystemicRiskParams())
    grid = TimeGrid(1.0, 4)
    traj = simulate(model, grid, zero_control, fixed_measures(grid, 1.0),
                    rng.standard_normal((3, 1)), rng=substream(4, "dump"))
    path = tmp_path / "traj.csv"
    dump_trajectories(traj, grid, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "path,t,x_1,alpha_1"
    assert len(lines) == 1 + 3 * (grid.n_steps + 1)
    # terminal rows carry no control
    assert lines[1 + grid.n_steps].endswith(",")
    x_back = float(lines[1].split(",")[2])
    assert x_back == traj.states[0, 0, 0]
