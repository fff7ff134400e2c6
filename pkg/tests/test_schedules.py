import numpy as np
import pytest

from trajguide.schedules import (
    DiscreteDdimSchedule,
    LinearFlowSchedule,
    ScheduleError,
    ddim_schedule_matching_flow,
    linear_flow_schedule,
    snr_matched_alpha_bar,
)


def test_linear_flow_grid_endpoints():
    sched = linear_flow_schedule(10)
    assert len(sched) == 11
    assert sched.n_steps == 10
    assert sched.t_grid[0] == 0.0
    assert sched.t_grid[-1] == 1.0
    a, s = sched.signal_noise(0)
    assert (a, s) == (1.0, 0.0)
    a, s = sched.signal_noise(10)
    assert (a, s) == (0.0, 1.0)


def test_linear_flow_rejects_bad_grids():
    with pytest.raises(ScheduleError):
        LinearFlowSchedule(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ScheduleError):
        LinearFlowSchedule(np.array([0.0, 1.5]))
    with pytest.raises(ScheduleError):
        LinearFlowSchedule(np.array([0.3]))


def test_ddim_ladder_validation():
    with pytest.raises(ScheduleError):
        DiscreteDdimSchedule(np.array([1.0, 0.5, 0.5]))  # not strictly decreasing
    with pytest.raises(ScheduleError):
        DiscreteDdimSchedule(np.array([1.0, 0.5, 0.0]))  # zero entry
    with pytest.raises(ScheduleError):
        DiscreteDdimSchedule(np.array([0.5, 1.0]))  # increasing

    sched = DiscreteDdimSchedule(np.array([1.0, 0.5, 0.25]))
    assert sched.alpha_bar[0] >= sched.alpha_bar[-1]  # data end carries more signal


def test_snr_matched_ladder_matches_flow_snr():
    t = np.linspace(0.0, 1.0, 21)[1:-1]
    ab = snr_matched_alpha_bar(t)
    snr_ladder = ab / (1.0 - ab)
    snr_flow = (1.0 - t) ** 2 / t**2
    np.testing.assert_allclose(snr_ladder, snr_flow, rtol=1e-12)


def test_snr_matched_ladder_floor_and_monotonicity():
    sched = ddim_schedule_matching_flow(50)
    assert sched.alpha_bar[0] == 1.0
    assert sched.alpha_bar[-1] >= 1e-8
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert sched.t_grid is not None and sched.t_grid[-1] == 1.0


def test_signal_noise_conventions_differ():
    # The ladder is variance preserving; the flow path is not.
    ddim = ddim_schedule_matching_flow(4)
    flow = linear_flow_schedule(4)
    k = 2
    a, s = ddim.signal_noise(k)
    assert a * a + s * s == pytest.approx(1.0, abs=1e-12)
    a, s = flow.signal_noise(k)
    assert a + s == pytest.approx(1.0, abs=1e-12)
    assert a * a + s * s != pytest.approx(1.0, abs=1e-3)
