import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slelab import loewner
from slelab.errors import ParameterError, Refusal
from slelab.experiments import (EXPERIMENTS, ExperimentConfig, holder_bound, in_k_delta, modulus_threshold,
                                run_experiment, uniform_area_path)


def run(name, **kw):
    params = kw.pop("params", {})
    return run_experiment(ExperimentConfig(name=name, params=params, **kw))


# -- config and reports ---------------------------------------------------------

def test_config_validation():
    with pytest.raises(ParameterError):
        ExperimentConfig("qv_limit", samples=0)
    with pytest.raises(ParameterError):
        ExperimentConfig("qv_limit", kappas=(0.0,))
    with pytest.raises(ParameterError):
        ExperimentConfig("qv_limit", dt=-1.0)
    with pytest.raises(ParameterError):
        run("no_such_experiment")


def test_unknown_param_rejected():
    with pytest.raises(ParameterError):
        run("bessel_hitting", samples=2, params={"bogus": 1})


def test_report_echo_and_save(tmp_path):
    rep = run("bessel_hitting", samples=50, dt=1e-3, seed=3)
    d = rep.to_dict()
    assert d["config"]["seed"] == 3 and d["config"]["samples"] == 50
    assert "wall_clock" not in d
    files = rep.save(tmp_path, raw=True)
    assert json.loads((tmp_path / "bessel_hitting_report.json").read_text())["name"] == "bessel_hitting"
    assert (tmp_path / "bessel_hitting_summary.md").read_text().startswith("#")
    for path in files.values():
        assert path.exists()


@pytest.mark.parametrize("name,kw", [
    ("bessel_continuity", dict(samples=6)),
    ("qv_limit", dict(samples=3, dt=1e-3, params={"hausdorff_samples": 1, "hausdorff_T": 0.01})),
    ("distortion", dict(samples=1, T=0.1, params={"points": 10})),
])
def test_thread_count_does_not_change_reports(name, kw):
    a = run(name, threads=1, **kw).to_json()
    b = run(name, threads=4, **kw).to_json()
    assert a == b


def test_registry_complete():
    assert set(EXPERIMENTS) == {"bessel_continuity", "bessel_hitting", "driving_law", "radial_convergence",
                                "qv_limit", "capacity_normalization", "distortion", "bubble_disconnection",
                                "ball_filling", "modulus", "regularity_deterioration"}


# -- Bessel continuity -------------------------------------------------------------

def test_continuity_identity_list():
    rep = run("bessel_continuity", samples=5, params={"d_star": 3.0, "d_list": [3.0]})
    assert all(c["mean_sup"] == 0.0 for c in rep.cells)


def test_continuity_ordering_and_bound():
    rep = run("bessel_continuity", samples=40, dt=1e-4)
    assert rep.criteria["no_ordering_violation"]
    assert rep.criteria["sup_decreasing_in_gap"]
    assert rep.criteria["gronwall_bound_all_eligible"]


def test_continuity_refuses_low_dimension():
    with pytest.raises(Refusal):
        run("bessel_continuity", samples=2, params={"d_list": [0.8]})


# -- QV ----------------------------------------------------------------------------------

def test_qv_kappa_8_and_zero_slopes():
    rep = run("qv_limit", samples=20, dt=1e-4, kappas=(1e-300,), params={"hausdorff_samples": 0})
    cells = {c["kappa"]: c for c in rep.cells}
    assert 7.6 <= cells[8.0]["qv_slope"] <= 8.4
    assert cells[1e-300]["qv_slope"] == pytest.approx(0.0, abs=1e-290)
    assert rep.criteria["pointwise_bound_exact"]


# -- bubbles ---------------------------------------------------------------------------

def test_bubbles_pixel_scale_and_determinism():
    kw = dict(samples=6, dt=1e-3, T=4.0, kappas=(6.0,), params={"deltas": [1e-6, 0.5], "pixel": 1 / 256})
    a = run("bubble_disconnection", **kw)
    b = run("bubble_disconnection", **kw)
    assert a.to_json() == b.to_json()
    cells = {c["delta"]: c for c in a.cells}
    assert cells[1e-6]["p_hat"] >= 0.8


def test_bubbles_need_kappa_between_4_and_8():
    with pytest.raises(ParameterError):
        run("bubble_disconnection", samples=1, kappas=(8.0,))


# -- ball filling ------------------------------------------------------------------------

def test_ball_filling_cells():
    rep = run("ball_filling", samples=8, dt=1e-3, T=4.0, params={"epsilons": [1.0, 0.2, 0.01], "pixels": 128})
    cells = {c["epsilon"]: c for c in rep.cells}
    assert cells[1.0]["p_fail"] == 1.0 and cells[1.0]["censored"]
    assert rep.criteria["per_sample_nesting"]
    assert rep.criteria["monotone_in_epsilon"]


# -- modulus --------------------------------------------------------------------------------

def test_holder_bound_limits():
    assert holder_bound(math.pi / 2, 0.1) == pytest.approx(1.0)
    assert holder_bound(0.01, 1 - 1e-12) == pytest.approx(1.0, abs=1e-9)


def test_constant_path_in_every_k_delta():
    t = np.linspace(0, 1, 50)
    f = np.full(50, 0.3 + 0.1j)
    assert modulus_threshold(t, f, 0.1) == math.inf
    assert all(in_k_delta(t, f, 0.1, d) for d in (1.0, 0.1, 0.01))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 0.95))
def test_threshold_matches_brute_force(seed, r):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.random(30))
    f = np.cumsum(rng.standard_normal(30) * 0.3 + 1j * rng.standard_normal(30) * 0.3)
    thr = modulus_threshold(t, f, r)
    deltas = sorted(set(np.abs(t[:, None] - t[None, :]).ravel()) | {0.5, 1e-6}, reverse=True)
    member = [in_k_delta(t, f, r, d) for d in deltas]
    assert member == [d < thr for d in deltas]
    # nesting: once in, stays in as delta shrinks
    assert all(b >= a for a, b in zip(member, member[1:]))


def test_uniform_area_path_requires_area():
    tr = loewner.LoewnerTrace(8.0, "capacity", [0.0, 1.0], [0j, 1j], 1.0)
    with pytest.raises(Refusal):
        uniform_area_path(tr, 4)


def test_modulus_small_run():
    rep = run("modulus", samples=3, dt=1e-3, T=0.1, params={"grid_points": 128, "pixels": 128})
    assert rep.criteria["per_sample_monotone"]
    assert rep.criteria["fraction_nondecreasing_as_delta_shrinks"]
    assert rep.criteria["threshold_matches_brute_force"]


def test_modulus_refuses_non_space_filling():
    with pytest.raises(Refusal):
        run("modulus", samples=1, kappas=(6.0,))


# -- radial / driving / capacity / distortion --------------------------------------------------

def test_radial_convergence_small():
    rep = run("radial_convergence", samples=4, params={"levels": 4})
    assert rep.criteria["monotone_decrease"]
    assert len(rep.cells) == 4


def test_driving_law_small():
    rep = run("driving_law", samples=300, params={"pairs": [[6.0, 0.0]]})
    assert rep.criteria["ks_kappa6.0_rho0.0"]


def test_capacity_small():
    rep = run("capacity_normalization", samples=2, T=0.5, params={"walkers": 4000})
    assert rep.criteria["all_within"]


def test_distortion_small():
    rep = run("distortion", samples=2, T=0.5, params={"points": 20})
    assert rep.criteria["zero_violations"]


# -- regularity ----------------------------------------------------------------------------------

def test_regularity_descriptive():
    rep = run("regularity_deterioration", samples=4, dt=1e-3, T=0.5, kappas=(2.0, 6.0, 7.9))
    assert rep.criteria == {} and rep.passed
    cells = {c["kappa"]: c for c in rep.cells}
    assert cells[2.0]["exponent"] > 0
    assert 0.0 <= rep.fits["fraction_largest_kappa_rougher"] <= 1.0
    again = run("regularity_deterioration", samples=4, dt=1e-3, T=0.5, kappas=(2.0, 6.0, 7.9))
    assert rep.to_json() == again.to_json()


def test_modulus_flags_vacuous_deltas():
    rep = run("modulus", samples=2, dt=1e-3, T=0.1,
              params={"grid_points": 64, "pixels": 128, "deltas": [0.5, 1e-9]})
    cells = {c["delta"]: c for c in rep.cells}
    assert cells[1e-9]["vacuous"] and not cells[0.5]["vacuous"]
    assert cells[1e-9]["fraction_in_K"] == 1.0
    # reaching one below the grid spacing does not count
    assert rep.criteria["fraction_reaches_one"] == (cells[0.5]["fraction_in_K"] == 1.0)
