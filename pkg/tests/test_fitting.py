import io
import math

import numpy as np
import pytest

import cpmas.fitting as fitting
from cpmas.analytic import RelaxationParams
from cpmas.core import CouplingParams, RfScheme, SpinningParams
from cpmas.fitting import (BuildUpData, DataError, FitError, FitParameter,
                           FitResult, FitSpec, ModelParams,
                           coupling_from_distance, distance_from_coupling,
                           fit_buildup, load_buildup, model_curve,
                           save_buildup)
from cpmas.powder import grid_orientation_set, zcw_orientation_set

KHZ = 2.0 * math.pi * 1e3

# Powder build-up benchmark (1H-13C at 1.09 Angstrom, 5 kHz spinning,
# matched 80 kHz locks, 1/R = 290.8 us, 1/R1 = 137.9 us, T1rho = 1.867 ms).
TRUE_R = 1.0 / 290.8e-6
TRUE_R1 = 1.0 / 137.9e-6
TRUE_T1RHO = 1.867e-3


def benchmark_params(orientations):
    return ModelParams(
        coupling=CouplingParams(d=coupling_from_distance(1.09, "1H", "13C")),
        spin=SpinningParams(omega_r=5.0 * KHZ),
        rf=RfScheme(omega1_i=80.0 * KHZ, omega1_s=80.0 * KHZ),
        relax=RelaxationParams(m0=1.0, r=TRUE_R, r1=TRUE_R1, t1rho=TRUE_T1RHO),
        orientations=orientations,
    )


def benchmark_spec(orientations, free=("r", "r1", "t1rho"), guess_factor=1.5,
                   use_inverse_rates=False):
    truth = {"d": coupling_from_distance(1.09, "1H", "13C"),
             "r": TRUE_R, "r1": TRUE_R1, "t1rho": TRUE_T1RHO, "m0": 1.0}
    parameters = {}
    for name, value in truth.items():
        if name in free:
            start = value * guess_factor
            parameters[name] = FitParameter(value=start, free=True,
                                            lower=start / 1000.0,
                                            upper=start * 1000.0)
        else:
            parameters[name] = FitParameter(value=value)
    return FitSpec(parameters=parameters, orientations=orientations,
                   spin=SpinningParams(omega_r=5.0 * KHZ),
                   rf=RfScheme(omega1_i=80.0 * KHZ, omega1_s=80.0 * KHZ),
                   use_inverse_rates=use_inverse_rates)


class TestLoadBuildup:
    def test_two_column_file(self):
        data = load_buildup(io.StringIO(
            "time_us,magnetization\n0.0,0.0\n25.0,0.5\n50.0,0.8\n"))
        np.testing.assert_allclose(data.times, [0.0, 25e-6, 50e-6])
        np.testing.assert_allclose(data.magnetizations, [0.0, 0.5, 0.8])
        assert data.sigmas is None

    def test_sigma_column_and_comments(self):
        data = load_buildup(io.StringIO(
            "# produced by an instrument\ntime_us,magnetization,sigma\n"
            "0.0,0.0,0.01\n\n25.0,0.5,0.02\n"))
        np.testing.assert_allclose(data.sigmas, [0.01, 0.02])

    def test_bytes_source(self):
        data = load_buildup(b"time_us,magnetization\n0,0\n1,1\n")
        assert len(data) == 2

    def test_duplicate_time_names_line(self):
        with pytest.raises(DataError, match=":4: duplicate time"):
            load_buildup(io.StringIO(
                "time_us,magnetization\n0.0,0.0\n25.0,0.5\n25.0,0.6\n"))

    def test_decreasing_time_names_line(self):
        with pytest.raises(DataError, match=":3:.*not.*increasing"):
            load_buildup(io.StringIO(
                "time_us,magnetization\n25.0,0.5\n0.0,0.0\n"))

    def test_bad_header(self):
        with pytest.raises(DataError, match=":1: expected header"):
            load_buildup(io.StringIO("time,signal\n0,0\n"))

    def test_non_numeric_value_names_line(self):
        with pytest.raises(DataError, match=":3: non-numeric"):
            load_buildup(io.StringIO(
                "time_us,magnetization\n0.0,0.0\n1.0,oops\n"))

    def test_wrong_column_count(self):
        with pytest.raises(DataError, match=":2: expected 2 columns"):
            load_buildup(io.StringIO("time_us,magnetization\n0.0,0.0,0.1\n"))

    def test_too_few_points(self):
        with pytest.raises(DataError, match="at least 2"):
            load_buildup(io.StringIO("time_us,magnetization\n0.0,0.0\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            load_buildup(tmp_path / "absent.csv")

    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(40)
        source = tmp_path / "source.csv"
        rows = ["time_us,magnetization,sigma"]
        for t, m, s in zip(np.sort(rng.uniform(0, 3000, 17)),
                           rng.uniform(0, 1, 17), rng.uniform(0.01, 0.1, 17)):
            rows.append(f"{float(t)!r},{float(m)!r},{float(s)!r}")
        source.write_text("\n".join(rows) + "\n")
        data = load_buildup(source)
        exported = tmp_path / "roundtrip.csv"
        save_buildup(data, exported)
        assert exported.read_text() == source.read_text()
        back = load_buildup(exported)
        assert np.array_equal(back.times, data.times)
        assert np.array_equal(back.magnetizations, data.magnetizations)
        assert np.array_equal(back.sigmas, data.sigmas)


class TestModelCurve:
    def test_zero_at_time_zero(self):
        params = benchmark_params(zcw_orientation_set(2))
        assert model_curve(params, np.array([0.0]))[0] == 0.0

    def test_no_coupling_reduces_to_rate_model(self):
        params = ModelParams(
            coupling=CouplingParams(d=0.0),
            spin=SpinningParams(omega_r=5.0 * KHZ),
            rf=RfScheme(omega1_i=80.0 * KHZ, omega1_s=80.0 * KHZ),
            relax=RelaxationParams(m0=1.2, r=TRUE_R, r1=TRUE_R1,
                                   t1rho=TRUE_T1RHO),
            orientations=zcw_orientation_set(2),
        )
        t = np.linspace(0.0, 3e-3, 31)
        expected = (1.2 * (1.0 - 0.5 * np.exp(-TRUE_R * t)
                           - 0.5 * np.exp(-TRUE_R1 * t))
                    * np.exp(-t / TRUE_T1RHO))
        np.testing.assert_allclose(model_curve(params, t), expected,
                                   rtol=0, atol=1e-15)

    def test_against_direct_double_summation(self):
        # independent reimplementation: plain loops over the same
        # orientation table, scalar math only
        oset = grid_orientation_set(12, 8)
        params = benchmark_params(oset)
        d = params.coupling.d
        wr = params.spin.omega_r
        times = np.array([0.0, 40e-6, 153e-6, 0.97e-3, 2.5e-3])
        expected = []
        for t in times:
            acc = []
            for orient, weight in oset.entries:
                b, g = orient.beta, orient.gamma
                phi = d / (2 * wr) * (
                    2 * math.sqrt(2) * math.sin(2 * b)
                    * (math.sin(wr * t + g) - math.sin(g))
                    - math.sin(b) ** 2
                    * (math.sin(2 * wr * t + 2 * g) - math.sin(2 * g)))
                acc.append(weight * 0.5 * (1.0 - math.cos(phi)))
            eta = math.fsum(acc)
            expected.append((1.0 - 0.5 * math.exp(-TRUE_R * t)
                             - 0.5 * math.exp(-TRUE_R1 * t) * (1.0 - 2.0 * eta))
                            * math.exp(-t / TRUE_T1RHO))
        np.testing.assert_allclose(model_curve(params, times), expected,
                                   rtol=0, atol=1e-13)

    def test_rises_then_decays_on_benchmark(self):
        params = benchmark_params(zcw_orientation_set(8))
        t = np.arange(121) * 25e-6
        m = model_curve(params, t)
        assert m[0] == 0.0
        assert m.max() > 0.6
        # build-up peaks on the 0.1-1 ms scale, then the t1rho decay wins
        assert 0.1e-3 <= t[np.argmax(m)] <= 1.5e-3
        assert m[-1] < 0.75 * m.max()


class TestFitBuildup:
    def make_data(self, noise=0.0, seed=41, n=121, oset_level=4):
        oset = zcw_orientation_set(oset_level)
        times = np.arange(n) * 25e-6
        m = model_curve(benchmark_params(oset), times)
        if noise:
            rng = np.random.default_rng(seed)
            m = m + noise * rng.standard_normal(len(m))
        return BuildUpData(times=times, magnetizations=m), oset

    def test_noiseless_round_trip_recovers_rates(self):
        data, oset = self.make_data()
        result = fit_buildup(data, benchmark_spec(oset))
        assert result.converged
        assert result.values["r"] == pytest.approx(TRUE_R, rel=0.02)
        assert result.values["r1"] == pytest.approx(TRUE_R1, rel=0.02)
        assert result.values["t1rho"] == pytest.approx(TRUE_T1RHO, rel=0.02)

    def test_noisy_round_trip(self):
        data, oset = self.make_data(noise=0.01)
        result = fit_buildup(data, benchmark_spec(oset))
        assert result.values["r"] == pytest.approx(TRUE_R, rel=0.05)
        assert result.values["r1"] == pytest.approx(TRUE_R1, rel=0.05)
        assert result.values["t1rho"] == pytest.approx(TRUE_T1RHO, rel=0.05)

    def test_all_fixed_reports_residual_without_iterating(self):
        data, oset = self.make_data()
        result = fit_buildup(data, benchmark_spec(oset, free=()))
        assert result.iterations == 0
        assert result.converged
        assert result.rss == pytest.approx(0.0, abs=1e-20)

    def test_residual_never_exceeds_initial(self):
        data, oset = self.make_data(noise=0.05)
        spec = benchmark_spec(oset)
        initial = {n: spec.parameters[n].value for n in fitting.PARAMETER_NAMES}
        res0 = model_curve(fitting._model_from_values(initial, spec),
                           data.times) - data.magnetizations
        result = fit_buildup(data, spec)
        assert result.rss <= float(res0 @ res0)

    def test_iteration_cap_flags_non_convergence(self, monkeypatch):
        monkeypatch.setattr(fitting, "MAX_ITERATIONS", 2)
        data, oset = self.make_data(noise=0.02)
        result = fit_buildup(data, benchmark_spec(oset))
        assert not result.converged
        assert result.iterations == 2

    def test_forward_jacobian_close_to_central(self):
        data, oset = self.make_data()
        spec = benchmark_spec(oset)
        free = spec.free_names
        values = {n: spec.parameters[n].value for n in fitting.PARAMETER_NAMES}

        def residuals(x):
            trial = dict(values)
            trial.update(dict(zip(free, x)))
            return (model_curve(fitting._model_from_values(trial, spec),
                                data.times) - data.magnetizations)

        x0 = np.array([spec.parameters[n].value for n in free])
        res0 = residuals(x0)
        forward = fitting._forward_jacobian(residuals, x0, res0)
        central = np.empty_like(forward)
        eps = math.sqrt(np.finfo(float).eps)
        for j in range(len(x0)):
            h = eps * abs(x0[j])
            xp, xm = x0.copy(), x0.copy()
            xp[j] += h
            xm[j] -= h
            central[:, j] = (residuals(xp) - residuals(xm)) / (2 * h)
        rel = (np.linalg.norm(forward - central)
               / np.linalg.norm(central))
        assert rel < 1e-4

    def test_rate_and_inverse_rate_fits_agree(self):
        data, oset = self.make_data(noise=0.005, n=61)
        by_rates = fit_buildup(data, benchmark_spec(oset))
        by_times = fit_buildup(data, benchmark_spec(oset,
                                                    use_inverse_rates=True))
        curve_a = model_curve(
            fitting._model_from_values(by_rates.values,
                                       benchmark_spec(oset)), data.times)
        curve_b = model_curve(
            fitting._model_from_values(by_times.values,
                                       benchmark_spec(oset)), data.times)
        assert np.max(np.abs(curve_a - curve_b)) <= 1e-3 * np.max(np.abs(curve_a))

    def test_uniform_weights_equal_unweighted(self):
        data, oset = self.make_data(noise=0.01, n=41)
        weighted = BuildUpData(times=data.times,
                               magnetizations=data.magnetizations,
                               sigmas=np.ones(len(data)))
        spec = benchmark_spec(oset)
        a = fit_buildup(data, spec)
        b = fit_buildup(weighted, spec)
        assert a.values == b.values
        assert a.rss == b.rss
        assert a.iterations == b.iterations

    def test_under_determined_data_rejected(self):
        oset = zcw_orientation_set(1)
        data = BuildUpData(times=np.arange(5) * 25e-6,
                           magnetizations=np.zeros(5))
        with pytest.raises(DataError, match="under-determined"):
            fit_buildup(data, benchmark_spec(oset))
        data2 = BuildUpData(times=np.arange(2) * 25e-6,
                            magnetizations=np.zeros(2))
        with pytest.raises(DataError, match="under-determined"):
            fit_buildup(data2, benchmark_spec(oset))

    def test_degenerate_jacobian_suggests_fixing(self):
        # with d = 0 the two rates play identical roles when started from
        # the same guess: the Jacobian columns coincide
        oset = zcw_orientation_set(1)
        times = np.arange(31) * 50e-6
        relax = RelaxationParams(m0=1.0, r=3000.0, r1=3000.0, t1rho=2e-3)
        truth = ModelParams(coupling=CouplingParams(d=0.0),
                            spin=SpinningParams(omega_r=5.0 * KHZ),
                            rf=RfScheme(omega1_i=80.0 * KHZ,
                                        omega1_s=80.0 * KHZ),
                            relax=relax, orientations=oset)
        data = BuildUpData(times=times,
                           magnetizations=model_curve(truth, times))
        parameters = {
            "d": FitParameter(value=0.0),
            "r": FitParameter(value=3000.0, free=True, lower=1.0, upper=1e6),
            "r1": FitParameter(value=3000.0, free=True, lower=1.0, upper=1e6),
            "t1rho": FitParameter(value=2e-3),
            "m0": FitParameter(value=1.0),
        }
        spec = FitSpec(parameters=parameters, orientations=oset,
                       spin=SpinningParams(omega_r=5.0 * KHZ),
                       rf=RfScheme(omega1_i=80.0 * KHZ, omega1_s=80.0 * KHZ))
        with pytest.raises(FitError, match="consider fixing"):
            fit_buildup(data, spec)

    def test_stderr_reported_per_free_parameter(self):
        data, oset = self.make_data(noise=0.01, n=61)
        result = fit_buildup(data, benchmark_spec(oset))
        assert set(result.stderr) == {"r", "r1", "t1rho"}
        assert all(se > 0 for se in result.stderr.values())


class TestFitSpecValidation:
    def test_requires_all_parameter_names(self):
        oset = zcw_orientation_set(1)
        with pytest.raises(ValueError, match="exactly the keys"):
            FitSpec(parameters={"d": FitParameter(value=1.0)},
                    orientations=oset, spin=SpinningParams(omega_r=0.0),
                    rf=RfScheme(omega1_i=1.0, omega1_s=1.0))

    def test_free_parameter_needs_finite_ordered_bounds(self):
        with pytest.raises(ValueError, match="finite bounds"):
            FitParameter(value=1.0, free=True, lower=0.0, upper=math.inf)
        with pytest.raises(ValueError, match="ordered"):
            FitParameter(value=1.0, free=True, lower=2.0, upper=1.0)
        with pytest.raises(ValueError, match="outside bounds"):
            FitParameter(value=5.0, free=True, lower=0.0, upper=1.0)


class TestDistanceConversion:
    def test_benchmark_pair_coupling(self):
        # recomputed from mu0/4pi * gH * gC * hbar / r^3 with independent
        # constants: 23.33 kHz at 1.09 Angstrom
        d = coupling_from_distance(1.09, "1H", "13C")
        independent = (1e-7 * 2.675221e8 * 6.72828e7 * 1.0545718e-34
                       / (1.09e-10) ** 3)
        assert d / (2 * math.pi * 1e3) == pytest.approx(23.33, abs=0.05)
        assert d == pytest.approx(independent, rel=1e-5)

    def test_round_trip_exact(self):
        for r in (1.09, 2.04, 3.7):
            d = coupling_from_distance(r, "1H", "13C")
            assert distance_from_coupling(d, "1H", "13C") == pytest.approx(
                r, rel=1e-12)

    def test_inverse_cube_scaling(self):
        d1 = coupling_from_distance(1.5, "1H", "15N")
        d2 = coupling_from_distance(3.0, "1H", "15N")
        assert d2 == d1 / 8.0

    def test_negative_gamma_gives_signed_coupling(self):
        assert coupling_from_distance(1.0, "1H", "15N") < 0.0
        assert distance_from_coupling(
            coupling_from_distance(1.0, "1H", "15N"), "1H", "15N"
        ) == pytest.approx(1.0, rel=1e-12)

    def test_unsupported_isotope_lists_supported(self):
        with pytest.raises(ValueError, match="supported: .*13C.*1H"):
            distance_from_coupling(1e5, "1H", "2H")

    def test_zero_coupling_rejected(self):
        with pytest.raises(ValueError, match="nonzero"):
            distance_from_coupling(0.0, "1H", "13C")

    def test_nonpositive_distance_rejected(self):
        with pytest.raises(ValueError):
            coupling_from_distance(0.0)


class TestBuildUpDataValidation:
    def test_rejects_negative_time(self):
        with pytest.raises(DataError):
            BuildUpData(times=np.array([-1e-6, 1e-6]),
                        magnetizations=np.zeros(2))

    def test_rejects_non_increasing(self):
        with pytest.raises(DataError):
            BuildUpData(times=np.array([0.0, 1e-6, 1e-6]),
                        magnetizations=np.zeros(3))

    def test_rejects_bad_sigma(self):
        with pytest.raises(DataError):
            BuildUpData(times=np.array([0.0, 1e-6]),
                        magnetizations=np.zeros(2),
                        sigmas=np.array([0.1, 0.0]))
