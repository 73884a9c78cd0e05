"""CLI surface: catalog listing, spec resolution, artifacts, compare, exit codes."""

import json
import math

import numpy as np
import pytest

from stickysim import cli
from stickysim import mean_field as mf
from stickysim import metrics as mx


# overrides that shrink any full-scale experiment to a fast toy system
TINY = {
    "n": "20",
    "lam": "3.0",
    "beta": "1.0",
    "nu": "1.0",
    "mu": "10.0",
}


class TestListExperiments:
    def test_catalog_is_stable_and_nonempty(self):
        first = cli.list_experiments()
        second = cli.list_experiments()
        assert first == second
        names = [name for name, _, _ in first]
        assert len(names) == len(set(names))
        assert len(names) == 14
        assert names[0] == "fig-perfect-jsq"

    def test_every_entry_has_scheme_and_description(self):
        for name, scheme, desc in cli.list_experiments():
            assert name and scheme and desc

    def test_filter_by_name_substring(self):
        names = {name for name, _, _ in cli.list_experiments("bin")}
        assert names == {"bin-occupancy", "bin-violation", "bin-tradeoff"}

    def test_filter_by_scheme_tag(self):
        # tag is not a substring of either name, so this exercises the
        # exact-scheme branch
        names = {name for name, _, _ in cli.list_experiments("power-of-d")}
        assert names == {"random-uniform", "power-of-2"}

    def test_unknown_filter_yields_empty(self):
        assert cli.list_experiments("no-such-thing") == []


class TestCoerce:
    def test_int_float_bool_str(self):
        assert cli._coerce(1, "24") == 24
        assert cli._coerce(1.5, "2.5") == 2.5
        assert cli._coerce(1.5, "inf") == math.inf
        assert cli._coerce(1.5, "Infinity") == math.inf
        assert cli._coerce("x,y", "a,b") == "a,b"

    @pytest.mark.parametrize("raw,expect", [
        ("1", True), ("true", True), ("YES", True), ("on", True),
        ("0", False), ("False", False), ("no", False), ("off", False),
    ])
    def test_bool_spellings(self, raw, expect):
        assert cli._coerce(False, raw) is expect

    def test_bad_values_raise(self):
        with pytest.raises(ValueError):
            cli._coerce(False, "maybe")
        with pytest.raises(ValueError):
            cli._coerce(1, "abc")
        with pytest.raises(ValueError):
            cli._coerce(1.5, "abc")


class TestBuildSpec:
    def test_defaults_come_from_catalog(self, tmp_path):
        spec = cli.build_spec("bin-violation", {}, 0, tmp_path)
        assert spec.name == "bin-violation"
        assert spec.params["bins"] == "2n,5n,10n,20n"
        assert spec.params["low"] == 180
        assert spec.params["high"] == 200
        assert spec.params["seeds"] == 5
        assert spec.params["drain"] is False
        assert spec.params["n"] == 500
        assert spec.outputs == ("violations", "violations_mean")
        assert spec.seed == 0
        assert spec.out_dir == tmp_path

    def test_overrides_are_coerced(self, tmp_path):
        spec = cli.build_spec(
            "bin-violation",
            {"n": "24", "lam": "2.5", "drain": "yes", "bins": "2n"},
            seed=3,
            out_dir=tmp_path,
        )
        assert spec.params["n"] == 24
        assert spec.params["lam"] == 2.5
        assert spec.params["drain"] is True
        assert spec.params["bins"] == "2n"
        assert spec.seed == 3

    def test_unknown_experiment(self, tmp_path):
        with pytest.raises(ValueError, match="unknown experiment"):
            cli.build_spec("nope", {}, 0, tmp_path)
        # the error should tell the user what is available
        with pytest.raises(ValueError, match="bin-violation"):
            cli.build_spec("nope", {}, 0, tmp_path)

    def test_unknown_parameter_lists_valid_ones(self, tmp_path):
        with pytest.raises(ValueError, match="valid:"):
            cli.build_spec("shedding", {"lo": "1"}, 0, tmp_path)

    def test_config_file_layering(self, tmp_path):
        ini = tmp_path / "exp.ini"
        ini.write_text(
            "[bin-violation]\nseeds = 2\nn = 30\n\n[shedding]\nhigh = 9\n"
        )
        spec = cli.build_spec(
            "bin-violation", {"seeds": "3"}, 0, tmp_path, config_file=ini
        )
        # file overrides defaults, command line overrides the file
        assert spec.params["n"] == 30
        assert spec.params["seeds"] == 3
        other = cli.build_spec("shedding", {}, 0, tmp_path, config_file=ini)
        assert other.params["high"] == 9

    def test_config_section_for_other_experiment_is_ignored(self, tmp_path):
        ini = tmp_path / "exp.ini"
        ini.write_text("[shedding]\nhigh = 9\n")
        spec = cli.build_spec("bin-violation", {}, 0, tmp_path, config_file=ini)
        assert spec.params["high"] == 200

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ValueError, match="not found"):
            cli.build_spec(
                "shedding", {}, 0, tmp_path, config_file=tmp_path / "nope.ini"
            )

    def test_config_key_validated_like_overrides(self, tmp_path):
        ini = tmp_path / "exp.ini"
        ini.write_text("[shedding]\nbogus = 1\n")
        with pytest.raises(ValueError, match="unknown parameter"):
            cli.build_spec("shedding", {}, 0, tmp_path, config_file=ini)

    def test_spec_is_frozen(self, tmp_path):
        spec = cli.build_spec("shedding", {}, 0, tmp_path)
        with pytest.raises(Exception):
            spec.seed = 1


class TestParseOverrides:
    def test_param_pairs_and_loose_flags(self):
        out = cli._parse_overrides(
            ["a=1", "b = 2 "], ["--c", "3", "--d=4", "--e", "x,y"]
        )
        assert out == {"a": "1", "b": "2", "c": "3", "d": "4", "e": "x,y"}

    def test_later_tokens_win(self):
        out = cli._parse_overrides(["a=1"], ["--a", "2"])
        assert out == {"a": "2"}

    def test_param_without_equals(self):
        with pytest.raises(ValueError, match="key=value"):
            cli._parse_overrides(["notapair"], [])

    def test_positional_leftover_rejected(self):
        with pytest.raises(ValueError, match="unexpected argument"):
            cli._parse_overrides([], ["stray"])

    def test_trailing_flag_without_value(self):
        with pytest.raises(ValueError, match="missing a value"):
            cli._parse_overrides([], ["--chi"])


class TestRunExperiment:
    def test_analytic_tradeoff_artifacts(self, tmp_path):
        spec = cli.build_spec(
            "tradeoff-shedding",
            {"h_min": "195", "h_max": "197"},
            seed=5,
            out_dir=tmp_path,
        )
        written = cli.run_experiment(spec)
        csv_path = tmp_path / "tradeoff-shedding_tradeoff.csv"
        json_path = tmp_path / "tradeoff-shedding_summary.json"
        assert set(written) == {csv_path, json_path}

        lines = csv_path.read_text().splitlines()
        assert lines[0] == "h,epsilon,delay_tail,improvement"
        assert len(lines) == 4
        rows = [line.split(",") for line in lines[1:]]
        assert [int(r[0]) for r in rows] == [195, 196, 197]
        eps = [float(r[1]) for r in rows]
        assert eps == sorted(eps, reverse=True)
        assert all(e > 0 for e in eps)

        # float cells are written with repr, so they round-trip exactly
        for r in rows:
            for cell in r[1:]:
                assert repr(float(cell)) == cell

    def test_summary_json_shape(self, tmp_path):
        spec = cli.build_spec(
            "tradeoff-shedding",
            {"h_min": "195", "h_max": "195"},
            seed=11,
            out_dir=tmp_path,
        )
        cli.run_experiment(spec)
        raw = (tmp_path / "tradeoff-shedding_summary.json").read_text()
        assert raw.endswith("\n")
        payload = json.loads(raw)
        assert payload["experiment"] == "tradeoff-shedding"
        assert payload["version"].startswith("stickysim ")
        assert payload["seed"] == 11
        assert payload["wall_clock_s"] >= 0.0
        assert payload["params"]["h_min"] == 195
        assert "tolerances" in payload

    def test_delay_tails_values(self, tmp_path, full_params):
        spec = cli.build_spec(
            "delay-tails", {"chi_values": "0,100"}, seed=0, out_dir=tmp_path
        )
        cli.run_experiment(spec)
        lines = (tmp_path / "delay-tails_delay_tails.csv").read_text().splitlines()
        assert lines[0] == "chi,metric,value"
        cells = [line.split(",") for line in lines[1:]]
        assert len(cells) == 8
        by_key = {(float(c[0]), c[1]): float(c[2]) for c in cells}
        # chi = 0 means any wait counts, so every tail is 1 up to rounding
        for metric in ("packet-random", "flow-jsq", "untruncated", "shedding"):
            assert by_key[(0.0, metric)] == pytest.approx(1.0, abs=1e-12)
        assert by_key[(100.0, "flow-jsq")] == pytest.approx(
            mx.delay_tail_flow_jsq(100.0, full_params), rel=1e-12
        )
        assert by_key[(100.0, "flow-jsq")] == pytest.approx(math.exp(-25), rel=1e-12)

    def test_no_carriage_returns_in_csv(self, tmp_path):
        spec = cli.build_spec(
            "tradeoff-shedding",
            {"h_min": "195", "h_max": "195"},
            seed=0,
            out_dir=tmp_path,
        )
        cli.run_experiment(spec)
        data = (tmp_path / "tradeoff-shedding_tradeoff.csv").read_bytes()
        assert b"\r" not in data

    def test_unknown_spec_name_rejected(self, tmp_path):
        spec = cli.ExperimentSpec(
            name="nope", params={}, outputs=(), seed=0, out_dir=tmp_path
        )
        with pytest.raises(ValueError, match="unknown experiment"):
            cli.run_experiment(spec)

    def test_undeclared_runner_output_rejected(self, tmp_path, monkeypatch):
        def bad_runner(spec):
            return {"bogus": (["a"], [[1]])}, {}

        exp = cli._Experiment(
            name="fake-exp",
            scheme="test",
            description="runner that writes an undeclared table",
            defaults={},
            outputs=("tbl",),
            runner=bad_runner,
        )
        monkeypatch.setitem(cli._BY_NAME, "fake-exp", exp)
        spec = cli.ExperimentSpec(
            name="fake-exp", params={}, outputs=("tbl",), seed=0, out_dir=tmp_path
        )
        with pytest.raises(RuntimeError, match="undeclared"):
            cli.run_experiment(spec)

    def test_out_dir_is_created(self, tmp_path):
        nested = tmp_path / "a" / "b"
        spec = cli.build_spec(
            "tradeoff-shedding",
            {"h_min": "195", "h_max": "195"},
            seed=0,
            out_dir=nested,
        )
        cli.run_experiment(spec)
        assert (nested / "tradeoff-shedding_summary.json").exists()


class TestDeterminism:
    def _run(self, tmp_path, tag, seed):
        out = tmp_path / tag
        spec = cli.build_spec(
            "random-uniform",
            {**TINY, "warmup_betas": "5", "horizon_betas": "20"},
            seed=seed,
            out_dir=out,
        )
        cli.run_experiment(spec)
        return out

    def test_same_seed_same_bytes(self, tmp_path):
        a = self._run(tmp_path, "a", seed=7)
        b = self._run(tmp_path, "b", seed=7)
        for artifact in ("histogram", "series"):
            fa = (a / f"random-uniform_{artifact}.csv").read_bytes()
            fb = (b / f"random-uniform_{artifact}.csv").read_bytes()
            assert fa == fb

    def test_different_seed_different_bytes(self, tmp_path):
        a = self._run(tmp_path, "a", seed=7)
        c = self._run(tmp_path, "c", seed=8)
        fa = (a / "random-uniform_series.csv").read_bytes()
        fc = (c / "random-uniform_series.csv").read_bytes()
        assert fa != fc


class TestCompare:
    def _write(self, path, header, rows):
        lines = [",".join(header)]
        lines += [",".join(str(c) for c in row) for row in rows]
        path.write_text("\n".join(lines) + "\n")

    def test_tv_and_mean_gap(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        self._write(a, ["level", "p_empirical"], [[0, 0.5], [1, 0.5]])
        self._write(b, ["level", "p_empirical"], [[1, 0.5], [2, 0.5]])
        report = cli.compare(a, b, tol=0.5)
        assert report.tv_distance == pytest.approx(0.5, abs=1e-15)
        assert report.mean_gap == pytest.approx(1.0, abs=1e-15)
        assert report.passed
        assert not cli.compare(a, b, tol=0.4).passed

    def test_column_preference(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        # p_empirical trumps p_theory even when it is not the second column
        self._write(
            b, ["level", "p_theory", "p_empirical"], [[0, 0.9, 0.5], [1, 0.1, 0.5]]
        )
        self._write(a, ["level", "p_theory"], [[0, 0.5], [1, 0.5]])
        report = cli.compare(a, b, tol=0.01)
        assert report.column_a == "p_theory"
        assert report.column_b == "p_empirical"
        assert report.tv_distance == pytest.approx(0.0, abs=1e-15)

    def test_generic_columns_fall_back_to_second(self, tmp_path):
        a = tmp_path / "a.csv"
        self._write(a, ["idx", "mass", "junk"], [[0, 1.0, 99]])
        report = cli.compare(a, a, tol=0.0)
        assert report.column_a == "mass"
        assert report.tv_distance == 0.0

    def test_identical_experiment_outputs_compare_clean(self, tmp_path):
        spec = cli.build_spec(
            "random-uniform",
            {**TINY, "warmup_betas": "5", "horizon_betas": "15"},
            seed=2,
            out_dir=tmp_path,
        )
        cli.run_experiment(spec)
        hist = tmp_path / "random-uniform_histogram.csv"
        assert cli.compare(hist, hist, tol=0.0).tv_distance == 0.0

    def test_malformed_index(self, tmp_path):
        a = tmp_path / "a.csv"
        self._write(a, ["level", "p"], [["x", 0.5]])
        with pytest.raises(ValueError, match="indexed numeric"):
            cli.compare(a, a, tol=0.1)

    def test_empty_file(self, tmp_path):
        a = tmp_path / "a.csv"
        a.write_text("")
        with pytest.raises(ValueError, match="empty"):
            cli.compare(a, a, tol=0.1)

    def test_single_column_rejected(self, tmp_path):
        a = tmp_path / "a.csv"
        a.write_text("level\n0\n")
        with pytest.raises(ValueError, match="two columns"):
            cli.compare(a, a, tol=0.1)


class TestMainExitCodes:
    def test_list(self, capsys):
        assert cli.main(["list"]) == cli.EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 14
        assert all("[" in line and "]" in line for line in out)

    def test_list_filtered(self, capsys):
        assert cli.main(["list", "bin"]) == cli.EXIT_OK
        assert len(capsys.readouterr().out.splitlines()) == 3

    def test_run_prints_written_paths(self, tmp_path, capsys):
        rc = cli.main([
            "run", "tradeoff-shedding",
            "--seed", "1",
            "--out", str(tmp_path),
            "--param", "h_min=195",
            "--param", "h_max=196",
        ])
        assert rc == cli.EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 2
        assert all(tmp_path.name in line for line in out)

    def test_run_accepts_loose_flag_overrides(self, tmp_path, capsys):
        rc = cli.main([
            "run", "delay-tails",
            "--out", str(tmp_path),
            "--chi_values", "0,50",
            "--high=158",
        ])
        assert rc == cli.EXIT_OK
        payload = json.loads((tmp_path / "delay-tails_summary.json").read_text())
        assert payload["params"]["high"] == 158
        assert payload["params"]["chi_values"] == "0,50"

    def test_unknown_experiment_is_validation_error(self, tmp_path, capsys):
        rc = cli.main(["run", "nope", "--out", str(tmp_path)])
        assert rc == cli.EXIT_VALIDATION
        assert "error:" in capsys.readouterr().err

    def test_unknown_parameter_is_validation_error(self, tmp_path, capsys):
        rc = cli.main([
            "run", "shedding", "--out", str(tmp_path), "--param", "bogus=1"
        ])
        assert rc == cli.EXIT_VALIDATION

    def test_compare_pass_fail_codes(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("level,p\n0,0.5\n1,0.5\n")
        b.write_text("level,p\n0,0.4\n1,0.6\n")
        assert cli.main(["compare", str(a), str(a), "--tol", "1e-12"]) == cli.EXIT_OK
        assert "PASS" in capsys.readouterr().out
        rc = cli.main(["compare", str(a), str(b), "--tol", "0.05"])
        assert rc == cli.EXIT_THRESHOLD
        assert "FAIL" in capsys.readouterr().out

    def test_compare_malformed_file(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        a.write_text("level,p\nx,0.5\n")
        rc = cli.main(["compare", str(a), str(a), "--tol", "0.1"])
        assert rc == cli.EXIT_VALIDATION

    def test_compare_rejects_extra_args(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        a.write_text("level,p\n0,1.0\n")
        rc = cli.main(["compare", str(a), str(a), "--tol", "0.1", "--junk", "1"])
        assert rc == cli.EXIT_VALIDATION

    def test_help_exits_zero(self, capsys):
        assert cli.main(["--help"]) == cli.EXIT_OK

    def test_usage_errors_exit_one(self, capsys):
        # argparse would exit 2; the contract reserves 2 for numerics
        assert cli.main([]) == cli.EXIT_VALIDATION
        assert cli.main(["frobnicate"]) == cli.EXIT_VALIDATION

    def test_numerical_failure_exits_two(self, tmp_path, capsys, monkeypatch):
        def boom(spec):
            raise mf.NumericalError("synthetic failure")

        monkeypatch.setattr(cli, "run_experiment", boom)
        rc = cli.main(["run", "tradeoff-shedding", "--out", str(tmp_path)])
        assert rc == cli.EXIT_NUMERICAL
        assert "numerical failure" in capsys.readouterr().err

    def test_end_to_end_rerun_identical(self, tmp_path, capsys):
        args = [
            "run", "random-uniform",
            "--seed", "4",
            "--param", "n=20",
            "--param", "lam=3.0",
            "--param", "beta=1.0",
            "--param", "nu=1.0",
            "--param", "mu=10.0",
            "--param", "warmup_betas=5",
            "--param", "horizon_betas=15",
        ]
        assert cli.main(args + ["--out", str(tmp_path / "x")]) == cli.EXIT_OK
        assert cli.main(args + ["--out", str(tmp_path / "y")]) == cli.EXIT_OK
        capsys.readouterr()
        for artifact in ("histogram", "series"):
            fx = (tmp_path / "x" / f"random-uniform_{artifact}.csv").read_bytes()
            fy = (tmp_path / "y" / f"random-uniform_{artifact}.csv").read_bytes()
            assert fx == fy
        rc = cli.main([
            "compare",
            str(tmp_path / "x" / "random-uniform_histogram.csv"),
            str(tmp_path / "y" / "random-uniform_histogram.csv"),
            "--tol", "0",
        ])
        assert rc == cli.EXIT_OK
