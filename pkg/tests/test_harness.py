import os

import numpy as np
import pytest

from infobench.cli import main
from infobench.config import (
    ExperimentConfig,
    config_from_mapping,
    describe_defaults,
    flatten_config,
    load_config,
    parse_config_text,
)
from infobench.experiments import derive_seed
from infobench.io import ForcingFormatError, load_forcing_csv, write_csv, write_forcing_csv
from infobench.synthetic import generate_synthetic_forcing


class TestSyntheticForcing:
    def test_seed_determinism(self):
        a = generate_synthetic_forcing(5, 1000)
        b = generate_synthetic_forcing(5, 1000)
        assert np.array_equal(a.precip, b.precip)
        assert np.array_equal(a.pet, b.pet)

    def test_wet_day_fraction(self):
        f = generate_synthetic_forcing(1, 10_000)
        wet = np.mean(f.precip > 0)
        assert abs(wet - 0.30) <= 0.02

    def test_pet_strictly_positive(self):
        f = generate_synthetic_forcing(2, 2000)
        assert f.pet.min() > 0

    def test_wet_amount_mean(self):
        f = generate_synthetic_forcing(3, 50_000)
        wet = f.precip[f.precip > 0]
        assert wet.mean() == pytest.approx(9.0, rel=0.05)


class TestForcingCsv:
    def test_round_trip(self, tmp_path):
        f = generate_synthetic_forcing(4, 50)
        path = tmp_path / "forcing.csv"
        write_forcing_csv(path, f)
        back = load_forcing_csv(path)
        assert back.n_days == 50
        np.testing.assert_array_equal(back.precip, f.precip)
        np.testing.assert_array_equal(back.pet, f.pet)

    def test_well_formed_three_rows(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("day,precip_mm,pet_mm\n0,1.5,3.0\n1,0.0,2.5\n2,4.0,3.5\n")
        f = load_forcing_csv(path)
        assert f.n_days == 3

    def test_negative_value_names_line(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("day,precip_mm,pet_mm\n0,-1.0,3.0\n")
        with pytest.raises(ForcingFormatError, match=":2:"):
            load_forcing_csv(path)

    def test_nan_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("day,precip_mm,pet_mm\n0,nan,3.0\n")
        with pytest.raises(ForcingFormatError):
            load_forcing_csv(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("a,b,c\n0,1,2\n")
        with pytest.raises(ForcingFormatError, match="header"):
            load_forcing_csv(path)


class TestConfig:
    def test_defaults_roundtrip_via_text(self):
        text = describe_defaults()
        cfg = config_from_mapping(parse_config_text(text))
        assert flatten_config(cfg) == flatten_config(ExperimentConfig())

    def test_override_nested_key(self):
        cfg = config_from_mapping({"b.sigma_sweep": "0.1, 0.2", "seed": "7"})
        assert cfg.seed == 7
        assert cfg.b.sigma_sweep == (0.1, 0.2)

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            config_from_mapping({"nope": "1"})

    def test_comments_and_blanks(self):
        mapping = parse_config_text("# comment\n\nseed = 3 # trailing\n")
        assert mapping == {"seed": "3"}

    def test_file_loading(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("seed = 9\nc.m_particles = 50\n")
        cfg = load_config(path)
        assert cfg.seed == 9
        assert cfg.c.m_particles == 50

    def test_full_scale_sizes(self):
        cfg = config_from_mapping({"scale": "full"}).apply_scale()
        assert cfg.a.n_params == 500
        assert cfg.a.record_days == 1000

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            config_from_mapping({"scale": "huge"})


class TestSeedTree:
    def test_deterministic_and_label_sensitive(self):
        assert derive_seed(1, "a", "x") == derive_seed(1, "a", "x")
        assert derive_seed(1, "a", "x") != derive_seed(1, "a", "y")
        assert derive_seed(1, "a", "x") != derive_seed(2, "a", "x")


class TestWriteCsv:
    def test_deterministic_bytes(self, tmp_path):
        rows = [(0.1, "x", 3), (2.5e-7, "y", 4)]
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_csv(p1, ["v", "s", "i"], rows)
        write_csv(p2, ["v", "s", "i"], rows)
        assert p1.read_bytes() == p2.read_bytes()


class TestCli:
    def test_simulate_synthetic(self, tmp_path, capsys):
        rc = main(["simulate", "--model", "nash", "--days", "50", "--seed", "1",
                   "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "streamflow.csv").exists()

    def test_simulate_param_override(self, tmp_path):
        rc = main(["simulate", "--model", "abc", "--days", "20", "--seed", "2",
                   "--param", "a=0.5", "--param", "c=0.2", "--out", str(tmp_path)])
        assert rc == 0

    def test_invalid_param_exit_code(self, tmp_path, capsys):
        rc = main(["simulate", "--model", "abc", "--days", "20",
                   "--param", "zzz=1", "--out", str(tmp_path)])
        assert rc == 2

    def test_malformed_forcing_exit_code(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("day,precip_mm,pet_mm\n0,-5,1\n")
        rc = main(["simulate", "--model", "abc", "--forcing", str(bad),
                   "--out", str(tmp_path)])
        assert rc == 2

    def test_info_command(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        x = rng.random(500)
        data = tmp_path / "data.csv"
        write_csv(data, ["x", "y"], list(zip(x, x + rng.normal(0, 0.1, 500))))
        rc = main(["info", "--data", str(data), "--x", "x", "--y", "y",
                   "--lag", "1", "--bins", "8", "--out", str(tmp_path)])
        assert rc == 0
        report = (tmp_path / "info_report.csv").read_text().splitlines()
        assert report[0] == "statistic,value_nats,scheme,bins,n_samples"
        assert len(report) == 5  # H(x), H(y), MI, TE

    def test_info_missing_column(self, tmp_path):
        data = tmp_path / "data.csv"
        write_csv(data, ["x"], [(1.0,), (2.0,)])
        rc = main(["info", "--data", str(data), "--x", "q"])
        assert rc == 2
