import json

import numpy as np
import pytest

from odbayes.cli import main
from odbayes.core import MarginData
from odbayes.io import (
    DrawsFormatError,
    read_draws,
    read_grid,
    read_margins,
    read_tld,
    write_draws,
    write_grid,
    write_margins,
)

from conftest import BIN_EDGES, ZONE4_COSTS, ZONE4_D, ZONE4_O, TLD_COUNTS


@pytest.fixture
def data(tmp_path):
    write_margins(tmp_path / "m.csv", MarginData(ZONE4_O, ZONE4_D))
    write_margins(tmp_path / "two_zone.csv", MarginData([40, 40], [60, 20]))
    write_grid(tmp_path / "c.csv", ZONE4_COSTS)
    write_grid(tmp_path / "p1.csv", [[1, 2], [3, 4]])
    write_grid(tmp_path / "uniform.csv", np.ones((4, 4)))
    with open(tmp_path / "tld.csv", "w") as fh:
        fh.write("lower,upper,count\n")
        for lo, hi, n in zip(BIN_EDGES[:-1], BIN_EDGES[1:], TLD_COUNTS):
            fh.write(f"{lo},{hi},{n}\n")
    return tmp_path


def run(args, path):
    return main([str(a) for a in args])


def load(path):
    with open(path) as fh:
        return json.load(fh)


class TestIO:
    def test_margins_round_trip(self, data):
        assert read_margins(data / "m.csv") == MarginData(ZONE4_O, ZONE4_D)

    def test_bad_margin_header(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            read_margins(tmp_path / "x.csv")

    def test_grid_exact(self, tmp_path):
        a = np.random.default_rng(0).random((3, 3)) * 1e3
        write_grid(tmp_path / "g.csv", a)
        assert np.array_equal(read_grid(tmp_path / "g.csv"), a)

    def test_tld(self, data):
        bins, counts = read_tld(data / "tld.csv")
        assert bins.edges.tolist() == BIN_EDGES and counts.tolist() == TLD_COUNTS

    def test_tld_gap(self, tmp_path):
        (tmp_path / "t.csv").write_text("lower,upper,count\n0,4,1\n5,8,2\n")
        with pytest.raises(ValueError, match="contiguous"):
            read_tld(tmp_path / "t.csv")

    @pytest.mark.parametrize("aux_kind", [None, "p", "beta"])
    def test_draws_round_trip(self, tmp_path, aux_kind):
        rng = np.random.default_rng(1)
        draws = rng.integers(0, 1000, (7, 3, 3))
        aux = {None: None, "p": rng.random((7, 3, 3)), "beta": rng.random(7)}[aux_kind]
        write_draws(tmp_path / "d.bin", draws, aux, aux_kind)
        d, a, k = read_draws(tmp_path / "d.bin")
        assert np.array_equal(d, draws) and k == aux_kind
        if aux is not None:
            assert np.array_equal(a, aux)

    def test_draws_layout(self, tmp_path):
        write_draws(tmp_path / "d.bin", np.arange(8).reshape(2, 2, 2), np.array([0.5, 1.5]), "beta")
        raw = (tmp_path / "d.bin").read_bytes()
        assert raw[:5] == b"ODMC1"
        assert raw[5:9] == (2).to_bytes(4, "little") and raw[9:13] == (2).to_bytes(4, "little")
        assert raw[13:17] == (0).to_bytes(4, "little") and raw[41:45] == (7).to_bytes(4, "little")
        assert raw[45] == 2 and len(raw) == 46 + 16

    def test_draws_corrupt(self, tmp_path):
        p = tmp_path / "d.bin"
        write_draws(p, np.ones((3, 2, 2), dtype=int))
        raw = p.read_bytes()
        p.write_bytes(raw[:30])
        with pytest.raises(DrawsFormatError, match="byte offset 30"):
            read_draws(p)
        p.write_bytes(b"XXXXX" + raw[5:])
        with pytest.raises(DrawsFormatError, match="magic"):
            read_draws(p)
        p.write_bytes(raw + b"\0")
        with pytest.raises(DrawsFormatError, match="trailing"):
            read_draws(p)


class TestFurnessCmd:
    def test_four_zone(self, data, capsys):
        rc = run(["furness", "--margins", data / "m.csv", "--costs", data / "c.csv",
                  "--beta", "0.1", "--out", data / "f"], data)
        assert rc == 0
        r = load(data / "f" / "run.json")
        assert r["regional_cost"] == pytest.approx(8.70, abs=0.01)
        assert r["residual"] < 1e-10 and r["iterations"] > 0
        assert read_grid(data / "f" / "furness.csv").shape == (4, 4)
        assert "regional cost" in capsys.readouterr().out

    def test_uniform(self, data):
        assert run(["furness", "--margins", data / "m.csv", "--proportions",
                    data / "uniform.csv", "--out", data / "u"], data) == 0
        cells = read_grid(data / "u" / "furness.csv")
        expect = np.outer(ZONE4_O, ZONE4_D) / sum(ZONE4_O)
        np.testing.assert_allclose(cells, expect, rtol=1e-12)

    def test_inconsistent_margins(self, data, capsys):
        (data / "bad.csv").write_text("zone,origin,destination\n1,40,60\n2,40,21\n")
        rc = run(["furness", "--margins", data / "bad.csv", "--proportions", data / "p1.csv"], data)
        assert rc == 2
        assert "margins not self-consistent" in capsys.readouterr().err

    def test_missing_input(self, data, capsys):
        assert run(["furness", "--margins", data / "m.csv"], data) == 2
        assert run(["furness", "--margins", data / "nope.csv", "--proportions", data / "p1.csv"], data) == 2


class TestCalibrateCmd:
    def test_four_zone(self, data, capsys):
        assert run(["calibrate", "--costs", data / "c.csv", "--target-cost", "8.51",
                    "--out", data / "cal"], data) == 0
        r = load(data / "cal" / "run.json")
        assert r["beta"] == pytest.approx(0.10, abs=1e-3)
        assert r["mean_cost"] == pytest.approx(8.51, abs=1e-9)
        assert "beta=" in capsys.readouterr().out

    def test_uniform_target(self, data):
        assert run(["calibrate", "--costs", data / "c.csv", "--target-cost",
                    repr(float(ZONE4_COSTS.mean())), "--out", data / "cal"], data) == 0
        assert load(data / "cal" / "run.json")["beta"] == pytest.approx(0.0, abs=1e-9)

    def test_unattainable(self, data):
        assert run(["calibrate", "--costs", data / "c.csv", "--target-cost", "100",
                    "--out", data / "cal"], data) == 2


class TestSampleCmd:
    def test_two_zone(self, data):
        rc = run(["sample", "--margins", data / "two_zone.csv", "--proportions", data / "p1.csv",
                  "--rng-seed", "1", "--out", data / "s"], data)
        assert rc == 0
        s = load(data / "s" / "summary.json")
        assert s["mean"][0][0] == pytest.approx(28.43, abs=0.3)
        assert s["map_table"]["table"][0][0] == 28
        mean = read_grid(data / "s" / "mean.csv")
        assert np.array_equal(mean, np.array(s["mean"]))
        r = load(data / "s" / "run.json")
        assert r["backend"] in ("numba", "python") and "cells" in r["acceptance"]

    def _beta_args(self, data, out, *extra):
        return ["sample", "--model", "beta-tld", "--margins", data / "m.csv", "--costs",
                data / "c.csv", "--tld", data / "tld.csv", "--samples", "2000", "--thin", "2",
                "--rng-seed", "7", "--out", out, "--emit-draws", *extra]

    def test_reproducible_and_summarize(self, data, capsys):
        assert run(self._beta_args(data, data / "a", "--cost-thresholds", "8.51"), data) == 0
        assert run(self._beta_args(data, data / "b", "--cost-thresholds", "8.51"), data) == 0
        for name in ("draws.bin", "summary.json", "mean.csv", "intervals.csv", "tld.csv", "cost_hist.csv"):
            assert (data / "a" / name).read_bytes() == (data / "b" / name).read_bytes()
        s = load(data / "a" / "summary.json")
        assert {"beta", "cost", "tld", "map_table"} <= set(s)
        assert "cost>=8.51" in s["events"]

        args = ["summarize", "--model", "beta-tld", "--margins", data / "m.csv", "--costs",
                data / "c.csv", "--tld", data / "tld.csv", "--draws", data / "a" / "draws.bin",
                "--cost-thresholds", "8.51"]
        assert run(args + ["--out", data / "r"], data) == 0
        assert (data / "r" / "summary.json").read_bytes() == (data / "a" / "summary.json").read_bytes()

        assert run(args + ["--out", data / "half", "--gamma", "0.5"], data) == 0
        h = load(data / "half" / "summary.json")
        assert h["mean"] == s["mean"]
        lo, hi = np.array(h["intervals"]["lower"]), np.array(h["intervals"]["upper"])
        assert np.all(lo >= s["intervals"]["lower"]) and np.all(hi <= s["intervals"]["upper"])
        assert np.any(hi - lo < np.array(s["intervals"]["upper"]) - s["intervals"]["lower"])

        raw = (data / "a" / "draws.bin").read_bytes()
        (data / "trunc.bin").write_bytes(raw[:1000])
        args[args.index(data / "a" / "draws.bin")] = data / "trunc.bin"
        capsys.readouterr()
        assert run(args + ["--out", data / "t"], data) == 2
        assert "byte offset 1000" in capsys.readouterr().err

    def test_config_file(self, data):
        (data / "run.cfg").write_text(
            f"# two-zone run\nmodel = fixed-p\nmargins = {data / 'two_zone.csv'}\n"
            f"proportions = {data / 'p1.csv'}\nsamples = 50\ngamma=0.9\n"
        )
        assert run(["sample", "--config", data / "run.cfg", "--samples", "30", "--out", data / "c"], data) == 0
        s = load(data / "c" / "summary.json")
        assert s["samples"] == 30 and s["gamma"] == 0.9

    def test_config_errors(self, data):
        (data / "bad.cfg").write_text("colour = blue\n")
        assert run(["sample", "--config", data / "bad.cfg"], data) == 2
        assert run(["sample", "--model", "beta-tld", "--margins", data / "m.csv",
                    "--costs", data / "c.csv"], data) == 2
        assert run(["sample", "--margins", data / "m.csv", "--gamma", "1.5",
                    "--proportions", data / "uniform.csv"], data) == 2

    def test_infeasible(self, data):
        write_margins(data / "m3.csv", MarginData([5, 1, 1], [3, 3, 1]))
        write_grid(data / "p3.csv", [[0, 0, 1], [1, 1, 1], [1, 1, 1]])
        assert run(["sample", "--margins", data / "m3.csv", "--proportions", data / "p3.csv",
                    "--out", data / "x"], data) == 3

    def test_dirichlet_seed_chains(self, data):
        write_grid(data / "seed.csv", [[10, 20], [30, 40]])
        rc = run(["sample", "--model", "dirichlet-seed", "--margins", data / "two_zone.csv",
                  "--seed-matrix", data / "seed.csv", "--pi", "0.5", "--samples", "300",
                  "--chains", "2", "--rng-seed", "4", "--out", data / "k"], data)
        assert rc == 0
        c1 = load(data / "k" / "chain_1" / "run.json")
        c2 = load(data / "k" / "chain_2" / "run.json")
        assert (c1["rng_seed"], c2["rng_seed"]) == (4, 5)
        pooled = load(data / "k" / "summary.json")
        assert pooled["samples"] == 600 and "proportions" in pooled
