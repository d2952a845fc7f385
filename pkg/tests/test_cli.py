"""Tests for the nashvi command line."""

import csv

import yaml
from click.testing import CliRunner

from nashvi.cli import cli

HEADER = [
    "k", "theta_1_s0", "theta_1_s1", "theta_2_s0", "theta_2_s1",
    "gap_agent_1", "gap_agent_2", "sup_gap", "eps_weighted", "eps_agentwise",
]


def _run(args, env=None):
    runner = CliRunner()
    return runner.invoke(cli, args, env=env)


def _rows(path):
    with open(path) as f:
        return list(csv.reader(f))


class TestRun:
    def test_exact_csv_and_sidecar(self, tmp_path):
        out = tmp_path / "run.csv"
        result = _run(["run", "--K", "5", "--out", str(out)])
        assert result.exit_code == 0, result.output
        rows = _rows(out)
        assert rows[0] == HEADER
        assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
        assert rows[2][1:5] == ["1.0", "1.0", "1.0", "1.0"]

        meta = yaml.safe_load((tmp_path / "run.csv.meta.yaml").read_text())
        assert meta["algorithm"] == "exact"
        assert meta["seed"] == 7
        assert 1 <= meta["tau"] <= 5
        assert meta["solver"]["K"] == 5

    def test_gpomdp_identical_bytes(self, tmp_path):
        args = ["run", "--algorithm", "gpomdp", "--K", "3", "--K1", "200", "--T", "5"]
        first, second, threaded = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
        assert _run(args + ["--out", str(first)]).exit_code == 0
        assert _run(args + ["--out", str(second)]).exit_code == 0
        assert _run(args + ["--out", str(threaded)], env={"NASHVI_THREADS": "3"}).exit_code == 0
        assert first.read_bytes() == second.read_bytes()
        assert first.read_bytes() == threaded.read_bytes()

    def test_seed_changes_output(self, tmp_path):
        args = ["run", "--algorithm", "gpomdp", "--K", "2", "--K1", "10", "--T", "5", "--alpha", "0.3"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert _run(args + ["--seed", "1", "--out", str(a)]).exit_code == 0
        assert _run(args + ["--seed", "2", "--out", str(b)]).exit_code == 0
        assert a.read_bytes() != b.read_bytes()

    def test_missing_game(self, tmp_path):
        result = _run(["run", "--game", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "r.csv")])
        assert result.exit_code == 1
        assert "ERROR" in result.output

    def test_bad_beta(self, tmp_path):
        result = _run(["run", "--beta", "0.5", "--out", str(tmp_path / "r.csv")])
        assert result.exit_code == 1
        assert "beta out of range" in result.output

    def test_unwritable_output(self, tmp_path):
        result = _run(["run", "--K", "2", "--out", str(tmp_path / "missing" / "r.csv")])
        assert result.exit_code == 3

    def test_dump_values(self, tmp_path):
        values = tmp_path / "values.csv"
        result = _run(["run", "--K", "2", "--out", str(tmp_path / "r.csv"), "--dump-values", str(values)])
        assert result.exit_code == 0, result.output
        assert len(_rows(values)) == 23

    def test_dump_trajectories(self, tmp_path):
        traj = tmp_path / "traj.csv"
        result = _run([
            "run", "--algorithm", "gpomdp", "--K", "2", "--K1", "3", "--T", "2",
            "--out", str(tmp_path / "r.csv"), "--dump-trajectories", str(traj),
        ])
        assert result.exit_code == 0, result.output
        # (3 + 5) estimator calls of 3 trajectories, each 3 steps long
        assert len(_rows(traj)) == 1 + 24 * 3

    def test_dump_trajectories_exact_mode(self, tmp_path):
        traj = tmp_path / "traj.csv"
        result = _run(["run", "--K", "2", "--out", str(tmp_path / "r.csv"), "--dump-trajectories", str(traj)])
        assert result.exit_code == 0
        assert "only applies" in result.output
        assert not traj.exists()


class TestValidate:
    def test_bundled(self):
        result = _run(["validate"])
        assert result.exit_code == 0
        assert result.output.startswith("VALID")

    def test_invalid_file(self, write_game, two_player_data):
        two_player_data["transitions"][0]["probs"] = [0.6, 0.3]
        result = _run(["validate", "--game", str(write_game(two_player_data))])
        assert result.exit_code == 1
        assert "INVALID" in result.output
        assert "row sum" in result.output

    def test_help_names_bundled_game(self):
        result = _run(["validate", "--help"])
        assert result.exit_code == 0
        assert "nashvi/games/two_player.yaml" in result.output


class TestEquilibria:
    def test_bundled(self):
        result = _run(["equilibria"])
        assert result.exit_code == 0
        assert "theta=[1.0, 1.0, 1.0, 1.0]" in result.output
        assert result.output.count("theta=") == 1


class TestVerify:
    def test_selected_suites(self):
        result = _run(["verify", "--suite", "bellman", "--suite", "tau"])
        assert result.exit_code == 0, result.output
        assert "PASS  bellman" in result.output
        assert "PASS  tau" in result.output
        assert "lipschitz" not in result.output

    def test_small_l_fails(self):
        result = _run(["verify", "--suite", "lipschitz", "--L", "0.1"])
        assert result.exit_code == 1
        assert "FAIL  lipschitz" in result.output
