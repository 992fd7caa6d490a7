#!/usr/bin/env python3
"""
Command-line tests: exit codes, dataset generation, evaluation and the
verification headline.
"""

import pytest

from file_manager import write_params
from main import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_VERIFICATION, main
from param_field import VelocityMLP
from verification import CheckResult, SuiteReport
from verification.prop1_suite import Prop1Suite


@pytest.fixture(autouse=True)
def quiet_environment(monkeypatch):
    monkeypatch.setattr("config.load_dotenv", lambda: None)
    for name in ("SOBOLEV_SEED", "SOBOLEV_LOG_LEVEL", "SOBOLEV_OUTPUT_DIR", "SOBOLEV_LOG_COLOR"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def archive(tmp_path):
    config = tmp_path / "data.cfg"
    config.write_text("grid=8x8\ncount=5\ndownscale_factor=2\nseed=2\n", encoding="utf-8")
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(config), "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture
def policy_file(tmp_path):
    model = VelocityMLP((8, 8), 4)
    path = tmp_path / "policy.prm"
    write_params(path, model, model.init_params(seed=1, zero_final=False))
    return path


def experiment_file(tmp_path, archive, text=""):
    path = tmp_path / "run.cfg"
    path.write_text(
        f"grid=8x8\nhidden=4\nsteps=2\nbatch=2\neval_count=2\neuler_steps=4\nlog_every=0\n"
        f"dataset={archive}\noutput={tmp_path / 'output'}\n{text}",
        encoding="utf-8",
    )
    return path


class TestUsage:
    def test_unknown_flag(self):
        assert main(["sft", "--bogus"]) == EXIT_USAGE

    def test_missing_command(self):
        assert main([]) == EXIT_USAGE

    def test_asdpo_without_adversary(self, tmp_path, capsys):
        code = main(["align", "--variant", "asdpo", "--config", str(tmp_path / "run.cfg"),
                     "--policy", str(tmp_path / "policy.prm")])
        assert code == EXIT_USAGE
        assert "--adversary is required" in capsys.readouterr().err


class TestErrors:
    def test_missing_config_file(self, tmp_path):
        assert main(["sft", "--config", str(tmp_path / "absent.cfg")]) == EXIT_IO

    def test_malformed_config(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("steps=ten\n", encoding="utf-8")
        assert main(["sft", "--config", str(path)]) == EXIT_VALIDATION

    def test_missing_archive(self, tmp_path, policy_file):
        assert main(["eval", "--policy", str(policy_file), "--data", str(tmp_path / "nowhere")]) == EXIT_IO


class TestDataCommands:
    def test_gen_data(self, archive, capsys):
        assert (archive / "manifest.txt").is_file()
        assert len(list(archive.glob("*.fld"))) == 10

    def test_gen_data_prints_summary(self, tmp_path, capsys):
        config = tmp_path / "data.cfg"
        config.write_text("grid=8x8\ncount=2\ndownscale_factor=2\n", encoding="utf-8")
        assert main(["--seed", "3", "gen-data", "--config", str(config), "--out", str(tmp_path / "d")]) == EXIT_OK
        assert capsys.readouterr().out.splitlines()[0] == "pairs=2"

    def test_psd(self, archive, tmp_path):
        out = tmp_path / "psd.csv"
        assert main(["psd", "--input", str(archive), "--out", str(out)]) == EXIT_OK
        assert out.read_text(encoding="utf-8").startswith("radius,power\n")


class TestRunCommands:
    def test_eval_is_repeatable(self, archive, policy_file, capsys):
        argv = ["--seed", "4", "eval", "--policy", str(policy_file), "--data", str(archive)]
        assert main(argv) == EXIT_OK
        first = capsys.readouterr().out
        assert main(argv) == EXIT_OK
        assert capsys.readouterr().out == first
        lines = first.splitlines()
        assert lines[0] == "index,psnr,lsd"
        assert len(lines) == 7
        assert lines[-1].startswith("mean,")

    def test_sft_report_on_stdout(self, tmp_path, archive, capsys):
        path = experiment_file(tmp_path, archive)
        assert main(["--seed", "1", "sft", "--config", str(path)]) == EXIT_OK
        assert capsys.readouterr().out.startswith("variant=sft\npoints=3\n")
        assert (tmp_path / "output" / "sft" / "config.txt").read_text(encoding="utf-8") == \
            path.read_text(encoding="utf-8")

    def test_output_root_from_environment(self, tmp_path, archive, monkeypatch):
        path = experiment_file(tmp_path, archive)
        text = path.read_text(encoding="utf-8")
        path.write_text("\n".join(line for line in text.splitlines() if not line.startswith("output=")) + "\n",
                        encoding="utf-8")
        monkeypatch.setenv("SOBOLEV_OUTPUT_DIR", str(tmp_path / "runs"))
        assert main(["sft", "--config", str(path)]) == EXIT_OK
        assert (tmp_path / "runs" / "sft" / "policy.prm").is_file()

    def test_align_dpo_l2(self, tmp_path, archive, policy_file, capsys):
        path = experiment_file(tmp_path, archive, "beta=1.0\n")
        code = main(["align", "--variant", "dpo-l2", "--config", str(path), "--policy", str(policy_file)])
        assert code == EXIT_OK
        assert capsys.readouterr().out.startswith("variant=dpo_l2\n")

    def test_grid_mismatch_is_validation_error(self, tmp_path, archive):
        path = experiment_file(tmp_path, archive, "")
        path.write_text(path.read_text(encoding="utf-8").replace("grid=8x8", "grid=4x4"), encoding="utf-8")
        assert main(["sft", "--config", str(path)]) == EXIT_VALIDATION


class TestVerify:
    def test_headline_and_options(self, mocker, capsys):
        report = SuiteReport(suite="prop1", checks=[CheckResult.above("cosine", 0.9999, 0.999)],
                             headline="prop1: cosine=0.999900000")
        run = mocker.patch.object(Prop1Suite, "run", return_value=report)
        assert main(["--seed", "9", "verify", "prop1", "--s", "1.5", "--eps", "0.2"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == "prop1: cosine=0.999900000"
        options = run.call_args[0][0]
        assert (options.seed, options.s, options.eps) == (9, 1.5, 0.2)

    def test_failed_suite_exit_code(self, mocker):
        report = SuiteReport(suite="prop1", checks=[CheckResult.above("cosine", 0.5, 0.999)],
                             headline="prop1: cosine=0.500000000")
        mocker.patch.object(Prop1Suite, "run", return_value=report)
        assert main(["verify", "prop1"]) == EXIT_VERIFICATION

    def test_unknown_suite(self):
        assert main(["verify", "prop3"]) == EXIT_USAGE
