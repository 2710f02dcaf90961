import json
import subprocess
import sys

import numpy as np
import pytest

from informed_rj import cli
from informed_rj.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_ESS,
    EXIT_OK,
    EXIT_RUNTIME,
    ConfigError,
    config_to_text,
    main,
    parse_config_text,
)
from informed_rj.datasets import synthetic_arrays, write_csv
from informed_rj.diagnostics import RunSummary
from informed_rj.oracle import LowEssError, ModelPmf


@pytest.fixture
def data_csv(tmp_path):
    X, y = synthetic_arrays(60, 3, coef=[0.6, 0.0, 0.3], seed=2)
    path = tmp_path / "data.csv"
    write_csv(path, X, y)
    return path


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_minimal_and_full_configs():
    cfg = parse_config_text("sampler = informed\nh = barker  # comment\niters = 500\n")
    assert (cfg.sampler, cfg.h, cfg.iters, cfg.effective_burnin) == ("informed", "barker", 500, 50)
    cfg = parse_config_text("sampler=improved\nh=sqrt\nT=4\nN=3\nell=auto\ncombiner=simple_average\n"
                            "model_kind=lptn\nrho=0.9\nchains=2\nseed=7\n", seed_override=11)
    assert cfg.seed == 11 and cfg.ell == "auto" and cfg.rho == 0.9
    assert parse_config_text(config_to_text(cfg)) == cfg


@pytest.mark.parametrize("text, key", [
    ("sampler = informed\nh = barker\niters = 100\nburnin = 200\n", "burnin"),
    ("sampler = informed\n", "h"),
    ("sampler = uninformed\nh = sqrt\n", "h"),
    ("sampler = ais\nh = sqrt\n", "T"),
    ("sampler = informed\nh = sqrt\nT = 3\n", "T"),
    ("sampler = multi\nh = sqrt\nT = 3\n", "N"),
    ("sampler = informed\nh = sqrt\niters = many\n", "iters"),
    ("sampler = informed\nh = cube\n", "h"),
    ("sampler = informed\nh = sqrt\ncolour = red\n", "colour"),
    ("sampler = informed\nh = sqrt\nh = barker\n", "h"),
    ("sampler = informed\nh = sqrt\nrho = 0.9\n", "rho"),
    ("sampler = informed\nh = sqrt\nmodel_kind = lptn\nrho = 0.5\n", "rho"),
    ("sampler = informed\nh = sqrt\nseed = -3\n", "seed"),
    ("just words\n", "key = value"),
])
def test_malformed_configs_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config_text(text)


def test_run_writes_outputs_and_is_deterministic(tmp_path, data_csv):
    cfg = write_config(tmp_path, "sampler = ais\nh = barker\nT = 2\niters = 400\nchains = 2\nseed = 5\n")
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["run", "--config", str(cfg), "--data", str(data_csv), "--out", str(out)]) == EXIT_OK
    for name in ("chain_0.trace", "chain_1.trace", "empirical_pmf.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert (outs[0] / "chain_0.trace").read_bytes() != (outs[0] / "chain_1.trace").read_bytes()
    summary = RunSummary.read(outs[0] / "summary.json")
    assert summary.iters == 400 and summary.burnin == 40
    assert summary.tv_to_reference is not None
    assert 0 <= summary.visit_rate <= 1
    assert len((outs[0] / "chain_0.trace").read_text().splitlines()) == 400
    parse_config_text((outs[0] / "config.txt").read_text())


def test_seed_flag_overrides_config(tmp_path, data_csv):
    cfg = write_config(tmp_path, "sampler = informed\nh = sqrt\niters = 200\nseed = 1\n")
    main(["run", "--config", str(cfg), "--data", str(data_csv), "--out", str(tmp_path / "x"), "--seed", "9"])
    assert RunSummary.read(tmp_path / "x" / "summary.json").seed == 9


def test_exit_code_for_config_errors(tmp_path, data_csv):
    cfg = write_config(tmp_path, "sampler = informed\nh = barker\niters = 100\nburnin = 200\n")
    assert main(["run", "--config", str(cfg), "--data", str(data_csv), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.cfg"), "--data", str(data_csv),
                 "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["enumerate", "--data", str(data_csv), "--out", str(tmp_path / "p"),
                 "--model-kind", "lptn", "--rho", "0.5"]) == EXIT_CONFIG


def test_exit_code_for_data_errors(tmp_path, data_csv):
    cfg = write_config(tmp_path, "sampler = informed\nh = barker\niters = 100\n")
    bad = tmp_path / "bad.csv"
    bad.write_text("y,a\n1,2\n2,x\n3,1\n")
    assert main(["run", "--config", str(cfg), "--data", str(bad), "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["run", "--config", str(cfg), "--data", str(tmp_path / "none.csv"),
                 "--out", str(tmp_path)]) == EXIT_DATA


def test_enumeration_bound_exit(tmp_path):
    X, y = synthetic_arrays(40, 25, seed=1)
    path = tmp_path / "wide.csv"
    write_csv(path, X, y)
    assert main(["enumerate", "--data", str(path), "--out", str(tmp_path / "p.txt")]) == EXIT_DATA


def test_runtime_error_exit(tmp_path, data_csv, monkeypatch):
    def broken(*args, **kwargs):
        raise FloatingPointError("overflow in kernel")

    monkeypatch.setattr(cli, "run_chain", broken)
    cfg = write_config(tmp_path, "sampler = informed\nh = barker\niters = 100\n")
    assert main(["run", "--config", str(cfg), "--data", str(data_csv), "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_low_ess_exit(tmp_path, data_csv, monkeypatch):
    def refuse(*args, **kwargs):
        raise LowEssError([3], [12.0])

    monkeypatch.setattr(cli, "golden_model_pmf", refuse)
    assert main(["enumerate", "--data", str(data_csv), "--out", str(tmp_path / "p.txt"),
                 "--model-kind", "lptn"]) == EXIT_ESS


def test_enumerate_normal_and_lptn(tmp_path, data_csv):
    normal_path, lptn_path = tmp_path / "n.txt", tmp_path / "l.txt"
    assert main(["enumerate", "--data", str(data_csv), "--out", str(normal_path)]) == EXIT_OK
    normal = ModelPmf.read(normal_path)
    assert abs(normal.probs.sum() - 1) < 1e-10 and len(normal.models) == 8
    assert main(["enumerate", "--data", str(data_csv), "--out", str(lptn_path),
                 "--model-kind", "lptn", "--budget", "10000"]) == EXIT_OK
    assert ModelPmf.read(lptn_path).source == "golden_lptn"


def test_compare_table(tmp_path, data_csv, capsys):
    ref = tmp_path / "ref.txt"
    main(["enumerate", "--data", str(data_csv), "--out", str(ref)])
    summaries = []
    for name, body in [("unif", "sampler = uninformed\niters = 600\n"),
                       ("bark", "sampler = informed\nh = barker\niters = 600\n"),
                       ("sqrt", "sampler = informed\nh = sqrt\niters = 600\n")]:
        cfg = write_config(tmp_path, body, f"{name}.cfg")
        main(["run", "--config", str(cfg), "--data", str(data_csv), "--out", str(tmp_path / name)])
        summaries.append(str(tmp_path / name / "summary.json"))
    out = tmp_path / "table.tsv"
    assert main(["compare", *summaries, "--reference", str(ref), "--out", str(out)]) == EXIT_OK
    rows = [line.split("\t") for line in out.read_text().splitlines()]
    assert rows[0] == ["label", "switch_acc_rate", "visit_rate", "tv", "rel_tv_increase"]
    tvs = [float(r[3]) for r in rows[1:]]
    assert tvs == sorted(tvs) and float(rows[1][4]) == 0.0
    capsys.readouterr()
    assert main(["compare", summaries[0], summaries[0], "--reference", str(ref)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()[1:]
    assert [float(line.split("\t")[4]) for line in lines] == [0.0, 0.0]
    assert main(["compare", summaries[0], "--reference", str(ref)]) == EXIT_CONFIG


def test_compare_support_mismatch(tmp_path, data_csv):
    cfg = write_config(tmp_path, "sampler = informed\nh = barker\niters = 300\n")
    main(["run", "--config", str(cfg), "--data", str(data_csv), "--out", str(tmp_path / "r")])
    small = tmp_path / "small.txt"
    ModelPmf.from_dict({999: 1.0}).write(small)
    summary = str(tmp_path / "r" / "summary.json")
    assert main(["compare", summary, summary, "--reference", str(small)]) == EXIT_DATA


@pytest.mark.parametrize("kind", ["analog", "linear", "noise"])
def test_gen_data(tmp_path, kind):
    out = tmp_path / f"{kind}.csv"
    assert main(["gen-data", "--out", str(out), "--kind", kind, "--seed", "3", "--outlier"]) == EXIT_OK
    rows = out.read_text().splitlines()
    header = rows[0].split(",")
    assert len(rows) - 1 == (97 if kind == "analog" else 100)
    assert len(header) == (9 if kind == "analog" else 5)
    y = np.array([float(r.split(",")[0]) for r in rows[1:]])
    assert y[0] == y.max()


def test_console_entry_point(tmp_path):
    out = tmp_path / "d.csv"
    proc = subprocess.run([sys.executable, "-m", "informed_rj.cli", "gen-data", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()


def test_summary_is_json(tmp_path, data_csv):
    cfg = write_config(tmp_path, "sampler = uninformed\niters = 200\n")
    main(["run", "--config", str(cfg), "--data", str(data_csv), "--out", str(tmp_path / "u")])
    doc = json.loads((tmp_path / "u" / "summary.json").read_text())
    assert {"switch_acc_rate", "visit_rate", "empirical_pmf", "tv_to_reference", "iters",
            "burnin", "seed", "wall_time"} <= set(doc)
