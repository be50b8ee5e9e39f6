import json

import numpy as np
import pytest
import yaml

from ibmcr.cli import main
from ibmcr.experiment import (
    ExperimentConfig,
    compression_depth,
    load_config,
    panel_config,
    read_infoplane_csv,
)
from ibmcr.errors import ConfigError
from ibmcr.nn import geometric_schedule
from ibmcr.rates import Partition, coding_rate, conditional_coding_rate, rate_reduction, write_features_csv

TINY = ["--set", "model.epochs=6", "--set", "model.log_points=4", "--set", "seeds=[0, 1]",
        "--set", "model.hidden_widths=[5, 3]", "--set", "dataset.subsample=256",
        "--set", "model.batch_size=64"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_random_suite_passes(capsys, tmp_path):
    code, _, err = run(["verify", "--instances", 50, "--seed", 3, "--report", tmp_path / "r.csv"], capsys)
    assert code == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "beta,neg_delta_i,delta_r,residual,predicted,pass"
    assert len(lines) == 1 + 50 * 7
    assert "350/350 rows PASS" in err


def test_verify_single_class_passes(capsys):
    code, out, _ = run(["verify", "--instances", 20, "--k1"], capsys)
    assert code == 0
    assert out.count("PASS") == 20 * 7


def test_verify_corrupted_delta_r_fails(capsys):
    code, _, err = run(["verify", "--instances", 5, "--corrupt-delta-r", 0.1], capsys)
    assert code == 3
    last = err.strip().splitlines()[-1]
    assert last.startswith("error: check_failed: beta=")


def test_rate_zero_matrix(capsys, tmp_path):
    write_features_csv(tmp_path / "z.csv", np.zeros((3, 6)))
    code, out, _ = run(["rate", "--features", tmp_path / "z.csv"], capsys)
    assert code == 0
    for line in out.splitlines():
        name, nats, bits = line.split("\t")
        assert float(nats.split()[0]) == 0.0 and float(bits.split()[0]) == 0.0


def test_rate_matches_library(capsys, tmp_path):
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((4, 12))
    labels = np.arange(12) % 3
    write_features_csv(tmp_path / "z.csv", Z)
    (tmp_path / "y.txt").write_text("\n".join(map(str, labels)))
    code, out, _ = run(["rate", "--features", tmp_path / "z.csv", "--labels", tmp_path / "y.txt",
                        "--eps", 0.7], capsys)
    assert code == 0
    got = {ln.split("\t")[0]: float(ln.split("\t")[1].split()[0]) for ln in out.splitlines()}
    part = Partition(labels, 3)
    assert got["R"] == coding_rate(Z, 0.7)
    assert got["Rc"] == conditional_coding_rate(Z, part, 0.7)
    assert got["dR"] == rate_reduction(Z, part, 0.7)


def test_rate_single_class_gives_zero_reduction(capsys, tmp_path):
    write_features_csv(tmp_path / "z.csv", np.random.default_rng(1).standard_normal((3, 9)))
    code, out, _ = run(["rate", "--features", tmp_path / "z.csv", "--single-class"], capsys)
    assert code == 0
    dr = [ln for ln in out.splitlines() if ln.startswith("dR")][0]
    assert abs(float(dr.split("\t")[1].split()[0])) < 1e-14


def test_bad_input_exit_codes(capsys, tmp_path):
    (tmp_path / "bad.csv").write_text("f0,f1\n1,2\n3\n")
    code, _, err = run(["rate", "--features", tmp_path / "bad.csv"], capsys)
    assert code == 1
    assert err.strip().startswith("error: FormatError:") and len(err.strip().splitlines()) == 1
    code, _, _ = run(["rate", "--features", tmp_path / "missing.csv"], capsys)
    assert code == 2
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--instances", "many"])
    assert exc.value.code == 1


@pytest.mark.parametrize(
    "override, field",
    [
        ("model.activation=sigmoid", "model.activation"),
        ("model.hidden_widths=[]", "model.hidden_widths"),
        ("seeds=[1, 1]", "seeds"),
        ("dataset.kind=parquet", "dataset.kind"),
        ("model.colour=red", "model.colour"),
        ("binning.bins=1", "binning.bins"),
    ],
)
def test_config_validation_names_field(capsys, tmp_path, override, field):
    code, _, err = run(["train", "--out", tmp_path, "--set", override], capsys)
    assert code == 1
    assert f"error: ConfigError: {field}:" in err
    assert not (tmp_path / "config.yaml").exists()


def test_config_roundtrip(tmp_path):
    cfg = panel_config("c")
    (tmp_path / "c.yaml").write_text(cfg.to_yaml())
    assert load_config(tmp_path / "c.yaml") == cfg
    assert load_config(tmp_path / "c.yaml", ["model.epochs=5"]).model.epochs == 5
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"nope": 1})


def test_gen_data(capsys, tmp_path):
    code, out, _ = run(["gen-data", "--out", tmp_path / "szt.csv"], capsys)
    assert code == 0
    info = json.loads(out)
    assert info["samples"] == 4096 and 0.49 <= info["positive_fraction"] <= 0.51


def test_repro_equals_manual_stages(capsys, tmp_path):
    code, _, _ = run(["repro", "b", "--out", tmp_path / "repro", "--quiet", *TINY], capsys)
    assert code == 0
    for name in ("config.yaml", "infoplane.csv", "infoplane.svg", "summary.json"):
        assert (tmp_path / "repro" / name).exists()

    code, _, _ = run(["train", "--config", tmp_path / "repro" / "config.yaml",
                      "--out", tmp_path / "manual", "--quiet"], capsys)
    assert code == 0
    traces = sorted((tmp_path / "manual" / "traces").iterdir())
    code, _, _ = run(["infoplane", *traces, "--out", tmp_path / "manual" / "infoplane.csv"], capsys)
    assert code == 0
    code, _, _ = run(["plot", tmp_path / "manual" / "infoplane.csv", "--title", "panel_b"], capsys)
    assert code == 0
    for name in ("infoplane.csv", "infoplane.svg", "config.yaml"):
        assert (tmp_path / "manual" / name).read_bytes() == (tmp_path / "repro" / name).read_bytes()

    summary = json.loads((tmp_path / "repro" / "summary.json").read_text())
    per_seed, averaged = read_infoplane_csv(tmp_path / "repro" / "infoplane.csv")
    assert {p.seed for p in per_seed} == {0, 1}
    for layer, diag in summary["averaged"].items():
        xs = [p.mi_xt_bits for p in averaged if p.layer == int(layer)]
        assert diag["compression_depth_bits"] == compression_depth(xs)


def test_config_echo_reproduces_traces(capsys, tmp_path):
    assert run(["train", "--out", tmp_path / "a", "--quiet", *TINY], capsys)[0] == 0
    assert run(["train", "--config", tmp_path / "a" / "config.yaml", "--out", tmp_path / "b", "--quiet"],
               capsys)[0] == 0
    for f in sorted((tmp_path / "a" / "traces").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / "traces" / f.relative_to(tmp_path / "a" / "traces")).read_bytes()
    echo = yaml.safe_load((tmp_path / "a" / "config.yaml").read_text())
    assert echo["model"]["hidden_widths"] == [5, 3]


def test_verify_on_trace_snapshots(capsys, tmp_path):
    assert run(["train", "--out", tmp_path, "--quiet", *TINY], capsys)[0] == 0
    code, out, _ = run(["verify", "--instances", 0, "--trace", tmp_path / "traces" / "seed0"], capsys)
    assert code == 0
    # logged epochs x 2 layers x 7 betas
    assert out.count("PASS") == len(geometric_schedule(6, 4)) * 2 * 7


def test_output_root_env(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("IBMCR_OUTPUT_ROOT", str(tmp_path))
    assert run(["train", "--quiet", "--set", "name=envtest", *TINY], capsys)[0] == 0
    assert (tmp_path / "envtest" / "traces" / "seed1" / "meta.json").exists()
