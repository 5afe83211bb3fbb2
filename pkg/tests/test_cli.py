import csv
import json

import numpy as np
import pytest

from survsr import cli, data
from survsr.evolve import EvolutionConfig


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    assert cli.main(["synth", "--score", "linear", "--n", "200", "--d", "4", "--seed", "3",
                     "--out", str(root / "toy.csv")]) == 0
    return root


def run(toy, out, *extra):
    return cli.main(["run", "--data", str(toy / "toy.csv"), "--schema", str(toy / "toy.schema.ini"),
                     "--out-dir", str(out), *extra])


def test_synth_outputs(toy):
    ds = data.load_csv(toy / "toy.csv", schema=toy / "toy.schema.ini")
    assert (ds.n, ds.d) == (200, 4)
    assert (toy / "toy_score.csv").is_file()


def test_cx_smoke_and_manifest(toy, tmp_path):
    out = tmp_path / "cx"
    assert run(toy, out, "--method", "cx", "--repetitions", "1", "--cx-n-lambdas", "100") == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["method"] == "cx" and manifest["failures"] == []
    files = sorted(manifest["files"])
    assert "rep_000/front_test.csv" in files and "rep_000/models.json" in files
    for rel, digest in manifest["files"].items():
        assert cli._sha256_file(out / rel) == digest
    with open(out / "rep_000" / "front_test.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(cli.FRONT_COLUMNS)


def test_rerun_byte_identical(toy, tmp_path):
    args = ("--method", "sr", "--repetitions", "2", "--pop-size", "20", "--generations", "2")
    assert run(toy, tmp_path / "a", *args) == 0
    assert run(toy, tmp_path / "b", *args, "--n-jobs", "2") == 0
    for rep in ("rep_000", "rep_001"):
        for name in ("front_train.csv", "front_test.csv"):
            assert (tmp_path / "a" / rep / name).read_bytes() == (tmp_path / "b" / rep / name).read_bytes()


def test_missing_schema_is_config_error(toy, tmp_path):
    out = tmp_path / "bad"
    assert cli.main(["run", "--data", str(toy / "toy.csv"), "--schema", str(tmp_path / "nope.ini"),
                     "--method", "cx", "--out-dir", str(out)]) == 2
    assert not out.exists()


def test_config_round_trip(tmp_path):
    cfg = cli.RunConfig(data="d.csv", schema="s.ini", method="st", normalize=True, repetitions=3, seed=9,
                        evolution=EvolutionConfig(pop_size=10, generations=2, temperature=0.2,
                                                  op_probs=dict(EvolutionConfig().op_probs, add_expr=0.5)))
    back = cli.RunConfig.from_ini(cfg.to_ini())
    assert back == cfg and back.hash() == cfg.hash()
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_ini("[run]\ndata = x\nbogus = 1\n")
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_ini("[run]\ndata = x\nmethod = gb\n")


def test_config_file_and_overrides(toy, tmp_path):
    ini = tmp_path / "run.ini"
    assert cli.main(["run", "--data", str(toy / "toy.csv"), "--method", "cx", "--repetitions", "1",
                     "--out-dir", str(tmp_path / "o"), "--save-config", str(ini)]) == 0
    cfg = cli.RunConfig.from_ini(ini.read_text())
    assert cfg.method == "cx" and cfg.repetitions == 1
    assert cli.main(["baseline", "--config", str(ini), "--cx-n-lambdas", "50"]) == 0
    assert (tmp_path / "o" / "manifest.json").is_file()


def test_failures_are_skipped_and_counted(toy, tmp_path, monkeypatch):
    calls = {"n": 0}
    real = cli.fit_fronts

    def flaky(cfg, train, test, rep):
        calls["n"] += 1
        if rep == 1:
            raise RuntimeError("boom")
        return real(cfg, train, test, rep)

    monkeypatch.setattr(cli, "fit_fronts", flaky)
    cfg = cli.RunConfig(data=str(toy / "toy.csv"), schema=str(toy / "toy.schema.ini"), method="cx",
                        repetitions=3, cx_n_lambdas=50, out_dir=str(tmp_path / "f"))
    assert cli.cmd_run(cfg) == 1  # 1 of 3 failed, above the 10% budget
    manifest = json.loads((tmp_path / "f" / "manifest.json").read_text())
    assert [f["repetition"] for f in manifest["failures"]] == [1]
    assert not (tmp_path / "f" / "rep_001").exists() and (tmp_path / "f" / "rep_002").is_dir()


def read_table(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_aggregate_tables(toy, tmp_path):
    assert run(toy, tmp_path / "cx", "--method", "cx", "--repetitions", "1", "--cx-n-lambdas", "100") == 0
    assert run(toy, tmp_path / "sr", "--method", "sr", "--repetitions", "1", "--pop-size", "20",
               "--generations", "2") == 0
    assert run(toy, tmp_path / "st", "--method", "st", "--repetitions", "1", "--st-max-depth", "3",
               "--st-folds", "3") == 0
    assert cli.main(["aggregate", str(tmp_path / "cx"), str(tmp_path / "sr"), str(tmp_path / "st"),
                     "--out-dir", str(tmp_path / "agg"), "--k", "1,3,99,max"]) == 0
    hv = read_table(tmp_path / "agg" / "hv_up_to_k.csv")
    assert list(hv[0]) == list(cli.TABLE_COLUMNS)
    assert {r["method"] for r in hv} == {"cx", "sr", "st"}
    assert len(hv) == 3 * 4
    ci = read_table(tmp_path / "agg" / "ci_exactly_k.csv")
    absent = [r for r in ci if r["k"] == "99"]
    assert absent and all(r["median"] == cli.ABSENT for r in absent)
    # one repetition: the median is that repetition's value
    front = cli.read_front_csv(tmp_path / "cx" / "rep_000" / "front_test.csv")
    row = next(r for r in ci if r["method"] == "cx" and r["k"] == "max")
    assert float(row["median"]) == max(front.points, key=lambda p: p.dims).ci
    surv = read_table(tmp_path / "agg" / "survival_curves.csv")
    values = np.array([float(r["median_survival"]) for r in surv])
    assert np.all((values >= 0) & (values <= 1))


def test_mixed_schema(toy, tmp_path):
    assert run(toy, tmp_path / "a", "--method", "cx", "--repetitions", "1", "--cx-n-lambdas", "50") == 0
    other = tmp_path / "other"
    other.mkdir()
    (other / "toy.csv").write_text((toy / "toy.csv").read_text().replace("\n1", "\n2", 1))
    (other / "toy.schema.ini").write_text((toy / "toy.schema.ini").read_text())
    assert run(other, tmp_path / "b", "--method", "cx", "--repetitions", "1", "--cx-n-lambdas", "50") == 0
    with pytest.raises(cli.MixedSchema):
        cli.cmd_aggregate([tmp_path / "a", tmp_path / "b"], tmp_path / "agg")
