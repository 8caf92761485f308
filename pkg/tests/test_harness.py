import copy
import json
import math
from pathlib import Path

import pytest

from lrlab.errors import ConfigError, ExportError
from lrlab.harness import config_hash, export, load_config, load_results, parse_config, read_records, run_scenario, run_sweep
from lrlab.harness.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def raw(name):
    return json.loads((CONFIGS / f"{name}.json").read_text())


def small_lightcone(**disorder):
    cfg = {
        "scenario_id": "small",
        "mode": "lightcone",
        "model": {"kind": "xxz", "N": 6, "delta": 0.0},
        "disorder": {"W": 6.0, "base_seed": 5, "n_realizations": 6, **disorder},
        "probes": {"A": {"op": "z", "site": 0}, "B": {"op": "z", "distances": [1, 2, 3, 4]}},
        "schedule": {"times": [0.5, 1.0, 2.0]},
        "analysis": {"fit": True},
    }
    return cfg


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.json")):
        cfg = load_config(path)
        assert len(config_hash(cfg)) == 64


def test_two_site_zz_series():
    res = run_scenario(raw("two_site_zz"), workers=1)
    recs = res.records_of(kind="commutator")
    assert len(recs) == 6
    for r in recs:
        assert abs(r.value - 2 * abs(math.sin(2 * r.t))) <= 1e-12
    assert res.ok


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda c: c["disorder"].update(n_realizations=0), "disorder.n_realizations"),
        (lambda c: c["schedule"].update(times=[1.0, -2.0]), "schedule.times[1]"),
        (lambda c: c["model"].update(N=15), "model.N"),
        (lambda c: c["probes"]["B"].update(distances=[9]), "probes.B"),
        (lambda c: c.update(mode="nonsense"), "mode"),
        (lambda c: c["analysis"].update(bounds=["splitting"]), "analysis.bounds[0]"),
        (lambda c: c["disorder"].update(colour="red"), "disorder.colour"),
    ],
)
def test_config_errors_name_the_field(mutate, path):
    cfg = small_lightcone()
    mutate(cfg)
    with pytest.raises(ConfigError) as exc:
        parse_config(cfg)
    assert exc.value.path.startswith(path)


def test_hash_ignores_output_block_only():
    a = small_lightcone()
    b = copy.deepcopy(a)
    b["output"] = {"directory": "elsewhere"}
    c = small_lightcone(W=6.5)
    assert config_hash(parse_config(a)) == config_hash(parse_config(b))
    assert config_hash(parse_config(a)) != config_hash(parse_config(c))


def test_worker_count_does_not_change_bytes(tmp_path):
    cfg = small_lightcone()
    one = run_scenario(cfg, workers=1)
    many = run_scenario(cfg, workers=8)
    export(one, tmp_path / "one")
    export(many, tmp_path / "many")
    for name in ("records.csv", "fits.csv", "averages.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "many" / name).read_bytes()


def test_sweep_single_value_equals_run():
    cfg = small_lightcone(W=3.0)
    (swept,) = run_sweep(copy.deepcopy(cfg), "disorder.W", [0.0], workers=1)
    cfg["disorder"]["W"] = 0.0
    direct = run_scenario(cfg, workers=1)
    assert [r.value for r in swept.records] == [r.value for r in direct.records]
    assert swept.config_hash == direct.config_hash


def test_sweep_values_use_separate_streams():
    runs = run_sweep(small_lightcone(), "disorder.W", [6.0, 6.0], workers=1)
    assert [r.provenance["sweep"]["stream"] for r in runs] == [0, 1]
    assert [r.value for r in runs[0].records] != [r.value for r in runs[1].records]


def test_sweep_unknown_axis_and_empty():
    assert run_sweep(small_lightcone(), "disorder.W", []) == []
    with pytest.raises(ConfigError):
        run_sweep(small_lightcone(), "disorder.width", [1.0])


def test_adiabatic_sweep_deviation_shrinks_with_tau():
    base = raw("adiabatic_field")
    taus = [1.0, 10.0, 100.0]
    runs = run_sweep(copy.deepcopy(base), "perturbations[0].tau", taus, workers=1)
    deviations = []
    for j, res in enumerate(runs):
        plain = copy.deepcopy(base)
        plain.update(mode="lightcone", perturbations=[], analysis={"fit": False})
        plain["disorder"]["stream"] = j
        ref = {(r.realization, r.d, r.t): r.value for r in run_scenario(plain, workers=1).records}
        devs = [abs(r.value - ref[(r.realization, r.d, r.t)]) for r in res.records_of(kind="commutator") if r.t == 1.0]
        deviations.append(sum(devs) / len(devs))
    assert deviations[0] > deviations[1] > deviations[2] > 0


def test_export_round_trip(tmp_path):
    res = run_scenario(small_lightcone(), workers=1)
    export(res, tmp_path)
    loaded = load_results(tmp_path)
    def fields(r):
        return (r.scenario_id, r.kind, r.realization, r.d, r.t, r.value, r.a_support, r.b_support)

    assert [fields(r) for r in loaded["records"]] == [fields(r) for r in res.records]
    assert loaded["summary"]["config_hash"] == res.config_hash
    (sid, fit), = loaded["fits"]
    assert sid == "small" and fit.K == res.fits[0][1].K


def test_export_empty_result_writes_headers(tmp_path):
    res = run_scenario(small_lightcone(), workers=1)
    res.records, res.averages, res.fits = [], [], []
    export(res, tmp_path)
    for name in ("records.csv", "fits.csv", "averages.csv"):
        assert len((tmp_path / name).read_text().splitlines()) == 1
    assert read_records(tmp_path / "records.csv") == []


def test_import_rejects_tampering(tmp_path):
    res = run_scenario(raw("two_site_zz"), workers=1)
    export(res, tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    summary["config"]["schedule"]["tol"] = 1e-3
    (tmp_path / "summary.json").write_text(json.dumps(summary))
    with pytest.raises(ExportError):
        load_results(tmp_path)
    export(res, tmp_path)
    text = (tmp_path / "records.csv").read_text().replace("commutator", "speed", 1)
    (tmp_path / "records.csv").write_text(text)
    with pytest.raises(ExportError) as exc:
        load_results(tmp_path)
    assert Path(exc.value.path).name == "records.csv"


def test_import_rejects_value_above_cap(tmp_path):
    res = run_scenario(raw("two_site_zz"), workers=1)
    export(res, tmp_path)
    lines = (tmp_path / "records.csv").read_text().splitlines()
    fields = lines[1].split(",")
    fields[5] = "2.5"
    lines[1] = ",".join(fields)
    (tmp_path / "records.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ExportError):
        load_results(tmp_path)


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    ok = write_cfg(tmp_path, small_lightcone())
    assert main(["lightcone", "--config", ok, "--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert (tmp_path / "a" / "records.csv").exists()
    bad = small_lightcone()
    bad["disorder"]["n_realizations"] = 0
    assert main(["lightcone", "--config", write_cfg(tmp_path, bad, "bad.json"), "--out", str(tmp_path / "b")]) == 2
    assert "disorder.n_realizations" in capsys.readouterr().err
    tight = small_lightcone()
    tight["analysis"] = {"fit": False, "bounds": ["slow"], "params": {"K": 1e-6, "xi": 0.1, "beta": 0.0}}
    assert main(["lightcone", "--config", write_cfg(tmp_path, tight, "tight.json"), "--out", str(tmp_path / "c")]) == 3
    assert main(["lightcone", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "d")]) in (1, 2)


def test_cli_empty_sweep_and_export(tmp_path):
    ok = write_cfg(tmp_path, small_lightcone())
    assert main(["sweep", "--config", ok, "--axis", "disorder.W", "--values", "[]", "--out", str(tmp_path / "s")]) == 0
    assert json.loads((tmp_path / "s" / "sweep.json").read_text())["runs"] == []
    assert main(["lightcone", "--config", ok, "--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main(["export", "--input", str(tmp_path / "a"), "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "records.csv").read_bytes() == (tmp_path / "a" / "records.csv").read_bytes()


def test_seed_override_changes_disorder(tmp_path):
    ok = write_cfg(tmp_path, small_lightcone())
    main(["lightcone", "--config", ok, "--out", str(tmp_path / "a"), "--workers", "1"])
    main(["lightcone", "--config", ok, "--out", str(tmp_path / "b"), "--workers", "1", "--seed", "6"])
    assert (tmp_path / "a" / "records.csv").read_text() != (tmp_path / "b" / "records.csv").read_text()
