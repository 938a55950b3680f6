import filecmp
import math
from pathlib import Path

import pytest

from tworing import outputs
from tworing.cli import main
from tworing.presets import compare_runs

QUICK = ["--replications", "2", "--horizon", "120"]


def csv_files(d):
    return sorted(p.name for p in Path(d).glob("*.csv"))


def same_tree(a, b):
    names = csv_files(a)
    assert names == csv_files(b)
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errors


def bifurcation_file(path, scenario, rows):
    outputs.write_csv(path, "bifurcation", outputs.BIFURCATION_COLUMNS,
                      [(scenario, i, *r) for i, r in enumerate(rows)])
    return path


HIT = (1, 3, 0.08, 0.04, 0.06, 0.42)
MISS = (0, math.nan, math.nan, math.nan, math.nan, math.nan)


# -- run -----------------------------------------------------------------------

def test_run_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("turn_probability: 0.15\nname: demo\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), *QUICK]) == 0
    names = csv_files(tmp_path / "o")
    for kind in ("metrics", "phase_path", "bifurcation", "theory_fd", "theory_equilibria", "theory_nfd"):
        assert f"{kind}_demo.csv" in names
    assert {"trajectories_demo_rep0.csv", "events_demo_rep1.csv"} <= set(names)
    assert (tmp_path / "o" / "config_demo.yaml").is_file()
    assert "2/2 replications" in capsys.readouterr().out


def test_config_errors_exit_one(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("turn_probability: 0.1\nmix_hv: 0.9\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "mix_hv" in capsys.readouterr().err


def test_bad_stride_exits_one(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("turn_probability: 0.0\n")
    assert main(["run", "--config", str(cfg), "--trajectory-stride", "0", "--out", str(tmp_path)]) == 1


def test_unwritable_output_exits_two(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("turn_probability: 0.0\n")
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", str(cfg), "--out", str(blocker / "sub"), *QUICK]) == 2


def test_unknown_preset_is_rejected():
    with pytest.raises(SystemExit):
        main(["preset", "--preset", "scenario_IV_hv"])


# -- preset --------------------------------------------------------------------

def test_scenario_one_has_no_connector_use_or_bifurcations(tmp_path):
    out = tmp_path / "s1"
    assert main(["preset", "--preset", "scenario_I_hv", "--out", str(out), *QUICK]) == 0
    rows = outputs.read_csv(out / "bifurcation_scenario_I_hv.csv", "bifurcation")
    assert len(rows) == 2 and all(r["detected"] == "0" for r in rows)
    for rep in range(2):
        traj = outputs.read_csv(out / f"trajectories_scenario_I_hv_rep{rep}.csv", "trajectory")
        assert traj and not {r["link_id"] for r in traj} & {"4", "5"}


def test_preset_is_byte_identical_across_runs(tmp_path):
    args = ["preset", "--preset", "scenario_II_cav", "--seed", "3", *QUICK]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b"), "--parallelism", "2"]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_seed_changes_outputs(tmp_path):
    base = ["preset", "--preset", "scenario_II_hv", *QUICK]
    main([*base, "--seed", "1", "--out", str(tmp_path / "a")])
    main([*base, "--seed", "2", "--out", str(tmp_path / "b")])
    assert not same_tree(tmp_path / "a", tmp_path / "b")


# -- compare -------------------------------------------------------------------

def test_identical_inputs_have_zero_differences(tmp_path):
    a = bifurcation_file(tmp_path / "a.csv", "s", [HIT, HIT[:2] + (0.09, 0.05, 0.07, 0.49)])
    b = tmp_path / "b.csv"
    b.write_text(a.read_text())
    first, second = compare_runs([a, b])
    assert first[1:-1] == second[1:-1]
    assert second[-1] == 0.0


def test_undetected_is_not_zero(tmp_path):
    a = bifurcation_file(tmp_path / "a.csv", "hit", [HIT])
    b = bifurcation_file(tmp_path / "b.csv", "miss", [MISS, MISS])
    rows = compare_runs([a, b])
    miss = rows[1]
    assert miss[2:4] == (2, 0)
    assert all(math.isnan(x) for x in miss[4:])


def test_positive_gap_in_mean_density(tmp_path):
    a = bifurcation_file(tmp_path / "hv.csv", "hv", [HIT])
    b = bifurcation_file(tmp_path / "cav.csv", "cav", [(1, 3, 0.1, 0.06, 0.08, 0.5)])
    assert compare_runs([a, b])[1][-1] == pytest.approx(0.02)


def test_compare_needs_two_files(tmp_path, capsys):
    a = bifurcation_file(tmp_path / "a.csv", "s", [HIT])
    with pytest.raises(ValueError):
        compare_runs([a])
    assert main(["compare", str(a)]) == 1


def test_schema_mismatch_exits_two(tmp_path):
    a = bifurcation_file(tmp_path / "a.csv", "s", [HIT])
    b = tmp_path / "b.csv"
    b.write_text(a.read_text().replace("schema v1", "schema v99"))
    assert main(["compare", str(a), str(b)]) == 2


def test_compare_cli_output(tmp_path, capsys):
    a = bifurcation_file(tmp_path / "a.csv", "s", [HIT])
    b = bifurcation_file(tmp_path / "b.csv", "s", [MISS])
    assert main(["compare", str(a), str(b)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ",".join(outputs.COMPARISON_COLUMNS)
    assert lines[2].startswith("b.csv,s,1,0,,")
    out = tmp_path / "cmp.csv"
    assert main(["compare", str(a), str(b), "--out", str(out)]) == 0
    assert len(outputs.read_csv(out, "comparison")) == 2
