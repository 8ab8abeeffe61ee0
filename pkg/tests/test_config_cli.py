import csv
import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from msgfem import cli
from msgfem.config import ConfigError, ScenarioConfig, parse, serialize

SMALL = """\
[field]
resolution = 32
count = 6
[cover]
m = 4
fine = 32
[basis]
k_max = 2
[reference]
guard_refine = 0
[nwidth]
fine = 32
snapshots = 12
n = 4
[homog]
cell_n = 16
fine = 32
eps = 0.25
n = 2
[export]
patches = 0, 7
"""


def test_default_round_trip():
    c = ScenarioConfig()
    assert parse(serialize(c)) == c


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 64 - 1), m=st.integers(1, 64), r=st.floats(0.01, 0.4),
       prune=st.floats(0.0, 0.5), eps=st.lists(st.sampled_from([0.5, 0.25, 0.125, 0.0625]), min_size=1, max_size=4),
       sol=st.booleans())
def test_round_trip_property(seed, m, r, prune, eps, sol):
    c = (ScenarioConfig().replace("scenario", seed=seed).replace("cover", m=m)
         .replace("nwidth", r=r / 2, r_star=r).replace("solver", prune=prune)
         .replace("homog", eps=tuple(eps)).replace("export", solution=sol, patches=(1, 5)))
    assert parse(serialize(c)) == c


def test_partial_file_uses_defaults():
    c = parse("[cover]\nm = 8\n")
    assert c.cover.m == 8 and c.field == ScenarioConfig().field


@pytest.mark.parametrize("text, where", [
    ("[cover]\nm = 4\n[bogus]\nx = 1\n", "line 3"),
    ("[cover]\nm = 4\nfoo = 2\n", "line 3: [cover] foo"),
    ("[cover]\n\nm = four\n", "line 3: [cover] m"),
    ("[basis]\nk_min = 3\nk_max = 2\n", "line 2: [basis] k_min"),
    ("[export]\nsolution = maybe\n", "line 2: [export] solution"),
    ("[homog]\neps = 0.3\n", "line 2: [homog] eps"),
])
def test_errors_name_line_section_key(text, where):
    with pytest.raises(ConfigError) as exc:
        parse(text)
    assert where in str(exc.value)


def test_syntax_error():
    with pytest.raises(ConfigError):
        parse("m = 3\n")


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.ini"
    p.write_text(SMALL)
    return p


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("cmd, header", [
    ("study", ["family", "k", "n", "dofs", "retained", "energy_rel", "l2_rel", "energy_rel_overkill",
               "l2_rel_overkill", "slope", "r2", "status"]),
    ("solve", ["family", "k", "n", "dofs", "retained", "energy_rel", "l2_rel", "residual", "energy"]),
    ("nwidth", ["j", "lambda", "sqrt_lambda", "analytic_lambda", "analytic_sqrt", "rel_err"]),
    ("homog", ["eps", "i", "lambda", "deviation", "q"]),
    ("validate", ["suite", "check", "value", "tolerance", "result"]),
])
def test_subcommands(cmd, header, small_config, tmp_path):
    code = cli.main([cmd, "--config", str(small_config), "--out", str(tmp_path), "--seed", "3"])
    assert code == 0
    rows = read(tmp_path / "report.csv")
    assert rows[0] == header and len(rows) > 1
    summary = (tmp_path / "summary.txt").read_text()
    assert "seed: 3" in summary and "status: ok" in summary
    assert f"kind = {cmd}" in summary


def test_solve_exports(small_config, tmp_path):
    assert cli.main(["solve", "--config", str(small_config), "--out", str(tmp_path)]) == 0
    sol = read(tmp_path / "solution.csv")
    assert sol[0] == ["x", "y", "u"] and len(sol) == 1 + 33 * 33
    b = read(tmp_path / "basis_0.csv")
    assert b[0][:3] == ["x", "y", "psi_0"] and len(b[0]) == 2 + 1 + 4
    # this patch's oversampled region is the whole domain: constant plus particular only
    assert len(read(tmp_path / "basis_7.csv")[0]) == 2 + 1


def test_study_reproducible_across_runs_and_workers(small_config, tmp_path):
    outs = []
    for i, w in enumerate(("1", "1", "3")):
        d = tmp_path / str(i)
        assert cli.main(["study", "--config", str(small_config), "--out", str(d), "--workers", w]) == 0
        outs.append((d / "report.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_seed_changes_layout(small_config, tmp_path):
    cli.main(["study", "--config", str(small_config), "--out", str(tmp_path / "a"), "--seed", "1"])
    cli.main(["study", "--config", str(small_config), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "report.csv").read_bytes() != (tmp_path / "b" / "report.csv").read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[cover]\nm = 0\n")
    assert cli.main(["study", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert cli.main(["study", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 2
    assert cli.main(["study", "--workers", "0", "--out", str(tmp_path)]) == 2


def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        cli.main(["plot"])


def test_serialized_config_in_summary_parses_back(small_config, tmp_path):
    cli.main(["nwidth", "--config", str(small_config), "--out", str(tmp_path), "--seed", "9"])
    text = (tmp_path / "summary.txt").read_text().split("configuration:\n", 1)[1]
    c = parse(text)
    assert c.scenario.seed == 9 and c.scenario.kind == "nwidth" and c.cover.m == 4
