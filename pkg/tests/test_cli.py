import csv

import numpy as np
import pytest

from drmfuse import GLOBAL_TILT, TiltSpec, validate
from drmfuse.cli import (
    ConfigError,
    EmptyAfterFilter,
    ParseError,
    UnknownRegion,
    ingest,
    main,
    parse_tilt_string,
    write_fused,
)


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "period", "value"])
        w.writerows(rows)


@pytest.fixture
def radon_csv(tmp_path):
    rng = np.random.default_rng(8)
    rows = []
    for period in ("89-93", "94-98"):
        for region, n in (("Beaver", 250), ("Butler", 200), ("Allegheny", 300)):
            shift = 0.15 if region == "Allegheny" else 0.0
            for v in rng.lognormal(1.1 + shift, 0.9, n):
                rows.append([region, period, repr(float(v))])
    rows.append(["Beaver", "89-93", "0.0"])        # dropped, counted
    rows.append(["Beaver", "94-98", "-2.5"])       # dropped, counted
    rows.append(["Elsewhere", "89-93", "3.0"])     # ignored region
    path = tmp_path / "radon.csv"
    write_csv(path, rows)
    return str(path)


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def test_ingest_partitions_and_counts(radon_csv):
    res = ingest(radon_csv, "Beaver", ["Butler", "Allegheny"], None)
    assert res.reference.n == 500
    assert res.neighbors[0].n == 400
    assert res.neighbors[1].n == 600
    assert res.rejected == {"Beaver": 2, "Butler": 0, "Allegheny": 0}
    assert res.periods_seen == ("89-93", "94-98")


def test_ingest_small_fixture_sizes(tmp_path):
    rows = [["Beaver", "p", "1.0"]] * 3 + [["Butler", "p", "2.0"]] * 2
    path = tmp_path / "f.csv"
    write_csv(path, rows)
    res = ingest(str(path), "Beaver", ["Butler"], None)
    data = validate(res.samples(), [TiltSpec.parse("x")])
    assert data.n0 == 3 and data.n == 5


def test_ingest_five_region_fixture(tmp_path):
    # realistic unbalanced county row counts for one period
    sizes = {"Beaver": 816, "Washington": 471, "Allegheny": 12328,
             "Butler": 985, "Lawrence": 231}
    rng = np.random.default_rng(0)
    rows = []
    for region, n in sizes.items():
        for v in rng.lognormal(1.0, 1.0, n):
            rows.append([region, "89-93", repr(float(v))])
    path = tmp_path / "t2.csv"
    write_csv(path, rows)
    res = ingest(str(path), "Beaver", ["Washington", "Allegheny", "Butler", "Lawrence"],
                 {"89-93"})
    data = validate(res.samples(), [GLOBAL_TILT] * 4)
    assert data.n0 == 816
    assert np.allclose(data.rho, [1, 471 / 816, 12328 / 816, 985 / 816, 231 / 816])


def test_ingest_period_filter(radon_csv):
    res = ingest(radon_csv, "Beaver", ["Butler"], {"89-93"})
    assert res.reference.n == 250
    assert res.neighbors[0].n == 200


def test_ingest_unknown_region(radon_csv):
    with pytest.raises(UnknownRegion):
        ingest(radon_csv, "Beaver", ["Nowhere"], None)


def test_ingest_empty_after_filter(radon_csv):
    with pytest.raises(EmptyAfterFilter):
        ingest(radon_csv, "Beaver", ["Butler"], {"99-03"})


def test_ingest_parse_errors(tmp_path):
    bad_header = tmp_path / "bad1.csv"
    bad_header.write_text("a,b,c\n")
    with pytest.raises(ParseError):
        ingest(str(bad_header), "x", [], None)

    bad_value = tmp_path / "bad2.csv"
    bad_value.write_text("region,period,value\nBeaver,p,notanumber\n")
    with pytest.raises(ParseError) as exc:
        ingest(str(bad_value), "Beaver", [], None)
    assert exc.value.line_no == 2

    bad_arity = tmp_path / "bad3.csv"
    bad_arity.write_text("region,period,value\nBeaver,p\n")
    with pytest.raises(ParseError):
        ingest(str(bad_arity), "Beaver", [], None)


def test_roundtrip_write_then_ingest(tmp_path, radon_csv):
    res = ingest(radon_csv, "Beaver", ["Butler"], None)
    data = validate(res.samples(), [TiltSpec.parse("x,logx")])
    out = tmp_path / "rt.csv"
    write_fused(data, str(out))
    back = ingest(str(out), "Beaver", ["Butler"], None)
    assert np.array_equal(back.reference.values, data.reference.values)
    assert np.array_equal(back.neighbors[0].values, data.neighbors[0][0].values)


# ---------------------------------------------------------------------------
# tilt grammar
# ---------------------------------------------------------------------------

def test_parse_tilt_string():
    specs = parse_tilt_string("x,logx,log2x; x,log2x", 2)
    assert specs[0] == GLOBAL_TILT
    assert specs[1] == TiltSpec.parse("x,log2x")
    assert parse_tilt_string("-;-", 2) == [TiltSpec(()), TiltSpec(())]
    with pytest.raises(ConfigError):
        parse_tilt_string("x", 2)
    with pytest.raises(ConfigError):
        parse_tilt_string("x,bogus", 1)


# ---------------------------------------------------------------------------
# subcommands via main()
# ---------------------------------------------------------------------------

def _flags(radon_csv, *extra):
    return [radon_csv, "--reference", "Beaver", "--neighbors", "Butler,Allegheny", *extra]


def test_cmd_fit_output(radon_csv, capsys):
    rc = main(["fit", *_flags(radon_csv, "--tilt", "global")])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "region,term,estimate,se"
    terms = [line.split(",")[1] for line in out[1:] if not line.startswith("#")]
    assert terms == ["alpha", "x", "logx", "log2x"] * 2
    assert any(line.startswith("# loglik=") for line in out)


def test_cmd_refine_table_shape(radon_csv, capsys):
    rc = main(["refine", *_flags(radon_csv)])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    parsed = list(csv.reader(out))
    assert parsed[0] == ["period", "Butler", "Allegheny"]
    assert [row[0] for row in parsed[1:]] == ["89-93", "94-98", "pooled"]
    assert all(len(row) == 3 for row in parsed[1:])


def test_cmd_threshold_block_shape(radon_csv, capsys):
    rc = main(["threshold", *_flags(radon_csv, "--tilt", "global",
                                    "--thresholds", "5,10,25,50,100,150,200")])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("method,T,prob,se,ci_low,ci_high")
    drm = [l for l in out[1:] if l.startswith("drm,")]
    emp = [l for l in out[1:] if l.startswith("empirical,")]
    assert len(drm) == 7 and len(emp) == 7
    row = emp[0].split(",")
    prob, lo, hi = float(row[2]), float(row[4]), float(row[5])
    assert lo <= prob <= hi


def test_cmd_gof_two_columns(radon_csv, capsys):
    rc = main(["gof", *_flags(radon_csv, "--tilt", "global")])
    assert rc == 0
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[0] == "ghat,gtilde"
    gh, gt = map(float, lines[1].split(","))
    assert 0 <= gh <= 1 and 0 <= gt <= 1
    assert "max |Ghat - Gtilde|" in captured.err


def test_cmd_gof_auto_tilt_runs(radon_csv, capsys):
    assert main(["gof", *_flags(radon_csv)]) == 0   # default --tilt auto


def test_cmd_gof_reference_only_is_diagonal(radon_csv, capsys):
    # empty neighbor list: Gtilde reduces to Ghat, pairs sit on the 45-degree line
    rc = main(["gof", radon_csv, "--reference", "Beaver", "--neighbors", "",
               "--tilt", "global"])
    assert rc == 0
    captured = capsys.readouterr()
    for line in captured.out.splitlines()[1:]:
        gh, gt = map(float, line.split(","))
        assert abs(gh - gt) < 1e-12
    assert "max |Ghat - Gtilde| = 0.000000" in captured.err


def test_cmd_refine_recovers_synthetic_truth(tmp_path, capsys):
    from drmfuse.simulation import generate
    ref, g, ln = generate(15, (1000, 1000, 1000))
    rows = []
    for sample in (ref, g, ln):
        rows += [[sample.label, "p1", repr(float(v))] for v in sample.values]
    path = tmp_path / "synth.csv"
    write_csv(path, rows)
    rc = main(["refine", str(path), "--reference", "exp",
               "--neighbors", "gamma,lognormal"])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    parsed = list(csv.reader(out))
    assert parsed[1] == ["p1", "logx", "x,log2x"]


def test_cmd_simulate_deterministic(capsys):
    args = ["simulate", "--reps", "2", "--sizes", "150,150,150", "--seed", "11"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    second = capsys.readouterr().out
    assert first == second
    assert first.splitlines()[0] == "estimator,metric,value,mc_se,I,n"


def test_cmd_out_flag_writes_file(radon_csv, tmp_path, capsys):
    out = tmp_path / "fit.csv"
    rc = main(["fit", *_flags(radon_csv, "--tilt", "global", "--out", str(out))])
    assert rc == 0
    assert out.read_text().startswith("region,term,estimate,se")


def test_exit_code_2_on_missing_file(tmp_path, capsys):
    assert main(["fit", str(tmp_path / "nope.csv"),
                 "--reference", "A", "--neighbors", "B"]) == 2


def test_exit_code_2_on_unknown_region(radon_csv, capsys):
    assert main(["fit", *_flags(radon_csv)[:-1], "Nowhere"]) == 2


def test_exit_code_4_on_bad_tilt(radon_csv, capsys):
    assert main(["fit", *_flags(radon_csv, "--tilt", "x,bogus; x")]) == 4


def test_exit_code_4_on_bad_flags(radon_csv, capsys):
    assert main(["fit"]) == 4                       # missing required flags
    assert main(["simulate", "--sizes", "1,2"]) == 4
    assert main(["refine", *_flags(radon_csv, "--alpha", "1.5")]) == 4


def test_exit_code_3_on_numerical_failure(tmp_path, capsys):
    rows = [["A", "p", "2.0"]] * 30 + [["B", "p", "2.0"]] * 20
    path = tmp_path / "flat.csv"
    write_csv(path, rows)
    rc = main(["fit", str(path), "--reference", "A", "--neighbors", "B",
               "--tilt", "global"])
    assert rc == 3


def test_period_selection_flags(radon_csv, capsys):
    assert main(["fit", *_flags(radon_csv, "--tilt", "global",
                                "--periods", "89-93")]) == 0
    assert main(["fit", *_flags(radon_csv, "--tilt", "global",
                                "--periods", "89-93,94-98")]) == 0
    assert main(["fit", *_flags(radon_csv, "--tilt", "global",
                                "--periods", "12-34")]) == 2
