import json

import numpy as np
import pytest

from storage_bidding.case_io import (DC, JABR, LoadProfile, StorageSpec, build_instance, load_profile, parse_case,
                                     serialize_case, write_report, write_study, write_table)
from storage_bidding.exceptions import CaseFormatError, UnknownBusError, UnsupportedCostModelError
from storage_bidding.schemas import SolveReport, StudyResult, StudyRow

from conftest import two_bus

MINIMAL = """function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
    2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
    1 0 0 30 -30 1 100 1 100 0;
];
mpc.gencost = [
    2 0 0 3 0.01 20 5;
];
mpc.branch = [
    1 2 0.01 0.1 0.02 80 0 0 0 0 1 -30 30;
];
"""


def _assert_same_network(a, b):
    assert a.name == b.name
    assert a.base_power == pytest.approx(b.base_power, rel=1e-12)
    for group in ("buses", "generators", "branches", "loads"):
        left, right = getattr(a, group), getattr(b, group)
        assert len(left) == len(right)
        for x, y in zip(left, right):
            for name, value in vars(x).items():
                other = getattr(y, name)
                if isinstance(value, float):
                    assert value == pytest.approx(other, rel=1e-12, abs=1e-15), f"{group}.{name}"
                else:
                    assert value == other, f"{group}.{name}"


def test_parse_minimal_case_to_per_unit():
    net = parse_case(MINIMAL)
    assert net.name == "tiny"
    assert net.bus_ids == [1, 2]
    assert net.loads[0].pd == pytest.approx(0.5)
    gen = net.generators[0]
    assert gen.pmax == pytest.approx(1.0)
    assert gen.cost_lin == pytest.approx(2000.0)
    assert gen.cost_quad == pytest.approx(100.0)
    assert gen.cost_const == pytest.approx(5.0)
    assert net.branches[0].rate == pytest.approx(0.8)
    assert net.branches[0].tap == 1.0


@pytest.mark.parametrize("fixture", ["case3", "case5"])
def test_bundled_cases_round_trip(fixture, request):
    net = request.getfixturevalue(fixture)
    _assert_same_network(parse_case(serialize_case(net)), net)


def test_bundled_case3_values(case3):
    assert len(case3.buses) == 3
    assert case3.reference_bus == 1
    rated = [br.rate for br in case3.branches]
    assert rated[1] == pytest.approx(0.5)


def test_undeclared_branch_endpoint_reports_line():
    text = MINIMAL.replace("1 2 0.01 0.1", "1 7 0.01 0.1")
    with pytest.raises(CaseFormatError) as err:
        parse_case(text)
    assert err.value.line == 14


@pytest.mark.parametrize("impedance", ["0.01 0", "0 0"])
def test_zero_reactance_branch_rejected(impedance):
    with pytest.raises(CaseFormatError) as err:
        parse_case(MINIMAL.replace("1 2 0.01 0.1", f"1 2 {impedance}"))
    assert err.value.line == 14
    assert "zero series reactance" in str(err.value)


def test_zero_reactance_allowed_out_of_service():
    net = parse_case(MINIMAL.replace("1 2 0.01 0.1 0.02 80 0 0 0 0 1", "1 2 0 0 0.02 80 0 0 0 0 0"))
    assert not net.branches[0].in_service
    assert net.branches[0].x == 0.0


def test_piecewise_cost_rejected():
    with pytest.raises(UnsupportedCostModelError):
        parse_case(MINIMAL.replace("2 0 0 3 0.01 20 5", "1 0 0 2 0 0 100 2000"))


def test_missing_base_and_unterminated_table():
    with pytest.raises(CaseFormatError):
        parse_case(MINIMAL.replace("mpc.baseMVA = 100;", ""))
    with pytest.raises(CaseFormatError):
        parse_case(MINIMAL.split("mpc.branch")[0] + "mpc.branch = [\n 1 2 0.01 0.1 0 0 0 0 0 0 1 -30 30;\n")


def test_profile_needs_24_factors():
    factors = "\n".join(str(0.5 + 0.01 * h) for h in range(24))
    profile = load_profile("# hourly\n" + factors)
    assert len(profile) == 24
    with pytest.raises(CaseFormatError):
        load_profile("\n".join(["1.0"] * 23))
    with pytest.raises(CaseFormatError):
        load_profile(factors.replace("0.5", "-0.5", 1))


def test_winter_profile(winter_profile):
    assert len(winter_profile) == 24
    assert max(winter_profile.factors) <= 1.0


def test_build_instance_scales_loads():
    net = two_bus(load=1.0)
    instance = build_instance(net, LoadProfile((0.5, 1.0)), StorageSpec(bus=2), model=JABR)
    assert instance.horizon == 2
    np.testing.assert_allclose(instance.load_p[:, 0], [0.5, 1.0])
    np.testing.assert_allclose(instance.load_q[:, 0], [0.1, 0.2])
    assert instance.has_reactive
    assert not instance.with_reactive_bids(False).has_reactive
    assert not build_instance(net, LoadProfile((1.0,)), StorageSpec(bus=2), model=DC).has_reactive


def test_storage_validation():
    with pytest.raises(ValueError):
        StorageSpec(bus=1, eta_ch=1.2)
    with pytest.raises(ValueError):
        StorageSpec(bus=1, rating=0.0)
    with pytest.raises(UnknownBusError):
        build_instance(two_bus(), LoadProfile.flat(1), StorageSpec(bus=9))


def test_reports_written_as_json_and_csv(tmp_path):
    report = SolveReport(technique="SM2", params="eps=1e-4", status="optimal", computed_profit=1.5,
                         actual_profit=1.5, diff_pct=0.0, violations=[])
    json_path, csv_path = write_report(report, tmp_path / "one")
    assert json.loads(json_path.read_text())["technique"] == "SM2"
    assert "eps=1e-4" in csv_path.read_text()

    _, table_csv = write_table([report, report.model_copy(update={"technique": "PD"})], tmp_path / "table.csv")
    assert len(table_csv.read_text().strip().splitlines()) == 3


def test_study_csv_sorted_by_increase(tmp_path):
    result = StudyResult(technique="SM2", rows=[
        StudyRow(bus=1, included=True, increase_pct=2.0),
        StudyRow(bus=2, included=True, increase_pct=9.0),
        StudyRow(bus=3, included=False),
    ])
    _, csv_path = write_study(result, tmp_path / "study")
    lines = csv_path.read_text().strip().splitlines()
    assert lines[1].startswith("2,")
    assert result.sorted_increases() == [9.0, 2.0, 0.0]
