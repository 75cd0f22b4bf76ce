import csv
import json

import numpy as np
import pytest

from gridformer.casefile import bundled_case
from gridformer.cli import main, step_system, voltage_step
from gridformer.network import closed_loop_impedance, scaled_grid_operator
from gridformer.lti import FrequencyGrid

FAST = ["--points", "60"]


def case_path(tmp_path, name, edit=None):
    doc = bundled_case(name).to_dict()
    if edit:
        edit(doc)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(doc))
    return str(path)


def run(tmp_path, *argv):
    out = tmp_path / "out"
    code = main(list(argv) + ["--out", str(out)])
    return code, out


def read_json(path):
    return json.loads(path.read_text())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestFi:
    def test_no_device(self, tmp_path):
        code, out = run(tmp_path, "fi", "--arch", "none", *FAST)
        assert code == 0
        doc = read_json(out / "fi.json")["runs"][0]
        assert doc["verdict"] == "GFL"
        rows = read_csv(out / "fi.csv")
        assert rows[0] == ["omega_rad_s", "f_hz", "FI"]
        assert all(abs(float(r[2]) - 1.0) < 1e-12 for r in rows[1:])

    def test_vsg_is_gfm(self, tmp_path):
        code, out = run(tmp_path, "fi", "--arch", "vsg", *FAST)
        assert code == 0
        assert read_json(out / "fi.json")["runs"][0]["verdict"] == "GFM"

    def test_lg_sweep(self, tmp_path):
        code, out = run(tmp_path, "fi", "--arch", "pll-pq", "--sweep-param", "lg=0.1:0.5:5",
                        *FAST)
        assert code == 0
        runs = read_json(out / "fi.json")["runs"]
        assert len(runs) == 5
        peaks = [r["hinf_margin"] for r in runs]
        assert all(b > a for a, b in zip(peaks, peaks[1:]))
        assert len(read_csv(out / "fi.csv")[0]) == 2 + 5

    def test_case_device(self, tmp_path):
        code, out = run(tmp_path, "fi", "--case", case_path(tmp_path, "three_bus_vsg"),
                        "--device", "3", *FAST)
        assert code == 0
        assert read_json(out / "fi.json")["runs"][0]["arch"] == "VSG"

    def test_case_needs_device(self, tmp_path):
        code, _ = run(tmp_path, "fi", "--case", case_path(tmp_path, "three_bus"))
        assert code == 2

    def test_no_equilibrium_is_numeric(self, tmp_path):
        code, out = run(tmp_path, "fi", "--arch", "vsg", "--p0", "10", "--lg", "0.5", *FAST)
        assert code == 3
        assert read_json(out / "manifest.json")["config"]["exit_code"] == 3


class TestStrength:
    def test_homogeneous_self_check(self, tmp_path):
        code, out = run(tmp_path, "strength", "--case", case_path(tmp_path, "homogeneous_vsg"),
                        *FAST)
        assert code == 0
        doc = read_json(out / "strength.json")
        assert doc["self_check"]["homogeneous_max_abs_diff"] <= 1e-9
        assert doc["classification"] == "strong"

    def test_gfm_swap_raises_kappa(self, tmp_path):
        _, a = run(tmp_path / "a", "strength", "--case", case_path(tmp_path, "three_bus"), *FAST)
        _, b = run(tmp_path / "b", "strength", "--case", case_path(tmp_path, "three_bus_vsg"),
                   *FAST)
        ka = read_json(a / "strength.json")
        kb = read_json(b / "strength.json")
        assert kb["kappa_min"] > ka["kappa_min"]
        assert ka["classification"] == "very_weak"

    def test_threshold_flags(self, tmp_path):
        code, out = run(tmp_path, "strength", "--case", case_path(tmp_path, "three_bus"),
                        "--very-weak", "0.01", "--weak", "0.02", *FAST)
        assert code == 0
        assert read_json(out / "strength.json")["classification"] == "strong"

    def test_curves_csv(self, tmp_path):
        _, out = run(tmp_path, "strength", "--case", case_path(tmp_path, "five_bus"), *FAST)
        header = read_csv(out / "strength_curves.csv")[0]
        assert header[:5] == ["omega_rad_s", "f_hz", "kappa", "alpha", "passivity"]
        assert header[5:] == ["kappa_bus_1", "kappa_bus_2", "kappa_bus_3"]


class TestStep:
    def test_zero_amplitude(self, tmp_path):
        code, out = run(tmp_path, "step", "--case", case_path(tmp_path, "three_bus_vsg"),
                        "--bus", "3", "--amp", "0", "--t-end", "0.2")
        assert code == 0
        rows = read_csv(out / "step.csv")
        assert all(float(x) == 0.0 for r in rows[1:] for x in r[1:])

    def test_steady_state(self):
        case = bundled_case("three_bus_vsg")
        system, k = step_system(case, 3)
        _, _, _, steady = voltage_step(system, k, 0.1, t_end=0.01)
        op = scaled_grid_operator(system.net, FrequencyGrid([1e-9]))
        Z0 = closed_loop_impedance(system.models, op)[0]
        dI = np.zeros(2 * system.net.n)
        dI[2 * k] = 0.1
        assert np.allclose(steady, (Z0 @ dI).real, atol=1e-6)

    def test_interior_bus(self, tmp_path):
        code, out = run(tmp_path, "step", "--case", case_path(tmp_path, "three_bus_vsg"),
                        "--bus", "4", "--t-end", "0.1")
        assert code == 0
        assert read_csv(out / "step.csv")[0][-1] == "dU_bus_4"

    def test_unstable(self, tmp_path):
        # a weakened network with fast PLLs still has an equilibrium but loses stability
        def weaken(doc):
            for br in doc["branches"]:
                br["b_pu"] *= 0.5
            for dev in doc["devices"]:
                dev.update(params={"omega_pll_hz": 150.0}, p0_pu=0.2)
        code, _ = run(tmp_path, "step", "--case", case_path(tmp_path, "three_bus", weaken),
                      "--bus", "1", "--t-end", "0.1")
        assert code == 4

    def test_ground_bus(self, tmp_path):
        code, _ = run(tmp_path, "step", "--case", case_path(tmp_path, "three_bus"),
                      "--bus", "0")
        assert code == 2


class TestPlace:
    def test_exhaustive(self, tmp_path):
        code, out = run(tmp_path, "place", "--case", case_path(tmp_path, "five_bus"),
                        "--budget", "1.0", "--arch", "vsg", *FAST)
        assert code == 0
        doc = read_json(out / "placement.json")
        assert doc["total_capacity"] <= 1.0 and doc["achieved"] >= doc["baseline"]
        assert set(doc["candidate_bus_strength"]) == {"4", "5"}

    def test_search_space(self, tmp_path):
        sizes = ",".join(str(0.01 * (k + 1)) for k in range(400))
        code, _ = run(tmp_path, "place", "--case", case_path(tmp_path, "five_bus"),
                      "--budget", "100", "--sizes", sizes, "--arch", "vsg", *FAST)
        assert code == 5

    def test_greedy_runs(self, tmp_path):
        code, out = run(tmp_path, "place", "--case", case_path(tmp_path, "five_bus"),
                        "--budget", "100", "--sizes", "0.5", "--arch", "vsg",
                        "--method", "greedy", *FAST)
        assert code == 0
        assert read_json(out / "placement.json")["method"] == "greedy"


class TestCscr:
    def test_margin(self, tmp_path):
        code, out = run(tmp_path, "cscr", "--arch", "pll-pq", "--case",
                        case_path(tmp_path, "three_bus"))
        assert code == 0
        doc = read_json(out / "cscr.json")
        assert doc["margin"] == pytest.approx((doc["gscr"] - doc["cscr"]) / doc["cscr"])

    def test_no_bracket(self, tmp_path):
        code, out = run(tmp_path, "cscr", "--arch", "vsg", "--p0", "0.0")
        assert code == 6
        assert read_json(out / "cscr.json")["found"] is False


class TestManifestAndErrors:
    def test_manifest(self, tmp_path):
        path = case_path(tmp_path, "three_bus")
        code, out = run(tmp_path, "strength", "--case", path, *FAST)
        man = read_json(out / "manifest.json")
        assert man["command"] == "strength" and man["case_path"] == path
        assert man["seed"] == 0 and man["tool_version"]
        assert sorted(man["outputs"]) == sorted(str(out / f) for f in
                                                ("strength.json", "strength_curves.csv"))

    def test_deterministic(self, tmp_path):
        path = case_path(tmp_path, "five_bus")
        _, a = run(tmp_path / "a", "strength", "--case", path, *FAST)
        _, b = run(tmp_path / "b", "strength", "--case", path, *FAST)
        for name in ("strength.json", "strength_curves.csv"):
            assert (a / name).read_text() == (b / name).read_text()

    def test_missing_case(self, tmp_path):
        code, _ = run(tmp_path, "strength", "--case", str(tmp_path / "none.json"))
        assert code == 2

    def test_bad_flag(self, tmp_path, capsys):
        assert main(["fi", "--nope"]) == 2

    def test_unknown_arch(self, tmp_path):
        code, _ = run(tmp_path, "fi", "--arch", "diesel")
        assert code == 2

    def test_no_command(self):
        assert main([]) == 2

    def test_version(self, capsys):
        assert main(["--version"]) == 0
