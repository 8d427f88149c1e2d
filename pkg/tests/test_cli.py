import json
import xml.etree.ElementTree as ET

import pytest

from qcelevator.cli import main

W1_FLAGS = ["--direct", "--n", "2", "--p", "2.1", "--d", "0.1", "--M", "3", "--Mprime", "4", "--t", "0.27"]


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    root = tmp_path_factory.mktemp("w1")
    assert main(["plan", *W1_FLAGS, "-o", str(root / "inst.json")]) == 0
    assert main(["build", "-i", str(root / "inst.json"), "-o", str(root / "w1.json")]) == 0
    return root


def test_plan_records_params(built):
    doc = json.loads((built / "inst.json").read_text())
    assert doc["schemaVersion"] == 1
    assert doc["M"] == 3 and doc["Mprime"] == 4 and doc["mode"] == "direct"


def test_build_is_deterministic(built, tmp_path):
    assert main(["build", "-i", str(built / "inst.json"), "-o", str(tmp_path / "again.json")]) == 0
    a = json.loads((built / "w1.json").read_text())
    b = json.loads((tmp_path / "again.json").read_text())
    a["genmap"].pop("sidecar", None)
    b["genmap"].pop("sidecar", None)
    assert a == b
    assert (built / "w1.bin").read_bytes() == (tmp_path / "again.bin").read_bytes()
    assert all(r["ok"] for r in a["moveReports"])


def test_verify_w1(built, capsys):
    out = built / "report.json"
    assert main(["verify", "-i", str(built / "w1.json"), "-o", str(out), "--samples", "4096"]) == 0
    report = json.loads(out.read_text())
    assert report["ok"]
    assert all(c["ok"] for c in report["checks"])
    assert report["numbers"]["analyticBound"]["kappa"] == 3
    again = built / "report2.json"
    assert main(["verify", "-i", str(built / "w1.json"), "-o", str(again), "--samples", "4096"]) == 0
    assert again.read_bytes() == out.read_bytes()
    assert main(["report", "-i", str(out)]) == 0
    text = capsys.readouterr().out
    assert "status: PASS" in text and "kappa" in text


def test_sample_rows(built):
    out = built / "fiber.csv"
    assert main(["sample", "fiber", "-i", str(built / "w1.json"), "--sigma", "1|1", "--depth", "3", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x1,x2" and len(lines) == 65


def test_render_svg(built):
    out = built / "w1.svg"
    assert main(["render", "-i", str(built / "w1.json"), "--depth", "2", "-o", str(out)]) == 0
    root = ET.parse(out).getroot()
    holes = [e for e in root.iter() if e.get("class") == "hole"]
    assert len(holes) == 12 + 144
    a = out.read_bytes()
    main(["render", "-i", str(built / "w1.json"), "--depth", "2", "-o", str(out)])
    assert out.read_bytes() == a


def test_paper_mode_pipeline(tmp_path):
    inst, con = tmp_path / "w2.json", tmp_path / "w2c.json"
    assert main(["plan", "--n", "2", "--p", "3", "--alpha", "1.2", "--beta", "0.4", "-o", str(inst)]) == 0
    assert main(["build", "-i", str(inst), "-o", str(con)]) == 0
    assert "skipped" in json.loads(con.read_text())["genmap"]
    assert main(["verify", "-i", str(con), "-o", str(tmp_path / "r.json")]) == 0


def test_infeasible_exit(tmp_path):
    flags = [f if f != "0.27" else "0.30" for f in W1_FLAGS]
    assert main(["plan", *flags, "-o", str(tmp_path / "x.json")]) == 2
    assert main(["plan", "--n", "2", "--p", "1.5", "--alpha", "1.2", "--beta", "0.4", "-o", str(tmp_path / "y.json")]) == 2


def test_usage_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["build", "-i", str(bad), "-o", str(tmp_path / "o.json")]) == 1
    bad.write_text(json.dumps({"n": 2}))
    assert main(["build", "-i", str(bad), "-o", str(tmp_path / "o.json")]) == 1
    assert main(["build", "-i", str(bad), "-o", str(bad)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["plan", "--n", "two"])
    assert exc.value.code == 1
    assert main(["plan", "--direct", "--n", "2", "--p", "2", "-o", str(tmp_path / "z.json")]) == 1


def test_bad_sigma(built, tmp_path):
    rc = main(["sample", "fiber", "-i", str(built / "w1.json"), "--sigma", "9|1", "--depth", "2",
               "-o", str(tmp_path / "f.csv")])
    assert rc == 1
