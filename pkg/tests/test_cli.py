import json

import numpy as np
import pytest

from qmimo.cli import build_parser, main
from qmimo.quantizer import unpack_matrix

SMALL = {"solver": {"max_iter": 20},
         "sweep": {"snr_db": [10], "bits": [4], "trials": 2}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def test_parser_flags():
    args = build_parser().parse_args(["sweep", "--config", "c.json", "--seed", "3", "--out", "o",
                                      "--paper-scale"])
    assert (args.config, args.seed, args.out, args.paper_scale) == ("c.json", 3, "o", True)
    args = build_parser().parse_args(["locate", "--bits", "none"])
    assert args.bits is None


def test_simulate_solve_estimate(tmp_path, config, capsys):
    out = tmp_path / "run"
    main(["simulate", "--config", config, "--out", str(out), "--snr", "20", "--bits", "4"])
    files = sorted(p.name for p in out.glob("*.qbin"))
    assert files == [f"pair_{m}_{n}.qbin" for m in range(2) for n in range(3)]
    z, spec = unpack_matrix((out / "pair_0_0.qbin").read_bytes())
    assert z.shape == (432, 64) and spec.bits == 4
    main(["solve", str(out)])
    assert np.load(out / "pair_1_2.npy").shape == (432, 64)
    main(["estimate", str(out)])
    est = json.loads((out / "estimate.json").read_text())
    assert np.abs(np.array(est["theta_p"]) - [[1100.0, 1100.0]]).max() <= 30.0
    assert "position" in capsys.readouterr().out


def test_solve_requires_manifest(tmp_path):
    with pytest.raises(SystemExit):
        main(["solve", str(tmp_path)])


def test_sweep_command(tmp_path, config):
    out = tmp_path / "sw"
    main(["sweep", "--config", config, "--out", str(out), "--seed", "11"])
    assert (out / "sweep.csv").exists() and (out / "baseline.csv").exists()
    manifest = json.loads((out / "sweep.json").read_text())
    assert manifest["config"]["sweep"]["seed"] == 11


def test_locate_command(tmp_path, config, capsys):
    out = tmp_path / "loc"
    main(["locate", "--config", config, "--out", str(out), "--trials", "1"])
    assert (out / "locate.csv").exists() and (out / "residual_map.csv").exists()
    assert "median position error" in capsys.readouterr().out
