import os

import numpy as np
import pytest

from stokes2p import cli
from stokes2p import time_stepper as ts
from stokes2p.config import RunConfig, parse_config
from stokes2p.errors import ConfigError


def test_parse_minimal_stationary():
    cfg = parse_config(
        """
        # minimal stationary setup
        problem = stationary_bubble
        n_gamma = 64
        tau = 1e-2
        t_end = 1.0
        """
    )
    assert cfg.problem == "stationary_bubble"
    assert cfg.n_gamma == 64
    assert cfg.xfem is True


def test_parse_reports_every_problem():
    bad = """
    problem = nonsense
    h_f = 0.5
    h_c = 0.2
    whatkey = 3
    tau = never
    """
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    msg = str(err.value)
    assert "whatkey" in msg
    assert "tau" in msg
    # invariant violations surface once the values parse
    with pytest.raises(ConfigError) as err2:
        parse_config("h_f = 0.5\nh_c = 0.2\nmu_minus = -1\n")
    msg2 = str(err2.value)
    assert "h_f" in msg2 and "h_c" in msg2
    assert "mu_minus" in msg2


def test_expanding_requires_hole_domain():
    cfg = RunConfig(problem="expanding_bubble", domain="square")
    assert any("square_with_hole" in p for p in cfg.validate())
    # the resolver fills the preset domain in
    assert cfg.resolved().domain == "square_with_hole"


def test_table7_style_config():
    cfg = parse_config(
        """
        problem = expanding_bubble
        domain = square_with_hole
        alpha = 0.15
        mu_plus = 1.0
        mu_minus = 0.1
        element = p2p1
        xfem = off
        n_gamma = 75
        h_f = 0.041666666666666664
        h_c = 0.3333333333333333
        tau = 1e-2
        t_end = 1.0
        """
    )
    assert cfg.mu_plus == pytest.approx(10 * cfg.mu_minus)
    assert not cfg.xfem


def test_cli_run_and_determinism(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(
        "problem = stationary_bubble\nn_gamma = 64\ntau = 1e-2\nt_end = 0.05\n"
    )
    out1 = tmp_path / "out1"
    out2 = tmp_path / "out2"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out2)]) == 0
    b1 = (out1 / "diagnostics.csv").read_bytes()
    b2 = (out2 / "diagnostics.csv").read_bytes()
    assert b1 == b2
    diags = ts.read_diagnostics(out1 / "diagnostics.csv")
    assert all(d.umax <= 1e-10 for d in diags[1:])
    from stokes2p.interface_mesh import InterfaceMesh

    iface = InterfaceMesh.load(out1 / "interface_final.txt")
    assert len(iface) == 64


def test_cli_config_error(tmp_path):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text("problem = wat\n")
    assert cli.main(["run", "--config", str(cfg_path)]) == 2


def test_cli_converge_single_level(tmp_path):
    cfg_path = tmp_path / "conv.cfg"
    cfg_path.write_text("problem = stationary_bubble\nxfem = off\n")
    out = tmp_path / "study"
    rc = cli.main(
        ["converge", "--config", str(cfg_path), "--levels", "0",
         "--out", str(out)]
    )
    assert rc == 0
    lines = (out / "table.csv").read_text().splitlines()
    assert len(lines) == 2  # header + single level, no rate entries
    row = lines[1].split(",")
    assert row[0] == "0"
    assert row[-1] == ""  # no successive rate on the first level


def test_cli_selftest():
    assert cli.main(["selftest", "--filter", "shoelace"]) == 0
    assert cli.main(["selftest", "--filter", "no_such_check"]) == 2


def test_run_emits_parseable_artifacts(tmp_path):
    cfg_path = tmp_path / "r.cfg"
    cfg_path.write_text(
        "problem = stationary_bubble\ntau = 1e-2\nt_end = 0.02\n"
        f"dump_every = 1\n"
    )
    out = tmp_path / "art"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    # every emitted artifact reads back with the package's own readers
    ts.read_diagnostics(out / "diagnostics.csv")
    from stokes2p.interface_mesh import InterfaceMesh

    InterfaceMesh.load(out / "interface_000001.txt")
    assert (out / "bulk_000001.txt").exists()
