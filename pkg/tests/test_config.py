import math
import shutil

import pytest

from srtrap.config import load_config
from srtrap.errors import ConfigError

PAPER_CFG = "configs/paper.cfg"


def test_paper_config_loads():
    cfg = load_config(PAPER_CFG)
    assert cfg.drive.v_rf == 500.0
    assert cfg.drive.omega_rf == pytest.approx(2 * math.pi * 2.5e6)
    assert cfg.geometry.r0 == 3.2e-3
    assert cfg.primary_species.name == "Sr+"
    assert cfg.master_seed == 20260810


def test_unit_conversions(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("""
[trap]
r0 = 3.2 mm
z0 = 10 mm
kappa_axial = 1.44e-3
[drive]
omega_rf = 2.5 MHz
v_rf = 500 V
v_ec = 0.5 kV
[species.a]
mass = 88 amu
[photoion]
rate_coefficient = 1e-22
[run]
master_seed = 7
""")
    cfg = load_config(p)
    assert cfg.drive.v_rf == 500.0
    assert cfg.drive.v_ec == 500.0
    assert cfg.drive.omega_rf == pytest.approx(2 * math.pi * 2.5e6)


def test_missing_required_key_names_it(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("""
[trap]
z0 = 10 mm
kappa_axial = 1.44e-3
[drive]
omega_rf = 2.5 MHz
v_rf = 500 V
v_ec = 500 V
[species.a]
mass = 88 amu
[photoion]
rate_coefficient = 1e-22
[run]
master_seed = 7
""")
    with pytest.raises(ConfigError, match="trap.r0"):
        load_config(p)


def test_unknown_key_is_hard_error(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[trap]\nr_zero = 3.2 mm\n")
    with pytest.raises(ConfigError, match="trap.r_zero"):
        load_config(p)


def test_unknown_section(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[trapp]\nr0 = 3.2 mm\n")
    with pytest.raises(ConfigError, match=r"\[trapp\]"):
        load_config(p)


def test_missing_unit_reports_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[trap]\nr0 = 3.2\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_bad_syntax_reports_location(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[trap]\nr0 3.2 mm\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_duplicate_key(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[trap]\nr0 = 3.2 mm\nr0 = 3.3 mm\n")
    with pytest.raises(ConfigError, match="duplicate"):
        load_config(p)


def test_validation_of_domain_invariants(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("""
[trap]
r0 = -3.2 mm
z0 = 10 mm
kappa_axial = 1.44e-3
[drive]
omega_rf = 2.5 MHz
v_rf = 500 V
v_ec = 500 V
[species.a]
mass = 88 amu
[photoion]
rate_coefficient = 1e-22
[run]
master_seed = 7
""")
    with pytest.raises(ConfigError, match="trap"):
        load_config(p)


def test_digest_deterministic_and_content_sensitive(tmp_path):
    a = load_config(PAPER_CFG)
    b = load_config(PAPER_CFG)
    assert a.digest == b.digest
    # copy with one changed value gets a different digest
    text = open(PAPER_CFG).read().replace("v_rf = 500 V", "v_rf = 501 V")
    p = tmp_path / "mod.cfg"
    p.write_text(text)
    assert load_config(p).digest != a.digest


def test_degc_conversion(tmp_path):
    cfg = load_config(PAPER_CFG)
    assert cfg.oven.cal_temperatures == (pytest.approx(383.15), pytest.approx(443.15))
