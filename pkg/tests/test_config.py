import numpy as np
import pytest

from phasesep.config import PipelineConfig, load_config
from phasesep.errors import ConfigError


def test_defaults_match_the_reference_experiment():
    cfg = load_config()
    assert cfg.source.n_samples == 500_000 and cfg.source.rate == 16_000.0
    assert cfg.options.bins_per_dim == 16 and cfg.options.min_count == 50
    assert cfg.options.margin == 1e-6 and cfg.options.degeneracy_tol == 1e-3
    assert cfg.options.partition_threshold == 0.05
    assert cfg.options.separability_threshold == 0.05
    assert cfg.options.step is None and cfg.options.cross_tol is None
    assert cfg.mixing.a1 == 0.763


def test_round_trip_through_ini(tmp_path):
    cfg = load_config(overrides={"source.seed": "11", "map.step": "0.02",
                                 "mixing.lo": "-30000, -30000", "grid.bins_per_dim": "12"})
    cfg.write(tmp_path / "c.ini")
    back = load_config(tmp_path / "c.ini")
    assert back.source.seed == 11 and back.options.step == 0.02
    assert back.options.bins_per_dim == 12
    assert back.mixing.lo == (-30000.0, -30000.0)
    assert back == cfg


def test_auto_values():
    cfg = load_config(overrides={"map.cross_tol": "auto"})
    assert cfg.options.cross_tol is None


@pytest.mark.parametrize("overrides,match", [
    ({"source.t": "5"}, "unknown key"),
    ({"bogus.key": "1"}, "unknown config section"),
    ({"grid.margin": "-1"}, "positive"),
    ({"separability.threshold": "0"}, "positive"),
    ({"grid.bins_per_dim": "1"}, "bins_per_dim"),
    ({"grid.min_count": "many"}, "cannot parse"),
    ({"source.kind": "pink"}, "source.kind"),
    ({"mixing.b1": "100"}, "mixing"),
])
def test_invalid_configs(overrides, match):
    with pytest.raises(ConfigError, match=match):
        load_config(overrides=overrides)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.ini")


def test_every_section_is_written():
    cp = PipelineConfig().to_ini()
    assert set(cp.sections()) == {"source", "mixing", "grid", "frames", "weights", "map",
                                  "separability", "run"}
    assert np.isclose(float(cp["mixing"]["b2"]), 3.75e7)
