"""Config parsing, overrides, and the text round trip."""

import pytest

from pinpred import config as cfgmod
from pinpred.config import RunConfig

SAMPLE = """\
[grid]
height = 16
width = 24
dx = 0.5

[network]
k = 3
inference_widths = 8,16,32

[training]
epochs = 7
lr = 0.002

[ablation]
no_temporal = true
mask_pde_update = off

[scenario]
kind = vortex
source_rate = 0.25
source_x = 8.0
source_y = 12.0
source_radius = 2.0
"""


class TestLoading:
    def test_sample_values(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text(SAMPLE)
        cfg = cfgmod.load_config(path)
        assert (cfg.height, cfg.width, cfg.dx) == (16, 24, 0.5)
        assert cfg.k == 3 and cfg.inference_widths == (8, 16, 32)
        assert cfg.epochs == 7 and cfg.lr == 0.002
        assert cfg.no_temporal is True and cfg.mask_pde_update is False
        assert cfg.dt == 1.0  # untouched fields keep defaults

    def test_unknown_section_rejected(self):
        with pytest.raises(ValueError, match="unknown config section"):
            cfgmod.load_config_text("[typo]\nfoo = 1\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            cfgmod.load_config_text("[grid]\nheigth = 16\n")

    def test_key_in_wrong_section_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            cfgmod.load_config_text("[grid]\nepochs = 5\n")

    def test_bad_boolean_rejected(self):
        with pytest.raises(ValueError, match="boolean"):
            cfgmod.load_config_text("[ablation]\nno_temporal = maybe\n")

    def test_text_round_trip(self):
        cfg = RunConfig(height=20, k=3, lr=0.005, no_e1=True, kind="channel",
                        inference_widths=(8, 16, 32))
        assert cfgmod.load_config_text(cfgmod.config_text(cfg)) == cfg

    def test_round_trip_covers_every_field(self):
        text = cfgmod.config_text(RunConfig())
        for f in RunConfig.__dataclass_fields__:
            assert f in text


class TestOverrides:
    def test_none_values_skipped(self):
        cfg = RunConfig()
        assert cfgmod.apply_overrides(cfg, seed=None, epochs=None) is cfg

    def test_override_applies(self):
        cfg = cfgmod.apply_overrides(RunConfig(), epochs=3, seed=11)
        assert cfg.epochs == 3 and cfg.seed == 11

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown config fields"):
            cfgmod.apply_overrides(RunConfig(), nonsense=1)

    def test_validation_still_runs(self):
        with pytest.raises(ValueError, match="lr must be positive"):
            cfgmod.apply_overrides(RunConfig(), lr=-1.0)


class TestDerived:
    def test_scenario_without_source(self):
        sc = RunConfig().scenario()
        assert sc.kind == "uniform" and sc.source is None

    def test_scenario_with_source(self):
        cfg = RunConfig(source_rate=0.5, source_x=4.0, source_y=6.0, source_radius=1.5)
        sc = cfg.scenario()
        assert sc.source is not None
        assert sc.source.center == (4.0, 6.0)
        assert sc.source.rate == 0.5

    def test_empty_geometry(self):
        obst = RunConfig(height=10, width=12).obstacles()
        assert obst.shape == (10, 12)
        assert obst.solid[0].all() and obst.solid[-1].all()  # wall ring
        assert not obst.solid[1:-1, 1:-1].any()

    def test_geometry_from_file(self, tmp_path):
        path = tmp_path / "domain.txt"
        rows = ["#" * 8] + ["#..##..#"] + ["#" + "." * 6 + "#"] * 5 + ["#" * 8]
        path.write_text("\n".join(rows) + "\n")
        obst = RunConfig(height=8, width=8, geometry=str(path)).obstacles()
        assert obst.solid[1, 3] and obst.solid[1, 4]
        assert not obst.solid[2, 3]

    def test_grid_and_network(self):
        cfg = RunConfig(height=16, width=16, dx=0.5, dt=0.2, k=3)
        assert cfg.grid().shape == (16, 16)
        assert cfg.network().k == 3
