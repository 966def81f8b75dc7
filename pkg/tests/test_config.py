import pytest

from tupleflow.config import Config, ConfigError, load_config, parse_config


def test_defaults():
    cfg = load_config(None)
    assert cfg.profile.clock_hz == 2.8e9
    assert cfg.topology().workers == cfg.profile.worker_threads


def test_toml_file(tmp_path):
    path = tmp_path / "hw.toml"
    path.write_text("clock_hz = 3.0e9\nlane_width_bits = 128\n[cpi]\nsqrt = 8.0\n"
                    "[topology]\nnodes = 2\nexecutors_per_node = 3\nexec_block_bytes = 4096\n")
    cfg = load_config(path)
    assert cfg.profile.lanes == 4 and cfg.profile.cpi_table["sqrt"] == 8.0
    topo = cfg.topology()
    assert (topo.node_count, topo.executors_per_node, topo.exec_block_bytes) == (2, 3, 4096)


@pytest.mark.parametrize("doc", [
    {"clock_hz": -1},
    {"profile": {"turbo": True}},
    {"cpi": {"frobnicate": 1}},
    {"topology": {"racks": 2}},
    {"topology": {"gm_block_bytes": 10, "exec_block_bytes": 20}},
    {"extra": {}},
])
def test_invalid_documents(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("clock_hz = = 1")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_overrides():
    cfg = Config().with_overrides(threads=2, nodes=3, block_bytes=1024)
    topo = cfg.topology()
    assert (topo.node_count, topo.executors_per_node, topo.exec_block_bytes) == (3, 2, 1024)
