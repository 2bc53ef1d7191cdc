import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snncompress.convert import quantize_codebooks, to_cat, to_ternary
from snncompress.deploy import (LUT_MAGIC, export_lut, get_profile, index_bits, load_lut, load_profiles,
                                pack_indices, parse_profiles, unpack_indices, validate_profile)
from snncompress.errors import ContractError, ParseError
from snncompress.network import build_network


def desk(seed=0):
    return build_network((3, 8, 8), [("conv", 4), ("conv", 6)], 3, seed=seed)


def test_profile_catalog():
    profiles = load_profiles()
    assert set(profiles) >= {"truenorth-like", "generic-4bit", "generic-8bit"}
    tn = profiles["truenorth-like"]
    assert tn.max_unique_states == 4 and 8 in tn.allowed_bits
    with pytest.raises(ContractError):
        get_profile("nope")
    with pytest.raises(ContractError):
        parse_profiles("name,max_unique_states,allowed_bits,max_neurons,max_synapses\nx,0,8,1,1\n")
    with pytest.raises(ContractError):
        parse_profiles("name,max_unique_states,allowed_bits,max_neurons,max_synapses\nx,four,8,1,1\n")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["paper-exact", "resolution-preserving"]))
def test_cat_m4_always_passes_truenorth(seed, mode):
    net = quantize_codebooks(to_cat(desk(seed), 4, 8, quant_mode=mode, seed=seed), 8)
    rep = validate_profile(net, get_profile("truenorth-like"))
    assert rep.passed, rep.table()


def test_profile_failures_are_reported():
    net = quantize_codebooks(to_cat(desk(), 5, 8, quant_mode="resolution-preserving"), 8)
    rep = validate_profile(net, get_profile("truenorth-like"))
    assert not rep.passed
    failed = {(c["check"], c["measured"]) for c in rep.checks if not c["passed"]}
    assert ("unique_states", 5) in failed
    fp = validate_profile(desk(), get_profile("generic-8bit"))
    assert not fp.passed
    assert {c["check"] for c in fp.checks if not c["passed"]} == {"bitwidth"}
    assert "FAIL" in fp.table()


def test_index_bits():
    assert index_bits(4) == 2
    assert index_bits(2) == 1
    assert index_bits(5) == 3
    assert index_bits(16) == 4


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 60), st.integers(0, 2**31 - 1))
def test_pack_roundtrip(bits, count, seed):
    idx = np.random.default_rng(seed).integers(0, 2**bits, size=count)
    data = pack_indices(idx, bits)
    assert len(data) == (count * bits + 7) // 8
    assert np.array_equal(unpack_indices(data, bits, count), idx)


def test_pack_is_little_endian_lsb_first():
    assert pack_indices(np.array([1, 2, 3, 0]), 2) == bytes([0b00111001])


@pytest.mark.parametrize("mode", ["paper-exact", "resolution-preserving"])
def test_lut_roundtrip_cat(tmp_path, mode):
    net = quantize_codebooks(to_cat(desk(), 4, 8, quant_mode=mode), 8)
    path = tmp_path / "m.lut"
    manifest = export_lut(net, path, get_profile("truenorth-like"))
    assert manifest["profile"]["passed"]
    assert all(entry["index_bits"] == 2 and entry["level_kind"] == "int" for entry in manifest["layers"])
    loaded_manifest, weights = load_lut(path)
    assert loaded_manifest == manifest
    for layer in net.layers:
        assert np.array_equal(weights[layer.name], layer.effective())
    payload = sum(layer.weight.size for layer in net.layers) * 2 / 8
    assert payload < path.stat().st_size < payload + 4096


def test_lut_roundtrip_float_levels(tmp_path):
    net = to_ternary(desk(), 0.05)
    path = tmp_path / "t.lut"
    export_lut(net, path, max_levels=3)
    _, weights = load_lut(path)
    for layer in net.layers:
        assert np.array_equal(weights[layer.name], layer.effective())


def test_lut_refuses_layer_over_limit(tmp_path):
    with pytest.raises(ContractError, match="l0"):
        export_lut(desk(), tmp_path / "x.lut", get_profile("truenorth-like"))


def test_lut_parse_errors(tmp_path):
    bad = tmp_path / "bad.lut"
    bad.write_bytes(b"XXXX" + bytes(10))
    with pytest.raises(ParseError):
        load_lut(bad)
    good = tmp_path / "good.lut"
    export_lut(quantize_codebooks(to_cat(desk(), 4), 8), good)
    raw = good.read_bytes()
    assert raw[:4] == LUT_MAGIC
    good.write_bytes(raw[:-3])
    with pytest.raises(ParseError):
        load_lut(good)
