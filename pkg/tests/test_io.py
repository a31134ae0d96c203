import json
import struct

import numpy as np
import pytest

from msac.applications import LMConfig, SimilarityConfig, build_lm, build_similarity
from msac.errors import FormatError
from msac.io import decode_mst1, encode_mst1, load_params, read_tensor, save_params, write_tensor
from msac.params import flatten
from msac.sac import MSACConfig, init_msac


def test_header_layout():
    buf = encode_mst1(np.arange(6.0).reshape(2, 3))
    assert buf[:4] == b"MST1"
    assert struct.unpack("<III", buf[4:16]) == (2, 2, 3)
    assert struct.unpack("<6d", buf[16:]) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


def test_round_trip_bitwise(tmp_path):
    t = np.random.default_rng(0).normal(size=(3, 4, 2))
    t[0, 0, 0] = -0.0
    t[1, 1, 1] = 1e-310
    write_tensor(tmp_path / "t.mst", t)
    back = read_tensor(tmp_path / "t.mst")
    assert back.shape == t.shape
    assert back.tobytes() == t.tobytes()


def test_rejects_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        decode_mst1(b"MST2" + encode_mst1(np.zeros(2))[4:])


@pytest.mark.parametrize("cut", [3, 9, 17, 30])
def test_rejects_truncation(cut):
    buf = encode_mst1(np.ones((2, 2)))
    with pytest.raises(FormatError):
        decode_mst1(buf[:cut])


def test_rejects_trailing_bytes():
    with pytest.raises(FormatError):
        decode_mst1(encode_mst1(np.ones(2)) + b"\0")


def _assert_same(a, b):
    fa, fb = flatten(a), flatten(b)
    assert [p for p, _ in fa] == [p for p, _ in fb]
    for (_, x), (_, y) in zip(fa, fb):
        assert x.shape == y.shape and x.tobytes() == y.tobytes()


def test_msac_params_round_trip(tmp_path):
    cfg = MSACConfig(d=3, d_a=2, d_o=4, heads=2, scales=[[1, 1], [2, 3]], parallel_conv=True, bias=True, seed=3)
    p = init_msac(cfg)
    save_params(tmp_path, p, extra={"config": cfg.to_dict()})
    _assert_same(load_params(tmp_path), p)


def test_manifest_roles_and_indices(tmp_path):
    cfg = MSACConfig(d=2, d_a=2, d_o=2, heads=2, scales=[[1, 1], [1, 2]], bias=True)
    manifest = save_params(tmp_path, init_msac(cfg))
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["tensors"] == manifest["tensors"]
    by_name = {e["name"]: e for e in manifest["tensors"]}
    e = by_name["scales.1.mh.heads.0.bias"]
    assert (e["role"], e["scale"], e["head"]) == ("bias", 1, 0)
    assert by_name["hphi"]["role"] == "hphi"
    assert {"hq", "hk", "hv", "bias", "hy", "hphi"} <= {e["role"] for e in manifest["tensors"]}


def test_absent_optional_tensors_survive(tmp_path):
    p = init_msac(MSACConfig(d=2, d_a=2, d_o=2))
    save_params(tmp_path, p)
    back = load_params(tmp_path)
    assert back.scales[0].hr is None and back.scales[0].mh.heads[0].bias is None


def test_application_models_round_trip(tmp_path):
    lm, _ = build_lm(LMConfig(layers=2))
    save_params(tmp_path / "lm", lm)
    _assert_same(load_params(tmp_path / "lm"), lm)
    for mode in ("additive", "channel", None):
        sim = build_similarity(SimilarityConfig(augmentation=mode), np.random.default_rng(0))
        save_params(tmp_path / f"sim-{mode}", sim)
        back = load_params(tmp_path / f"sim-{mode}")
        _assert_same(back, sim)
        assert (back.augmentation is None) == (mode is None)


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError):
        load_params(tmp_path)
