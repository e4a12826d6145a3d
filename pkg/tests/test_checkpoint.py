import json

import numpy as np
import pytest

from semcodec.policy import (
    ADAPTER_A,
    ADAPTER_V1,
    Checkpoint,
    CheckpointError,
    ctu_arch,
    fresh,
    frame_arch,
    tensor_hashes,
)
from semcodec.policy.checkpoint import MAGIC


def test_roundtrip_exact(tmp_path):
    ck = fresh(7)
    ck.ctu.add_adapter(ADAPTER_A, 3)
    ck.meta["bpp_norm"] = 1.25
    digest = ck.save(tmp_path / "a.smck")
    back = Checkpoint.load(tmp_path / "a.smck", expect={"frame": frame_arch(), "ctu": ctu_arch()})
    assert back.sha256() == digest == ck.sha256()
    assert back.meta == ck.meta
    assert back.ctu.adapters == (ADAPTER_A,)
    for a, b in ((ck.frame, back.frame), (ck.ctu, back.ctu)):
        assert tensor_hashes(a) == tensor_hashes(b)


def test_bytes_deterministic():
    assert fresh(3).to_bytes() == fresh(3).to_bytes()
    assert fresh(3).to_bytes() != fresh(4).to_bytes()
    assert fresh(3).to_bytes().startswith(MAGIC)


def test_metadata_lists_groups():
    ck = fresh(0)
    ck.frame.add_adapter(ADAPTER_V1)
    blob = ck.to_bytes()
    mlen = int.from_bytes(blob[6:10], "little")
    doc = json.loads(blob[10 : 10 + mlen])
    tags = {name: group for name, _, group in doc["agents"]["frame"]["tensors"]}
    assert tags["adapter_v1.up.w"] == ADAPTER_V1 and tags["fe.conv1.w"] == "FE"
    assert doc["agents"]["ctu"]["arch_hash"] == ctu_arch().hash()


def test_arch_mismatch_rejected(tmp_path):
    ck = fresh(0)
    ck.save(tmp_path / "a.smck")
    with pytest.raises(CheckpointError, match="does not match"):
        Checkpoint.load(tmp_path / "a.smck", expect={"ctu": ctu_arch(hidden=64)})
    # a tampered arch with a stale hash is caught without an expectation
    blob = ck.to_bytes()
    tampered = blob.replace(b'"hidden":128', b'"hidden":127', 1)
    with pytest.raises(CheckpointError, match="hash"):
        Checkpoint.from_bytes(tampered)


def test_corruption_errors(tmp_path):
    blob = fresh(0).to_bytes()
    with pytest.raises(CheckpointError, match="truncated"):
        Checkpoint.from_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        Checkpoint.from_bytes(blob[:5])
    with pytest.raises(CheckpointError, match="trailing"):
        Checkpoint.from_bytes(blob + b"\0" * 8)
    with pytest.raises(CheckpointError, match="magic"):
        Checkpoint.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.from_bytes(blob[:4] + (9).to_bytes(2, "little") + blob[6:])
    with pytest.raises(CheckpointError, match="not found"):
        Checkpoint.load(tmp_path / "missing.smck")


def test_copy_is_independent():
    ck = fresh(1)
    cp = ck.copy()
    cp.frame.params["fc.b"] += 1.0
    cp.meta["x"] = 1
    assert not np.array_equal(ck.frame.params["fc.b"], cp.frame.params["fc.b"])
    assert "x" not in ck.meta
