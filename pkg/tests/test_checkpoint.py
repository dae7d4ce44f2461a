import json

import numpy as np
import pytest

from src.checkpoint import FORMAT_TAG, Checkpoint, checkpoint_digest, load_checkpoint, save_checkpoint
from src.errors import ConfigError
from src.network import forward, init_params


def test_save_and_load_preserves_network(workdir, small_params):
    ckpt = Checkpoint(params=small_params.with_threshold(0.37), meta={"seed": 3, "lambda": 0.8})
    path = save_checkpoint(workdir / "nested" / "checkpoint.json", ckpt)
    loaded = load_checkpoint(path)

    assert loaded.params.threshold == 0.37
    assert loaded.params.widths == (8, 6)
    assert loaded.params.seed == 3
    assert loaded.meta == {"seed": 3, "lambda": 0.8}
    assert loaded.calibration is None
    for a, b in zip(loaded.params.arrays(), ckpt.params.arrays()):
        assert np.array_equal(a, b)
    x = np.array([0.4, -1.3, 2.2])
    assert forward(loaded.params, x) == forward(ckpt.params, x)


def test_digest_is_stable_and_sensitive(workdir):
    params = init_params(2, widths=(3,), seed=1)
    ckpt = Checkpoint(params=params, meta={"b": 1, "a": 2})
    reloaded = load_checkpoint(save_checkpoint(workdir / "c.json", ckpt))

    assert checkpoint_digest(ckpt) == checkpoint_digest(reloaded)
    assert checkpoint_digest(ckpt) != checkpoint_digest(Checkpoint(params=params.with_threshold(0.6), meta=ckpt.meta))


def test_rejects_other_formats(workdir):
    path = workdir / "old.json"
    path.write_text(json.dumps({"format": "something-else/0"}))
    with pytest.raises(ConfigError, match=FORMAT_TAG):
        load_checkpoint(path)


def test_missing_and_broken_files(workdir):
    with pytest.raises(ConfigError):
        load_checkpoint(workdir / "absent.json")
    broken = workdir / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_checkpoint(broken)


def test_architecture_mismatch(workdir, small_params):
    path = save_checkpoint(workdir / "c.json", Checkpoint(params=small_params))
    document = json.loads(path.read_text())
    document["architecture"]["widths"] = [8, 7]
    path.write_text(json.dumps(document))
    with pytest.raises(ConfigError):
        load_checkpoint(path)
