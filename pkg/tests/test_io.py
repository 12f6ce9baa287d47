import json
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from twinbeam import io as tio
from twinbeam import presets
from twinbeam.conditioning import ConditioningSpec
from twinbeam.errors import (ChecksumError, ConfigParseError, DatasetFormatError, ParameterError,
                             TruncatedFileError, VersionError)
from twinbeam.model import Dataset, DetectorParams, Kind, SourceParams, simulate_run

MINIMAL = {"source": {"n_mean_per_mode": 1.0, "matched_modes": 1000, "unmatched_modes_1": 20},
           "detectors": [{"efficiency": 0.9}, {"efficiency": 0.8}]}


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return p


@pytest.fixture
def small():
    src = SourceParams(0.7, 300, 10, 12, 0.01)
    dets = (DetectorParams(0.9, 0.5, 3.0), DetectorParams(0.8, 0.0, 2.0))
    return simulate_run(Kind.TWIN_BEAM, dets, 500, seed=3, source=src)


def test_dataset_round_trip(tmp_path, small):
    p = tmp_path / "d.csv"
    tio.save_dataset(p, small)
    back = tio.load_dataset(p)
    assert back == small
    assert back.metadata() == small.metadata()
    lines = p.read_text().splitlines()
    assert lines[0] == "# twinbeam-dataset v1; kind=twin_beam; seed=3; n=500"
    assert json.loads(lines[1])["kind"] == "twin_beam"
    assert lines[2] == "pulse_id,s1,s2"
    assert lines[-1].startswith("# sha256=")


@given(arrays(np.float64, st.integers(0, 40), elements=st.floats(-1e300, 1e300, allow_nan=False)))
@settings(max_examples=40, deadline=None)
def test_doubles_survive_exactly(values):
    ds = Dataset(Kind.DARK, (DetectorParams(1.0), DetectorParams(1.0)), 0, values, values[::-1])
    back = tio.dataset_from_bytes(tio.dataset_to_bytes(ds))
    assert np.array_equal(back.s1, ds.s1) and np.array_equal(back.s2, ds.s2)


def test_coherent_metadata_round_trip(tmp_path):
    ds = simulate_run(Kind.COHERENT, (DetectorParams(0.5), DetectorParams(0.5)), 50, 1,
                      coherent_means=(10.0, 20.0))
    tio.save_dataset(tmp_path / "c.csv", ds)
    assert tio.load_dataset(tmp_path / "c.csv") == ds


def test_wrong_version_rejected(tmp_path, small):
    raw = tio.dataset_to_bytes(small).replace(b"twinbeam-dataset v1", b"twinbeam-dataset v9", 1)
    with pytest.raises(VersionError):
        tio.dataset_from_bytes(raw)


def test_truncated_file_rejected(small):
    raw = tio.dataset_to_bytes(small)
    with pytest.raises(TruncatedFileError):
        tio.dataset_from_bytes(raw[: len(raw) // 2])
    with pytest.raises(TruncatedFileError):
        tio.dataset_from_bytes(raw[:-1])


def test_checksum_failure_rejected(small):
    raw = bytearray(tio.dataset_to_bytes(small))
    i = raw.index(b"\n0,") + 3
    raw[i] = ord("9") if raw[i] != ord("9") else ord("8")
    with pytest.raises(ChecksumError):
        tio.dataset_from_bytes(bytes(raw))


def test_not_a_dataset(tmp_path):
    with pytest.raises(DatasetFormatError):
        tio.dataset_from_bytes(b"hello\n")


def test_atomic_write_leaves_no_temp_files(tmp_path, small):
    tio.save_dataset(tmp_path / "d.csv", small)
    tio.save_dataset(tmp_path / "d.csv", small)
    assert [p.name for p in tmp_path.iterdir()] == ["d.csv"]


def test_full_scale_persistence_speed(tmp_path):
    src, dets = presets.bright_regime()
    ds = simulate_run(Kind.TWIN_BEAM, dets, 300_000, 1, source=src)
    t0 = time.perf_counter()
    tio.save_dataset(tmp_path / "big.csv", ds)
    back = tio.load_dataset(tmp_path / "big.csv")
    elapsed = time.perf_counter() - t0
    assert back == ds
    assert elapsed < 5.0


def test_minimal_config_defaults(tmp_path):
    cfg = tio.load_config(_write(tmp_path, MINIMAL))
    assert cfg.source.gain_jitter_rel_std == 0.0
    assert cfg.source.unmatched_modes_2 == cfg.source.unmatched_modes_1 == 20
    assert cfg.n_pulses == 300_000
    assert cfg.seed == 0 and cfg.kind is Kind.TWIN_BEAM
    assert cfg.pump_sweep is None and cfg.conditioning == ()
    assert cfg.detectors[1].noise_var == 0.0


@pytest.mark.parametrize("patch, field", [
    ({"detectors": [{"efficiency": 1.2}, {"efficiency": 0.8}]}, "detectors[0].efficiency"),
    ({"bogus": 1}, "bogus"),
    ({"source": {"n_mean_per_mode": 1.0, "matched_modes": 10, "colour": "red"}}, "source.colour"),
    ({"source": {"matched_modes": 10}}, "source.n_mean_per_mode"),
    ({"n_pulses": 0}, "n_pulses"),
    ({"n_pulses": 2.5}, "n_pulses"),
    ({"seed": -1}, "seed"),
    ({"kind": "laser"}, "kind"),
    ({"detectors": [{"efficiency": 0.9}]}, "detectors"),
    ({"pump_sweep": {"powers_mW": [10, 20]}}, "pump_sweep.gain_coeff"),
    ({"pump_sweep": {"powers_mW": [-1], "gain_coeff": 0.1}}, "pump_sweep.powers_mW"),
    ({"conditioning": [{"q": 0}]}, "conditioning[0].q"),
    ({"conditioning": [{"q": 2, "centre": "x"}]}, "conditioning[0].centre"),
])
def test_config_validation_names_first_bad_field(tmp_path, patch, field):
    with pytest.raises(ParameterError) as exc:
        tio.load_config(_write(tmp_path, dict(MINIMAL, **patch)))
    assert exc.value.field == field


def test_config_missing_and_malformed(tmp_path):
    with pytest.raises(FileNotFoundError):
        tio.load_config(tmp_path / "nope.json")
    with pytest.raises(ConfigParseError):
        tio.load_config(_write(tmp_path, "{not json"))
    with pytest.raises(ConfigParseError):
        tio.load_config(_write(tmp_path, b"\xff\xfe".decode("latin-1")))


def test_bright_regime_config_round_trips_bit_identically(tmp_path):
    src, dets = presets.bright_regime()
    cfg = tio.ExperimentConfig(src, dets, seed=17,
                               pump_sweep=tio.PumpSweep((36.0, 126.3), 0.0894),
                               conditioning=(ConditioningSpec(20), ConditioningSpec.offset(20, 0.5)))
    tio.save_config(tmp_path / "a.json", cfg)
    loaded = tio.load_config(tmp_path / "a.json")
    assert loaded == cfg
    tio.save_config(tmp_path / "b.json", loaded)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert loaded.digest() == cfg.digest()


def test_table_round_trip(tmp_path):
    tio.write_table(tmp_path / "t.csv", ["a", "b", "note"], [[0.1, 2, "x"], [1 / 3, None, ""]])
    t = tio.read_table(tmp_path / "t.csv")
    assert t["a"].tolist() == [0.1, 1 / 3]
    assert np.isnan(t["b"][1])
    assert t["note"] == ["x", ""]
