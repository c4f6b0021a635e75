from __future__ import annotations

import json

import numpy as np
import pytest

from mgcvae.dataset import (
    DatasetManifest,
    DatasetRecord,
    IngestConfig,
    accept_molecule,
    batches,
    ingest,
    read_cache,
    schema_hash,
    split,
    write_cache,
)
from mgcvae.errors import LineError, SchemaError
from mgcvae.molgraph import Schema, encode_matrix
from mgcvae.props import bin_conditions
from mgcvae.smiles import parse_smiles, write_smiles

VALID = ["CCO", "c1ccccc1", "CC(=O)O", "CCN", "OCCO", "CC(C)O", "c1ccncc1", "CCCl", "CC#N", "C1CCOC1"]
CHARGED = ["[NH4+]", "CC(=O)[O-]"]


def write_smi(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def small(tmp_path):
    src = write_smi(tmp_path / "in.smi", ["# comment"] + VALID + CHARGED)
    return ingest(src, tmp_path / "out")


def test_accept_examples():
    assert accept_molecule("CCO").accepted
    assert accept_molecule("CC.CC").reason == "fragment"
    assert accept_molecule("C" * 17).reason == "size"
    assert accept_molecule("C" * 16).reason == "logp_range"
    assert accept_molecule("C" * 12 + "O" * 4).accepted
    assert accept_molecule("[NH4+]").reason == "charge"
    assert accept_molecule("C(").reason == "syntax"
    assert accept_molecule("CZn").reason == "element"


def test_accept_property_ranges_are_open():
    assert accept_molecule("CCO", -6.0, 40.0).reason == "logp_range"
    assert accept_molecule("CCO", 5.0, 40.0).reason == "logp_range"
    assert accept_molecule("CCO", 0.0, 5.0).reason == "mr_range"
    assert accept_molecule("CCO", 0.0, 95.0).reason == "mr_range"
    assert accept_molecule("CCO", -5.999, 94.999).accepted


def test_precomputed_properties_honored():
    verdict = accept_molecule("CCO", 1.25, 33.0)
    assert (verdict.logp, verdict.mr) == (1.25, 33.0)


def test_ingest_counts(small):
    assert small.counts["accepted"] == 10
    assert small.counts["rejected"] == {"charge": 2}
    assert small.counts["total"] == 12


def test_ingest_byte_identical(tmp_path):
    src = write_smi(tmp_path / "in.smi", VALID + CHARGED)
    ingest(src, tmp_path / "a")
    ingest(src, tmp_path / "b")
    for name in ("dataset.mgcd", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_fields(small):
    raw = json.loads(small.resolved_cache_path.with_name("manifest.json").read_text())
    assert set(raw) == {"source_path", "schema", "schema_hash", "counts", "split_seed",
                        "train_indices", "test_indices", "cache_path"}
    loaded = DatasetManifest.load(small.resolved_cache_path.with_name("manifest.json"))
    assert loaded == small


def test_line_errors(tmp_path):
    src = write_smi(tmp_path / "in.smi", ["CCO\t1.0\t20.0", "CCN\tabc\t20.0"])
    with pytest.raises(LineError) as info:
        ingest(src, tmp_path / "out")
    assert info.value.line == 2
    m = ingest(src, tmp_path / "out", IngestConfig(skip_bad_lines=True))
    assert m.counts["accepted"] == 1 and m.counts["rejected"] == {"bad_line": 1}


def test_split_100(tmp_path, zinc_rows):
    src = write_smi(tmp_path / "in.smi", [s for s, _, _ in zinc_rows[:100]])
    m = ingest(src, tmp_path / "out")
    n = m.counts["accepted"]
    assert n == 100
    assert (len(m.train_indices), len(m.test_indices)) == (90, 10)
    assert not set(m.train_indices) & set(m.test_indices)
    assert sorted(m.train_indices + m.test_indices) == list(range(n))


def _fake_manifest(n):
    return DatasetManifest("x", Schema().to_dict(), schema_hash(Schema()), {"accepted": n}, 0, [], [], "x")


def test_split_seeds():
    m = _fake_manifest(1000)
    a = split(m, 1)
    assert split(m, 1) == a
    assert split(m, 2) != a
    assert len(a[1]) == 100


def test_batches(small):
    small.train_indices = list(range(10))
    sizes = [len(x) for x, _ in batches(small, "train", 4, epoch_seed=5)]
    assert sizes == [4, 4, 2]
    x, c = next(batches(small, "train", 4, epoch_seed=5))
    assert x.shape == (4, 1232) and c.shape == (4, 21)
    first = [x.copy() for x, _ in batches(small, "train", 4, epoch_seed=5)]
    again = [x for x, _ in batches(small, "train", 4, epoch_seed=5)]
    assert all(np.array_equal(a, b) for a, b in zip(first, again))
    other = [x for x, _ in batches(small, "train", 4, epoch_seed=6)]
    assert not all(np.array_equal(a, b) for a, b in zip(first, other))


def test_schema_mismatch(small, tmp_path):
    small.schema_hash = schema_hash(Schema(S=12))
    with pytest.raises(SchemaError):
        small.open_cache()
    with pytest.raises(SchemaError):
        next(batches(small, "train", 4, 0, cache=read_cache(small.resolved_cache_path)))


def test_cache_round_trip(tmp_path, zinc_rows):
    records = [DatasetRecord.from_graph(parse_smiles(s), lp, mr) for s, lp, mr in zinc_rows[:300]]
    write_cache(tmp_path / "c.mgcd", records)
    cache = read_cache(tmp_path / "c.mgcd")
    assert len(cache) == 300
    for k, rec in enumerate(records):
        back = cache.record(k)
        assert back == rec
        assert np.array_equal(back.matrix, rec.matrix)
        assert np.array_equal(back.condition.vector, rec.condition.vector)


def test_filter_soundness(tmp_path, zinc_rows):
    lines = [f"{s}\t{lp!r}\t{mr!r}" for s, lp, mr in zinc_rows[:1500]]
    lines += ["CC.O", "C/C=C/C", "[Na+]", "C" * 20, "CCBr\t7.0\t30.0"]
    m = ingest(write_smi(tmp_path / "in.smi", lines), tmp_path / "out")
    cache = m.open_cache()
    assert len(cache) == m.counts["accepted"]
    for k in range(len(cache)):
        rec = cache.record(k)
        g = parse_smiles(rec.smiles)
        verdict = accept_molecule(g, rec.logp, rec.mr)
        assert verdict.accepted
        assert write_smiles(g) == rec.smiles
        assert np.array_equal(encode_matrix(g), rec.matrix)
        assert rec.condition == bin_conditions(rec.logp, rec.mr)
