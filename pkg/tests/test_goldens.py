"""Checked-in golden files must match what the generator produces today,
and their checksum manifest must match the files."""

import hashlib
import json
import os

import pytest

from legrad import fixtures

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def _digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _read_sums(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            digest, name = line.strip().split("  ")
            out[name] = digest
    return out


class TestGoldenFiles:
    def test_regeneration_is_byte_identical(self, tmp_path):
        written = fixtures.write_goldens(str(tmp_path))
        assert written, "generator produced nothing"
        for rel in written + ["SHA256SUMS"]:
            fresh = (tmp_path / rel).read_bytes()
            committed_path = os.path.join(FIXTURES, rel)
            assert os.path.isfile(committed_path), f"missing golden {rel}"
            committed = open(committed_path, "rb").read()
            assert fresh == committed, f"golden drift in {rel}"

    def test_checksums_match_files(self):
        sums = _read_sums(os.path.join(FIXTURES, "SHA256SUMS"))
        assert len(sums) >= 8
        for rel, digest in sums.items():
            assert _digest(os.path.join(FIXTURES, rel)) == digest, rel

    def test_parity_checksums_match_files(self):
        parity = os.path.join(FIXTURES, "parity")
        if not os.path.isdir(parity):
            pytest.fail("fixtures/parity missing; run the exporter")
        sums = _read_sums(os.path.join(parity, "SHA256SUMS"))
        assert set(sums) == {"tiny_model.lgtc", "tiny_model_f32.lgtc",
                             "reference.lgtc"}
        for rel, digest in sums.items():
            assert _digest(os.path.join(parity, rel)) == digest, rel

    def test_golden_explain_payload_schema(self):
        doc = json.load(open(os.path.join(FIXTURES, "golden",
                                          "explain_default.json")))
        assert doc["method"] == "legrad"
        assert doc["model_id"] == "tiny_cls"
        assert doc["layer_range"] == [2, 3]
        assert len(doc["values"]) == 16
        last = json.load(open(os.path.join(FIXTURES, "golden",
                                           "explain_lastlayer.json")))
        assert last["layer_range"] == [3]
        assert last["values"] != doc["values"]  # range change alters payload
