import json

import numpy as np
import pytest

from soilscan.dataset import (
    PB_MASS_FRACTION,
    SPIKING_DESIGN,
    Dataset,
    DesignRow,
    SimSetup,
    SpikingDesign,
    generate_controlled_set,
    generate_field_like_set,
    labeled_raw,
    load_dataset,
    manifest_from_table,
    salt_regression,
    save_dataset,
)
from soilscan.errors import DomainError, LoadError
from soilscan.learning.validation import encode_labels
from soilscan.propagation import NoiseModel

SMALL = SpikingDesign((DesignRow(1, (0, 400), (0, 1000)),))


@pytest.fixture(scope="module")
def small():
    return generate_controlled_set(SMALL, SimSetup(noise=NoiseModel(0.2)), seed=3)


class TestDesign:
    def test_table_expansion(self):
        rows = SPIKING_DESIGN.expand()
        assert len(rows) == 20
        assert [r[0] for r in rows] == list(range(1, 12)) + list(range(15, 24))
        assert {(r[1], r[2]) for r in rows[-9:]} == {(n, p) for n in (100, 400, 2000) for p in (100, 400, 2000)}

    def test_rejects_negative_and_overlap(self):
        with pytest.raises(DomainError):
            DesignRow(1, (-1,), (0,))
        with pytest.raises(DomainError):
            SpikingDesign((DesignRow(1, (0, 1), (0,)), DesignRow(2, (0,), (0,)))).expand()

    def test_controlled_set_layout(self):
        ds = generate_controlled_set(seed=0)
        assert len(ds) == 22
        assert len(ds.spiked()) == 20
        assert all(r.moisture == 0.2 for r in ds.spiked().records)
        assert ds["B0"].moisture == 0.0 and ds["B1"].moisture == 0.2

    def test_zero_row_equals_wet_baseline(self):
        ds = generate_controlled_set(seed=0)
        for band in ("low", "high"):
            np.testing.assert_array_equal(ds["S1"].spectra[band].power_dbm, ds["B1"].spectra[band].power_dbm)

    def test_label_arithmetic(self):
        ds = generate_controlled_set(seed=0).spiked()
        designed = [p for _, _, p, _ in SPIKING_DESIGN.expand()]
        assert encode_labels([r.pb_ppm for r in ds.records]).tolist() == [int(p >= 200) for p in designed]

    def test_deterministic(self, small):
        again = generate_controlled_set(SMALL, SimSetup(noise=NoiseModel(0.2)), seed=3)
        other = generate_controlled_set(SMALL, SimSetup(noise=NoiseModel(0.2)), seed=4)
        assert small.content_hash() == again.content_hash() != other.content_hash()


class TestManifest:
    def test_round_trip(self, small, tmp_path):
        m = save_dataset(small, tmp_path)
        assert load_dataset(m).content_hash() == small.content_hash()

    def test_row_order_invariance(self, small, tmp_path):
        m = save_dataset(small, tmp_path)
        doc = json.loads(m.read_text())
        doc["samples"].reverse()
        m.write_text(json.dumps(doc))
        assert load_dataset(m).content_hash() == small.content_hash()

    def test_empty(self, tmp_path):
        m = tmp_path / "manifest.json"
        m.write_text(json.dumps({"schema_version": 1, "step_mhz": 0.5, "samples": []}))
        assert len(load_dataset(m)) == 0

    def test_missing_file_names_path(self, small, tmp_path):
        m = save_dataset(small, tmp_path)
        gone = tmp_path / "spectra" / "S2_high.csv"
        gone.unlink()
        with pytest.raises(LoadError, match="S2_high.csv"):
            load_dataset(m)

    def test_duplicate_id(self, small, tmp_path):
        m = save_dataset(small, tmp_path)
        doc = json.loads(m.read_text())
        doc["samples"].append(doc["samples"][0])
        m.write_text(json.dumps(doc))
        with pytest.raises(LoadError, match="duplicate"):
            load_dataset(m)

    def test_step_mismatch(self, small, tmp_path):
        m = save_dataset(small, tmp_path)
        doc = json.loads(m.read_text())
        doc["step_mhz"] = 1.0
        m.write_text(json.dumps(doc))
        with pytest.raises(LoadError, match="step"):
            load_dataset(m)

    def test_bad_schema_and_missing_manifest(self, tmp_path):
        m = tmp_path / "manifest.json"
        m.write_text(json.dumps({"schema_version": 99, "samples": []}))
        with pytest.raises(LoadError):
            load_dataset(m)
        with pytest.raises(LoadError):
            load_dataset(tmp_path / "absent.json")

    def test_duplicate_records_rejected(self, small):
        with pytest.raises(DomainError):
            Dataset(small.records + small.records[:1], small.step_mhz)


class TestAdapter:
    def test_table_and_two_column_spectra(self, small, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        lines = ["sample,Pb (ppm),pH"]
        for i, r in enumerate(small.records):
            lines.append(f"{r.id},{r.pb_ppm},{5.0 + i}")
            for band, s in r.spectra.items():
                body = "\n".join(f"{f!r},{p!r}" for f, p in zip(s.freqs_mhz.tolist(), s.power_dbm.tolist()))
                (raw / f"{r.id}_{band}.csv").write_text("freq,power\n" + body + "\n")
        (tmp_path / "props.csv").write_text("\n".join(lines) + "\n")
        m = manifest_from_table(tmp_path / "props.csv", raw, tmp_path / "out",
                                columns={"id": "sample", "pb_ppm": "Pb (ppm)"})
        ds = load_dataset(m)
        assert ds.ids == small.ids
        assert ds["S2"].metadata["pH"] == 5.0 + small.ids.index("S2")
        np.testing.assert_array_equal(ds["S3"].spectra["low"].power_dbm, small["S3"].spectra["low"].power_dbm)

    def test_missing_spectrum(self, tmp_path):
        (tmp_path / "props.csv").write_text("id,pb_ppm\nX,10\n")
        with pytest.raises(LoadError, match="X_low.csv"):
            manifest_from_table(tmp_path / "props.csv", tmp_path, tmp_path / "out")


class TestFieldLike:
    def test_counts_and_ranges(self):
        ds = generate_field_like_set(seed=1)
        pb = np.array([r.pb_ppm for r in ds.records])
        assert len(ds) == 22
        assert encode_labels(pb).sum() == 10
        assert pb.min() >= 36 and pb.max() <= 1550
        assert all(r.metadata["synthetic"] for r in ds.records)
        assert all(0.01 <= r.moisture <= 0.40 for r in ds.records)

    def test_separable_lift(self):
        plain = generate_field_like_set(seed=2)
        lifted = generate_field_like_set(seed=2, separable=True)
        for a, b in zip(plain.records, lifted.records):
            diff = b.spectra["low"].power_dbm - a.spectra["low"].power_dbm
            np.testing.assert_allclose(diff, 10.0 if a.pb_ppm >= 200 else 0.0, atol=1e-9)

    def test_labeled_raw(self):
        ds = generate_field_like_set(seed=1)
        data, layout = labeled_raw(ds)
        assert data.features.shape == (22, 601 + 401)
        assert layout.width == 1002
        assert data.labels.sum() == 10


def test_salt_regression_selectivity():
    r2 = salt_regression(generate_controlled_set(seed=0))
    assert r2["Pb(NO3)2"]["Diff800"] >= 0.9
    assert r2["NaCl"]["Diff2300"] >= 0.9
    assert r2["Pb(NO3)2"]["Diff2300"] <= 0.2


def test_mass_fraction():
    assert PB_MASS_FRACTION == pytest.approx(0.6256, abs=1e-4)
