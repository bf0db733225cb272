import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpcneuronet import data as D
from hpcneuronet.errors import ConfigError, SchemaError, UsageError

from oracles import minkowski_mass, random_rotation


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- ingestion ---------------------------------------------------------------------------

def test_header_only_gives_empty_dataset(fixtures):
    d, rep = D.ingest_csv(fixtures / "dielectron_header_only.csv", "dielectron")
    assert len(d) == 0 and rep.skipped == 0 and d.n_features == 16


def test_three_row_fixture_exact_values(fixtures):
    path = fixtures / "dielectron_3.csv"
    d, rep = D.ingest_csv(path, "dielectron")
    assert len(d) == 3 and rep.events == 3 and rep.skipped == 0
    for i, row in enumerate(_rows(path)):
        for j, col in enumerate(d.feature_names):
            assert d.features[i, j] == float(row[col])
        assert d.targets[i] == float(row["M"])
    ev = D.dielectron_events(d)[0]
    assert ev.E1 == d.features[0, 0] and ev.q2 == d.column("Q2")[0]


def test_nan_row_skipped_and_counted(fixtures):
    d, rep = D.ingest_csv(fixtures / "dielectron_nan.csv", "dielectron")
    assert len(d) == 2 and rep.skipped == 1 and rep.skipped_lines == [3]
    assert np.all(np.isfinite(d.features))


def test_missing_column_names_it(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("p,theta,beta,nphe,ein\n1,2,3,4,5\n")
    with pytest.raises(SchemaError, match="eout"):
        D.ingest_csv(p, "dune-pid")


def test_column_map_renames(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("pid,p,theta,beta,nphe,ein,eout\nproton,1,0.5,0.99,0,0,0\n")
    d, _ = D.ingest_csv(p, "dune-pid", column_map={"pid": "id"})
    assert d.targets.tolist() == [3]


def test_unreadable_file_and_unknown_schema(tmp_path):
    with pytest.raises(OSError):
        D.ingest_csv(tmp_path / "missing.csv", "dielectron")
    with pytest.raises(UsageError):
        D.ingest_csv(tmp_path / "missing.csv", "lartpc")


def test_malformed_rows_never_abort(tmp_path):
    p = tmp_path / "junk.csv"
    p.write_text("id,p,theta,beta,nphe,ein,eout\n211,1,2\nxyz,1,1,1,1,1,1\n"
                 "211,abc,1,1,1,1,1\n211,1,1,1,1,1,1\n99,1,1,1,1,1,1\n")
    d, rep = D.ingest_csv(p, "dune-pid")
    assert len(d) == 1 and rep.skipped == 4 and rep.rows_read == 5


def test_dune_and_proton_labels(fixtures):
    d, _ = D.ingest_csv(fixtures / "dune_pid.csv", "dune-pid")
    assert [d.class_names[t] for t in d.targets] == ["pion", "proton", "positron", "kaon"]
    d, _ = D.ingest_csv(fixtures / "proton.csv", "proton")
    assert [d.class_names[t] for t in d.targets] == ["njets<=2", "njets=3", "njets>=5"]


# -- physics --------------------------------------------------------------------------------

def _event(p1, p2, m=0.0):
    def lep(p):
        e, px, py, pz = p
        return [e, px, py, pz, math.hypot(px, py), 0.0, 0.0, 1.0]
    return D.DielectronEvent(*lep(p1), *lep(p2), M=m)


def test_invariant_mass_examples():
    assert D.recompute_invariant_mass(_event((5, 3, 0, 0), (5, -3, 0, 0))) == 10.0
    assert D.recompute_invariant_mass(_event((5, 5, 0, 0), (5, 5, 0, 0))) == 0.0
    # negative radicand is clamped
    assert D.recompute_invariant_mass(_event((1, 5, 0, 0), (1, 5, 0, 0))) == 0.0


def _random_pairs(rng, n):
    m = rng.uniform(0.5, 100, size=(n, 2))
    p = rng.normal(scale=30, size=(n, 2, 3))
    e = np.sqrt(m ** 2 + np.sum(p ** 2, axis=-1))
    return np.concatenate([e[..., None], p], axis=-1)  # [n, 2, 4]


def test_invariant_mass_matches_minkowski_oracle_10000():
    rng = np.random.default_rng(0)
    v = _random_pairs(rng, 10_000)
    got = D.invariant_mass(*v[:, 0].T, *v[:, 1].T)
    ref = np.array([minkowski_mass(a, b) for a, b in v])
    assert np.max(np.abs(got - ref) / ref) <= 1e-9


def test_invariant_mass_rotation_invariant_10000():
    rng = np.random.default_rng(1)
    v = _random_pairs(rng, 10_000)
    base = D.invariant_mass(*v[:, 0].T, *v[:, 1].T)
    rotated = v.copy()
    for i in range(len(v)):
        r = random_rotation(rng)
        rotated[i, :, 1:] = v[i, :, 1:] @ r.T
    got = D.invariant_mass(*rotated[:, 0].T, *rotated[:, 1].T)
    assert np.max(np.abs(got - base) / base) <= 1e-9


def test_validation_fixture_in_range(fixtures):
    d, _ = D.ingest_csv(fixtures / "dielectron_3.csv", "dielectron")
    rep = D.validate_physics(d, "dielectron")
    assert rep.ok and all(v == 0 for v in rep.violations.values())
    for ev in D.dielectron_events(d):
        assert abs(ev.M - D.recompute_invariant_mass(ev)) / ev.M <= 0.01


def test_validation_counts_momentum_outlier(fixtures):
    d, _ = D.ingest_csv(fixtures / "dune_pid.csv", "dune-pid")
    rep = D.validate_physics(d)
    assert rep.violations["momentum_range"] == 1
    assert rep.violations["beta_mode"] == 0
    assert len(d) == 4  # reported, not filtered


def test_validation_counts_corrupted_mass(fixtures):
    d, _ = D.ingest_csv(fixtures / "dielectron_corrupt_m.csv", "dielectron")
    assert D.validate_physics(d).violations["mass_consistency"] == 2


def test_validation_proton_and_schema_mismatch(fixtures):
    d, _ = D.ingest_csv(fixtures / "proton.csv", "proton")
    assert D.validate_physics(d).ok
    with pytest.raises(UsageError):
        D.validate_physics(d, "dielectron")


def test_validation_of_normalized_dataset_uses_raw_values(fixtures):
    d, _ = D.ingest_csv(fixtures / "dielectron_3.csv", "dielectron")
    assert D.validate_physics(D.normalize(d)).ok


# -- transforms -----------------------------------------------------------------------------

def test_normalize_moments_and_round_trip():
    d = D.synth_dataset("blobs", 500, 3)
    n = D.normalize(d)
    assert np.max(np.abs(n.features.mean(axis=0))) <= 1e-9
    assert np.max(np.abs(n.features.std(axis=0) - 1)) <= 1e-6
    assert np.max(np.abs(D.denormalize(n).features - d.features)) <= 1e-9


def test_normalize_constant_feature_and_small_n():
    d = D.Dataset(np.column_stack([np.full(5, 3.0), np.arange(5.0)]), np.zeros(5), ["a", "b"],
                  "regression")
    n = D.normalize(d)
    assert np.array_equal(n.features[:, 0], np.zeros(5))
    with pytest.raises(UsageError):
        D.normalize(d.subset([0]))


def test_split_examples():
    d = D.synth_dataset("blobs", 10, 0)
    tr, te = D.split(d, 0.2, 5)
    assert (len(tr), len(te)) == (8, 2)
    a, b = D.split_indices(10, 0.2, 5), D.split_indices(10, 0.2, 5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(UsageError):
            D.split(d, bad, 0)


@given(st.integers(2, 300), st.floats(0.01, 0.99), st.integers(0, 2**31 - 1))
def test_split_is_partition(n, frac, seed):
    tr, te = D.split_indices(n, frac, seed)
    assert len(te) == math.floor(n * frac)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(n))


# -- synthetic ------------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["blobs", "dielectron-kinematics"])
def test_synth_count_and_determinism(kind):
    a, b = D.synth_dataset(kind, 123, 9), D.synth_dataset(kind, 123, 9)
    assert len(a) == 123
    assert np.array_equal(a.features, b.features) and np.array_equal(a.targets, b.targets)
    assert not np.array_equal(a.features, D.synth_dataset(kind, 123, 10).features)


def test_synth_invalid_params():
    with pytest.raises(ConfigError):
        D.synth_dataset("blobs", 0, 1)
    with pytest.raises(ConfigError):
        D.synth_dataset("blobs", 10, 1, sigma=-1)
    with pytest.raises(ConfigError):
        D.synth_dataset("blobs", 10, 1, colour="red")
    with pytest.raises(ConfigError):
        D.synth_dataset("lartpc", 10, 1)


def test_blobs_nearest_centroid_at_10_sigma():
    d = D.synth_dataset("blobs", 2000, 4, separation=10.0)
    tr, te = D.split(d, 0.5, 4)
    cents = np.stack([tr.features[tr.targets == k].mean(axis=0) for k in range(d.n_classes)])
    pred = np.argmin(((te.features[:, None, :] - cents[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == te.targets) >= 0.99


@given(st.integers(0, 2**31 - 1))
def test_synth_dielectron_target_bounds(seed):
    d = D.synth_dataset("dielectron-kinematics", 200, seed)
    e_sum = d.column("E1") + d.column("E2")
    assert np.all(d.targets >= 0) and np.all(d.targets <= e_sum * (1 + 1e-12))
    assert D.validate_physics(d).ok


def test_dataset_cache_round_trip(tmp_path):
    d = D.normalize(D.synth_dataset("blobs", 50, 2))
    D.save_dataset(d, tmp_path / "d.bin")
    e = D.load_dataset(tmp_path / "d.bin")
    assert e.feature_names == d.feature_names and e.class_names == d.class_names
    assert np.array_equal(e.targets, d.targets)
    assert np.array_equal(e.features, d.features.astype(np.float32))
    assert e.mean is not None


def test_dataset_rejects_nan():
    with pytest.raises(UsageError):
        D.Dataset(np.array([[np.nan]]), np.array([0.0]), ["a"], "regression")
