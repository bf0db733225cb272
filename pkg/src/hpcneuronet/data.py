"""Event datasets: CSV ingestion for the three CERN open-data tables, physics
validation, normalisation, splitting and synthetic desk-scale stand-ins.

Schema table (canonical column names follow the CERN Open Data releases;
``column_map`` renames file columns onto these):

=============  ==============================================  ==============================  ==============
schema         feature columns                                 target                          task
=============  ==============================================  ==============================  ==============
dielectron     E1 px1 py1 pz1 pt1 eta1 phi1 Q1, same for *2    M (GeV)                         regression
dune-pid       p theta beta nphe ein eout                      id (PDG code or particle name)  classification
proton         MR Rsq E1 Px1 Py1 Pz1 E2 Px2 Py2 Pz2            nJets -> {<=2, 3, 4, >=5}       classification
=============  ==============================================  ==============================  ==============

``dielectron`` additionally requires ``Run`` and ``Event``; ``proton``
requires ``Run``, ``Lumi`` and ``Event``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import container
from .errors import ConfigError, SchemaError, UsageError


@dataclass(frozen=True)
class Schema:
    name: str
    id_columns: tuple[str, ...]
    feature_columns: tuple[str, ...]
    target_column: str
    task: str
    class_names: tuple[str, ...] = ()

    @property
    def required(self) -> tuple[str, ...]:
        return self.id_columns + self.feature_columns + (self.target_column,)


_LEPTON = ("E", "px", "py", "pz", "pt", "eta", "phi", "Q")
DUNE_CLASSES = ("positron", "pion", "kaon", "proton")
_DUNE_PDG = {-11: 0, 211: 1, 321: 2, 2212: 3}
PROTON_CLASSES = ("njets<=2", "njets=3", "njets=4", "njets>=5")

SCHEMAS: dict[str, Schema] = {
    "dielectron": Schema(
        "dielectron", ("Run", "Event"),
        tuple(f"{c}1" for c in _LEPTON) + tuple(f"{c}2" for c in _LEPTON),
        "M", "regression"),
    "dune-pid": Schema(
        "dune-pid", (), ("p", "theta", "beta", "nphe", "ein", "eout"), "id",
        "classification", DUNE_CLASSES),
    "proton": Schema(
        "proton", ("Run", "Lumi", "Event"),
        ("MR", "Rsq", "E1", "Px1", "Py1", "Pz1", "E2", "Px2", "Py2", "Pz2"), "nJets",
        "classification", PROTON_CLASSES),
}


@dataclass(frozen=True)
class DielectronEvent:
    E1: float
    px1: float
    py1: float
    pz1: float
    pt1: float
    eta1: float
    phi1: float
    q1: float
    E2: float
    px2: float
    py2: float
    pz2: float
    pt2: float
    eta2: float
    phi2: float
    q2: float
    M: float


@dataclass(frozen=True)
class DunePidEvent:
    momentum: float
    theta: float
    beta: float
    n_photoelectrons: float
    energy_inner: float
    energy_outer: float
    label: str


@dataclass(frozen=True)
class ProtonCollisionEvent:
    run: int
    lumi: int
    event: int
    MR: float
    Rsq: float
    megajet1: tuple[float, float, float, float]
    megajet2: tuple[float, float, float, float]
    n_jets_pt40: int


@dataclass
class Dataset:
    features: np.ndarray  # [n, f]
    targets: np.ndarray  # [n] int labels or float values
    feature_names: list[str]
    task: str
    schema: str | None = None
    class_names: list[str] = field(default_factory=list)
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.size == 0:
            self.features = self.features.reshape(0, len(self.feature_names))
        if self.task == "classification":
            self.targets = np.asarray(self.targets, dtype=np.int64)
        else:
            self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.targets.shape[0]:
            raise UsageError(f"features {self.features.shape} and targets {self.targets.shape} disagree")
        if self.features.size and not np.all(np.isfinite(self.features)):
            raise UsageError("dataset features contain NaN/Inf")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1] if self.features.ndim == 2 else len(self.feature_names)

    @property
    def n_classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        return int(self.targets.max()) + 1 if len(self) else 0

    def subset(self, idx) -> Dataset:
        return replace(self, features=self.features[idx], targets=self.targets[idx])

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_names.index(name)]


@dataclass
class IngestReport:
    path: str
    schema: str
    rows_read: int = 0
    events: int = 0
    skipped: int = 0
    skipped_lines: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ValidationReport:
    schema: str
    n_events: int
    violations: dict[str, int]
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def to_dict(self) -> dict:
        return asdict(self)


# -- ingestion ----------------------------------------------------------------------------

def _encode_label(schema: Schema, raw: str) -> int:
    if schema.name == "dune-pid":
        raw = raw.strip()
        if raw.lower() in DUNE_CLASSES:
            return DUNE_CLASSES.index(raw.lower())
        return _DUNE_PDG[int(float(raw))]
    if schema.name == "proton":
        n = float(raw)
        if not math.isfinite(n) or n < 0 or n != int(n):
            raise ValueError(raw)
        return int(min(max(n, 2), 5)) - 2
    raise ValueError(schema.name)


def ingest_csv(path, schema: str, column_map: Mapping[str, str] | None = None,
               max_skipped_lines: int = 100) -> tuple[Dataset, IngestReport]:
    """Parse a CSV file against a named schema.

    Rows with missing, non-numeric or non-finite required fields are skipped
    and counted; ingestion never aborts on a malformed row.
    """
    if schema not in SCHEMAS:
        raise UsageError(f"unknown schema {schema!r}; choose from {sorted(SCHEMAS)}")
    sc = SCHEMAS[schema]
    report = IngestReport(str(path), schema)
    rename = dict(column_map or {})
    feats, targets = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        header = [rename.get(h.strip(), h.strip()) for h in header]
        for col in sc.required:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        pos = {c: header.index(c) for c in sc.required}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            report.rows_read += 1
            try:
                vals = [float(row[pos[c]]) for c in sc.feature_columns + sc.id_columns]
                if not all(math.isfinite(v) for v in vals):
                    raise ValueError("non-finite")
                raw_t = row[pos[sc.target_column]]
                if sc.task == "regression":
                    t = float(raw_t)
                    if not math.isfinite(t):
                        raise ValueError("non-finite target")
                else:
                    t = _encode_label(sc, raw_t)
            except (ValueError, IndexError, KeyError):
                report.skipped += 1
                if len(report.skipped_lines) < max_skipped_lines:
                    report.skipped_lines.append(lineno)
                continue
            feats.append(vals[:len(sc.feature_columns)])
            targets.append(t)
    report.events = len(targets)
    ds = Dataset(np.array(feats, dtype=np.float64).reshape(len(targets), len(sc.feature_columns)),
                 np.array(targets), list(sc.feature_columns), sc.task, sc.name,
                 list(sc.class_names))
    return ds, report


# -- physics -------------------------------------------------------------------------------

def invariant_mass(e1, px1, py1, pz1, e2, px2, py2, pz2):
    """Two-body invariant mass; a negative radicand is clamped to zero."""
    e, px, py, pz = (np.add(e1, e2), np.add(px1, px2), np.add(py1, py2), np.add(pz1, pz2))
    m2 = e * e - px * px - py * py - pz * pz
    return np.sqrt(np.maximum(m2, 0.0))


def recompute_invariant_mass(e: DielectronEvent) -> float:
    return float(invariant_mass(e.E1, e.px1, e.py1, e.pz1, e.E2, e.px2, e.py2, e.pz2))


def dielectron_events(d: Dataset) -> list[DielectronEvent]:
    cols = [d.column(c) for c in SCHEMAS["dielectron"].feature_columns]
    return [DielectronEvent(*(float(c[i]) for c in cols), M=float(d.targets[i]))
            for i in range(len(d))]


def _radicand(d: Dataset) -> np.ndarray:
    c = d.column
    e = c("E1") + c("E2")
    px, py, pz = c("px1") + c("px2"), c("py1") + c("py2"), c("pz1") + c("pz2")
    return e * e - px * px - py * py - pz * pz


def validate_physics(d: Dataset, schema: str | None = None) -> ValidationReport:
    """Count rows falling outside the published dataset ranges. Reports, never filters."""
    name = schema or d.schema
    if name not in SCHEMAS:
        raise UsageError(f"unknown schema {name!r}")
    if d.schema is not None and d.schema != name:
        raise UsageError(f"dataset schema {d.schema!r} does not match {name!r}")
    if d.mean is not None:
        d = denormalize(d)
    v: dict[str, int] = {}
    details: dict = {}
    if name == "dielectron":
        m = d.targets
        c = d.column
        m_re = invariant_mass(c("E1"), c("px1"), c("py1"), c("pz1"),
                              c("E2"), c("px2"), c("py2"), c("pz2"))
        v["mass_range"] = int(np.sum((m < 2.0) | (m > 110.0)))
        rel = np.abs(m - m_re) / np.maximum(np.abs(m), 1e-12)
        v["mass_consistency"] = int(np.sum(rel > 0.01))
        v["negative_radicand"] = int(np.sum(_radicand(d) < 0))
        v["energy_positive"] = int(np.sum((c("E1") <= 0) | (c("E2") <= 0)))
        v["pt_nonnegative"] = int(np.sum((c("pt1") < 0) | (c("pt2") < 0)))
        details["max_mass_rel_dev"] = float(rel.max()) if len(d) else 0.0
    elif name == "dune-pid":
        p, beta = d.column("p"), d.column("beta")
        v["momentum_range"] = int(np.sum((p < 0.21) | (p > 5.29)))
        v["theta_nonnegative"] = int(np.sum(d.column("theta") < 0))
        v["beta_positive"] = int(np.sum(beta <= 0))
        mode_ok = True
        if len(d):
            # 0.01-wide buckets aligned on [0.99, 1.00), [1.00, 1.01)
            buckets = np.floor(np.round(beta * 100.0, 9)).astype(np.int64)
            vals, counts = np.unique(buckets, return_counts=True)
            mode = int(vals[np.argmax(counts)])
            details["beta_mode_bucket"] = [mode / 100.0, (mode + 1) / 100.0]
            mode_ok = mode in (99, 100)
        v["beta_mode"] = 0 if mode_ok else 1
    else:
        for col in ("MR", "Rsq"):
            v[f"{col}_nonnegative"] = int(np.sum(d.column(col) < 0))
        for col in ("E1", "E2"):
            v[f"{col}_nonnegative"] = int(np.sum(d.column(col) < 0))
        v["njets_nonnegative"] = int(np.sum(d.targets < 0))
    return ValidationReport(name, len(d), v, details)


# -- transforms -----------------------------------------------------------------------------

def normalize(d: Dataset) -> Dataset:
    if len(d) < 2:
        raise UsageError("normalize needs at least two events")
    if d.mean is not None:
        d = denormalize(d)
    mean = d.features.mean(axis=0)
    std = np.maximum(d.features.std(axis=0), 1e-8)
    return replace(d, features=(d.features - mean) / std, mean=mean, std=std)


def apply_normalization(d: Dataset, mean: np.ndarray, std: np.ndarray) -> Dataset:
    if d.mean is not None:
        d = denormalize(d)
    return replace(d, features=(d.features - mean) / std, mean=mean, std=std)


def denormalize(d: Dataset) -> Dataset:
    if d.mean is None:
        return d
    return replace(d, features=d.features * d.std + d.mean, mean=None, std=None)


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise UsageError(f"test_fraction must be in (0, 1), got {test_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(math.floor(n * test_fraction))
    return perm[n_test:], perm[:n_test]


def split(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(len(d), test_fraction, seed)
    return d.subset(train_idx), d.subset(test_idx)


# -- synthetic data -------------------------------------------------------------------------

def _blob_centers(k: int, f: int, separation: float, sigma: float, rng) -> np.ndarray:
    if k <= f:
        # one axis per class: every pair of centres is exactly separation*sigma apart
        centers = np.zeros((k, f))
        centers[np.arange(k), np.arange(k)] = separation * sigma / math.sqrt(2.0)
        return centers
    centers = rng.normal(size=(k, f))
    dmin = min(np.linalg.norm(centers[i] - centers[j]) for i in range(k) for j in range(i))
    return centers * (separation * sigma / dmin)


def _synth_blobs(n, rng, n_classes=4, n_features=6, separation=5.0, sigma=1.0) -> Dataset:
    if n_classes < 2 or n_features < 1 or separation < 0 or sigma <= 0:
        raise ConfigError("blobs need n_classes>=2, n_features>=1, separation>=0, sigma>0")
    centers = _blob_centers(n_classes, n_features, separation, sigma, rng)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    x = centers[labels] + rng.normal(scale=sigma, size=(n, n_features))
    return Dataset(x, labels, [f"x{i}" for i in range(n_features)], "classification",
                   None, [f"class{i}" for i in range(n_classes)])


def _lepton_columns(p4: np.ndarray, charge: np.ndarray) -> list[np.ndarray]:
    e, px, py, pz = p4.T
    pt = np.hypot(px, py)
    return [e, px, py, pz, pt, np.arcsinh(pz / np.maximum(pt, 1e-12)), np.arctan2(py, px), charge]


def _synth_dielectron(n, rng, mass_min=2.0, mass_max=110.0, momentum_scale=10.0) -> Dataset:
    """Two massless electrons from an isotropic decay of a boosted parent.

    Parent masses are log-uniform on [mass_min, mass_max] and parent momenta
    exponential with mean ``momentum_scale`` GeV in a random direction. Columns
    follow the ``dielectron`` schema; the target is the exact pair mass.
    """
    if not 0 < mass_min < mass_max or momentum_scale <= 0:
        raise ConfigError("need 0 < mass_min < mass_max and momentum_scale > 0")
    mass = np.exp(rng.uniform(math.log(mass_min), math.log(mass_max), size=n))
    cos_t = rng.uniform(-1, 1, size=n)
    phi = rng.uniform(0, 2 * math.pi, size=n)
    sin_t = np.sqrt(1 - cos_t ** 2)
    k = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1) * (mass / 2)[:, None]
    pmag = rng.exponential(momentum_scale, size=n)
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    e_parent = np.sqrt(mass ** 2 + pmag ** 2)
    beta = u * (pmag / e_parent)[:, None]
    b2 = np.sum(beta ** 2, axis=1)
    gamma = 1.0 / np.sqrt(1.0 - b2)
    safe_b2 = np.where(b2 > 0, b2, 1.0)
    lab = []
    for sign in (1.0, -1.0):
        e, p = mass / 2, sign * k
        bp = np.sum(beta * p, axis=1)
        p_lab = p + (((gamma - 1) * bp / safe_b2) + gamma * e)[:, None] * beta
        lab.append(np.concatenate([(gamma * (e + bp))[:, None], p_lab], axis=1))
    charge = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    cols = _lepton_columns(lab[0], charge) + _lepton_columns(lab[1], -charge)
    x = np.stack(cols, axis=1)
    target = invariant_mass(*lab[0].T, *lab[1].T)
    return Dataset(x, target, list(SCHEMAS["dielectron"].feature_columns), "regression",
                   "dielectron")


def synth_dataset(kind: str, n: int, seed: int, **params) -> Dataset:
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    try:
        if kind == "blobs":
            return _synth_blobs(n, rng, **params)
        if kind == "dielectron-kinematics":
            return _synth_dielectron(n, rng, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind}: {exc}") from None
    raise ConfigError(f"unknown synthetic dataset kind {kind!r}")


# -- cache --------------------------------------------------------------------------------

def save_dataset(d: Dataset, path) -> None:
    meta = {"format": "hpcneuronet-dataset", "feature_names": d.feature_names, "task": d.task,
            "schema": d.schema, "class_names": d.class_names}
    arrays = {"features": d.features, "targets": d.targets}
    if d.mean is not None:
        arrays["mean"], arrays["std"] = d.mean, d.std
    container.write(path, meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arrays = container.read(path)
    if meta.get("format") != "hpcneuronet-dataset":
        raise UsageError(f"{path} does not hold a dataset")
    targets = arrays["targets"]
    if meta["task"] == "classification":
        targets = np.rint(targets).astype(np.int64)
    return Dataset(arrays["features"].astype(np.float64), targets, list(meta["feature_names"]),
                   meta["task"], meta.get("schema"), list(meta.get("class_names") or []),
                   arrays["mean"].astype(np.float64) if "mean" in arrays else None,
                   arrays["std"].astype(np.float64) if "std" in arrays else None)
