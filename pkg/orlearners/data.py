"""
Dataset containers, synthetic oracle generators and CSV ingestion.

Datasets are immutable: arrays are copied and marked read-only on
construction, so they can be shared between concurrent readers.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from orlearners.errors import (
    ConfigurationError,
    DataValidationError,
    LengthMismatch,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
)
from orlearners.logging_config import get_logger
from orlearners.random_streams import stream

logger = get_logger(__name__)

# Keeps oracle propensities strictly inside (0, 1)
_PI_EPS = 1e-12

# Approximate mean pixel intensity of MNIST digits 0..9 (pixels scaled to [0, 1])
CLASS_MEAN_INTENSITY = np.array([0.173, 0.076, 0.149, 0.142, 0.121, 0.129, 0.137, 0.115, 0.150, 0.123])
HCMNIST_CLIP = 1.4

ORACLE_COLUMNS = ("mu0", "mu1", "pi1", "y0", "y1")


class DgpKind(str, Enum):
    KALLUS_SYNTHETIC = "kallus_synthetic"
    HCMNIST_LIKE = "hcmnist_like"


class DgpSpec(BaseModel):
    """Which synthetic process to sample, how many rows, and from which seed."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: DgpKind = DgpKind.KALLUS_SYNTHETIC
    n: int = Field(ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    gamma_star: float = Field(default=math.e, ge=1.0)
    image_dim: int = Field(default=784, ge=1)
    blob_std: float = Field(default=1.0, gt=0.0)
    # Randomised treatment A ~ Bern(p), independent of X (two-covariate benchmark only)
    constant_propensity: float | None = Field(default=None, gt=0.0, lt=1.0)


class CsvSchema(BaseModel):
    model_config = ConfigDict(frozen=True)

    covariate_prefix: str = "x_"
    treatment: str = "a"
    outcome: str = "y"


def _readonly(values: np.ndarray, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def _first_nonfinite(values: np.ndarray) -> int | None:
    bad = np.flatnonzero(~np.isfinite(values))
    return int(bad[0]) if bad.size else None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observational data: covariates X (n×d_x), binary treatment A, outcome Y."""

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        A = np.asarray(self.A)
        Y = np.asarray(self.Y, dtype=float)

        n = X.shape[0]
        if n < 1:
            raise DataValidationError("Dataset must contain at least one row")
        if A.shape != (n,) or Y.shape != (n,):
            raise LengthMismatch(f"X has {n} rows but A has shape {A.shape} and Y has shape {Y.shape}")

        for j in range(X.shape[1]):
            row = _first_nonfinite(X[:, j])
            if row is not None:
                raise NonFiniteValue(row + 1, f"x_{j}")
        row = _first_nonfinite(np.asarray(A, dtype=float))
        if row is not None:
            raise NonFiniteValue(row + 1, "a")
        bad = np.flatnonzero((A != 0) & (A != 1))
        if bad.size:
            raise NonBinaryTreatment(int(bad[0]) + 1, A[bad[0]].item())
        row = _first_nonfinite(Y)
        if row is not None:
            raise NonFiniteValue(row + 1, "y")

        object.__setattr__(self, "X", _readonly(X, np.float64))
        object.__setattr__(self, "A", _readonly(A, np.int64))
        object.__setattr__(self, "Y", _readonly(Y, np.float64))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def base(self) -> "Dataset":
        return self

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.X[index], self.A[index], self.Y[index])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=[f"x_{j}" for j in range(self.d_x)])
        frame["a"] = self.A
        frame["y"] = self.Y
        return frame


@dataclass(frozen=True, eq=False)
class OracleDataset:
    """A Dataset that also carries ground-truth nuisances, potential outcomes and CATE."""

    base: Dataset
    mu0: np.ndarray
    mu1: np.ndarray
    pi1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    tau: np.ndarray = field(init=False)
    dgp: DgpSpec | None = None
    # Diagnostic latent columns (e.g. phi and label of the image surrogate)
    latents: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = self.base.n
        columns = {}
        for name in ORACLE_COLUMNS:
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != (n,):
                raise LengthMismatch(f"Oracle column '{name}' has shape {values.shape}, expected ({n},)")
            row = _first_nonfinite(values)
            if row is not None:
                raise NonFiniteValue(row + 1, name)
            columns[name] = values

        bad = np.flatnonzero((columns["pi1"] <= 0.0) | (columns["pi1"] >= 1.0))
        if bad.size:
            raise DataValidationError(f"Oracle propensity must lie in (0, 1); row {bad[0] + 1} has {columns['pi1'][bad[0]]}")

        A = self.base.A
        factual = np.where(A == 1, columns["y1"], columns["y0"])
        bad = np.flatnonzero(~np.isclose(factual, self.base.Y, rtol=0.0, atol=1e-9))
        if bad.size:
            raise DataValidationError(f"Consistency Y = A*y1 + (1-A)*y0 violated in row {bad[0] + 1}")

        for name, values in columns.items():
            object.__setattr__(self, name, _readonly(values, np.float64))
        object.__setattr__(self, "tau", _readonly(columns["mu1"] - columns["mu0"], np.float64))
        object.__setattr__(self, "latents", {k: _readonly(v, np.float64) for k, v in self.latents.items()})

    @property
    def X(self) -> np.ndarray:
        return self.base.X

    @property
    def A(self) -> np.ndarray:
        return self.base.A

    @property
    def Y(self) -> np.ndarray:
        return self.base.Y

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def d_x(self) -> int:
        return self.base.d_x

    def subset(self, index: np.ndarray) -> "OracleDataset":
        return OracleDataset(
            base=self.base.subset(index),
            mu0=self.mu0[index],
            mu1=self.mu1[index],
            pi1=self.pi1[index],
            y0=self.y0[index],
            y1=self.y1[index],
            dgp=self.dgp,
            latents={k: v[index] for k, v in self.latents.items()},
        )

    def to_frame(self) -> pd.DataFrame:
        frame = self.base.to_frame()
        for name in ORACLE_COLUMNS:
            frame[name] = getattr(self, name)
        frame["tau"] = self.tau
        return frame


# ---------------------------------------------------------------------------
# Synthetic benchmark with the confounder observed as the second covariate
# ---------------------------------------------------------------------------

def kallus_oracle(
    X: np.ndarray, constant_propensity: float | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form (mu0, mu1, pi1) of the synthetic benchmark at covariates X (n×2)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise DataValidationError(f"Synthetic benchmark covariates must be n×2, got shape {X.shape}")
    x1, x2 = X[:, 0], X[:, 1]
    shared = -2.0 * x2 * (1.0 + 0.5 * x1)
    mu1 = x1 + 1.0 - 2.0 * np.sin(2.0 * x1 + x2) + shared
    mu0 = -x1 - 1.0 - 2.0 * np.sin(-2.0 * x1 + x2) + shared
    if constant_propensity is None:
        pi1 = np.clip(expit(0.75 * x1 - x2 + 0.5), _PI_EPS, 1.0 - _PI_EPS)
    else:
        pi1 = np.full(X.shape[0], constant_propensity)
    return mu0, mu1, pi1


def generate_kallus_synthetic(spec: DgpSpec, stream_label: str = "train") -> OracleDataset:
    if spec.kind != DgpKind.KALLUS_SYNTHETIC:
        raise ConfigurationError(f"Expected a {DgpKind.KALLUS_SYNTHETIC.value} spec, got {spec.kind.value}")

    rng = stream(spec.seed, spec.kind.value, stream_label)
    n = spec.n
    x1 = rng.uniform(-2.0, 2.0, size=n)
    x2 = rng.normal(0.0, 1.0, size=n)
    treat_draw = rng.random(size=n)
    noise = rng.normal(0.0, 1.0, size=(2, n))

    X = np.column_stack([x1, x2])
    mu0, mu1, pi1 = kallus_oracle(X, spec.constant_propensity)
    A = (treat_draw < pi1).astype(np.int64)
    y0 = mu0 + noise[0]
    y1 = mu1 + noise[1]
    Y = np.where(A == 1, y1, y0)

    logger.debug(f"Generated synthetic benchmark: n={n}, treated share={A.mean():.3f}")
    return OracleDataset(base=Dataset(X, A, Y), mu0=mu0, mu1=mu1, pi1=pi1, y0=y0, y1=y1, dgp=spec)


# ---------------------------------------------------------------------------
# HC-MNIST-like benchmark with a Gaussian image surrogate
# ---------------------------------------------------------------------------

def hcmnist_phi(mean_intensity: np.ndarray, label: np.ndarray, blob_std: float, image_dim: int) -> np.ndarray:
    """Compress an image into one coordinate: standardise per class, clip, rescale into [Min_c, Max_c]."""
    class_mean = CLASS_MEAN_INTENSITY[label]
    class_std = blob_std / math.sqrt(image_dim)
    z = np.clip((mean_intensity - class_mean) / class_std, -HCMNIST_CLIP, HCMNIST_CLIP)
    lower = -2.0 + 0.4 * label
    upper = -2.0 + 0.4 * (label + 1)
    return (z + HCMNIST_CLIP) * (upper - lower) / (2.0 * HCMNIST_CLIP) + lower


def hcmnist_alpha_beta(phi: np.ndarray, gamma_star: float) -> tuple[np.ndarray, np.ndarray]:
    s = expit(0.75 * np.asarray(phi, dtype=float) + 0.5)
    alpha = 1.0 / (gamma_star * s) + 1.0 - 1.0 / gamma_star
    beta = gamma_star / s + 1.0 - gamma_star
    return alpha, beta


def hcmnist_propensity(phi: np.ndarray, u: np.ndarray, gamma_star: float) -> np.ndarray:
    alpha, beta = hcmnist_alpha_beta(phi, gamma_star)
    return u / alpha + (1.0 - u) / beta


def hcmnist_outcome_means(phi: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    def mean(a: int) -> np.ndarray:
        sign = 2 * a - 1
        return sign * phi + sign - 2.0 * np.sin(2.0 * sign * phi) - 2.0 * (2.0 * u - 1.0) * (1.0 + 0.5 * phi)

    return mean(0), mean(1)


def generate_hcmnist_like(spec: DgpSpec, stream_label: str = "train") -> OracleDataset:
    if spec.kind != DgpKind.HCMNIST_LIKE:
        raise ConfigurationError(f"Expected a {DgpKind.HCMNIST_LIKE.value} spec, got {spec.kind.value}")

    rng = stream(spec.seed, spec.kind.value, stream_label)
    n, d = spec.n, spec.image_dim
    label = rng.integers(0, 10, size=n)
    pixels = rng.normal(CLASS_MEAN_INTENSITY[label][:, None], spec.blob_std, size=(n, d))
    u = rng.integers(0, 2, size=n).astype(float)
    treat_draw = rng.random(size=n)
    noise = rng.normal(0.0, 1.0, size=(2, n))

    phi = hcmnist_phi(pixels.mean(axis=1), label, spec.blob_std, d)
    pi1 = np.clip(hcmnist_propensity(phi, u, spec.gamma_star), _PI_EPS, 1.0 - _PI_EPS)
    mu0, mu1 = hcmnist_outcome_means(phi, u)
    A = (treat_draw < pi1).astype(np.int64)
    y0 = mu0 + noise[0]
    y1 = mu1 + noise[1]
    Y = np.where(A == 1, y1, y0)

    X = np.column_stack([pixels, u])
    logger.debug(f"Generated image-surrogate benchmark: n={n}, d_x={X.shape[1]}, treated share={A.mean():.3f}")
    return OracleDataset(
        base=Dataset(X, A, Y),
        mu0=mu0, mu1=mu1, pi1=pi1, y0=y0, y1=y1,
        dgp=spec,
        latents={"phi": phi, "label": label.astype(float)},
    )


_GENERATORS = {
    DgpKind.KALLUS_SYNTHETIC: generate_kallus_synthetic,
    DgpKind.HCMNIST_LIKE: generate_hcmnist_like,
}


def generate(spec: DgpSpec, stream_label: str = "train") -> OracleDataset:
    return _GENERATORS[spec.kind](spec, stream_label)


def generate_split(spec: DgpSpec, n_test: int) -> tuple[OracleDataset, OracleDataset]:
    """Train set of size spec.n and a disjoint test set of size n_test from an independent stream."""
    train = generate(spec, "train")
    test = generate(spec.model_copy(update={"n": n_test}), "test")
    return train, test


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _covariate_columns(columns: list[str], prefix: str) -> list[str]:
    indices = sorted(
        int(name[len(prefix):]) for name in columns
        if name.startswith(prefix) and name[len(prefix):].isdigit()
    )
    if not indices:
        raise MissingColumn(f"{prefix}0")
    for expected, found in enumerate(indices):
        if expected != found:
            raise MissingColumn(f"{prefix}{expected}")
    return [f"{prefix}{j}" for j in indices]


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema()) -> Dataset | OracleDataset:
    """
    Read a UTF-8, comma-separated file with a header.

    Returns an OracleDataset when every oracle column is present (tau is
    always recomputed as mu1 - mu0), otherwise a plain Dataset. Row order
    is preserved; error row numbers count data rows from 1.
    """
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"CSV file not found: {path}")

    raw = pd.read_csv(path, encoding="utf-8", sep=",", decimal=".", dtype=str, keep_default_na=False)
    covariates = _covariate_columns(list(raw.columns), schema.covariate_prefix)
    for column in (schema.treatment, schema.outcome):
        if column not in raw.columns:
            raise MissingColumn(column)

    has_oracle = all(column in raw.columns for column in ORACLE_COLUMNS)
    used = covariates + [schema.treatment, schema.outcome] + (list(ORACLE_COLUMNS) if has_oracle else [])
    numeric = raw[used].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))

    for column in used:
        row = _first_nonfinite(numeric[column].to_numpy(dtype=float))
        if row is not None:
            raise NonFiniteValue(row + 1, column)

    treatment = numeric[schema.treatment].to_numpy(dtype=float)
    bad = np.flatnonzero((treatment != 0.0) & (treatment != 1.0))
    if bad.size:
        raise NonBinaryTreatment(int(bad[0]) + 1, raw[schema.treatment].iloc[bad[0]])

    base = Dataset(
        numeric[covariates].to_numpy(dtype=float),
        treatment.astype(np.int64),
        numeric[schema.outcome].to_numpy(dtype=float),
    )
    logger.info(f"Loaded {path}: n={base.n}, d_x={base.d_x}, oracle={'yes' if has_oracle else 'no'}")
    if not has_oracle:
        return base
    return OracleDataset(base=base, **{name: numeric[name].to_numpy(dtype=float) for name in ORACLE_COLUMNS})


def read_covariates(source, prefix: str = "x_") -> np.ndarray:
    """Covariate matrix from a CSV path or file-like object; other columns are ignored."""
    try:
        raw = pd.read_csv(source, encoding="utf-8", sep=",", dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataValidationError(f"Could not parse CSV: {e}") from e
    if raw.empty:
        raise DataValidationError("CSV has no data rows")
    covariates = _covariate_columns(list(raw.columns), prefix)
    numeric = raw[covariates].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    for column in covariates:
        row = _first_nonfinite(numeric[column].to_numpy(dtype=float))
        if row is not None:
            raise NonFiniteValue(row + 1, column)
    return numeric.to_numpy(dtype=float)


def save_csv(data: Dataset | OracleDataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data.to_frame().to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    return path
