"""Tabular datasets: CSV ingestion, splitting, feature scaling, the
scientific-discovery dataset registry and a linear baseline."""

import copy
from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score
from sklearn.model_selection import train_test_split

from xnet.expression import ExprTree
from xnet.types import SplitMode

logger = getLogger(__name__)


class DatasetFileNotFoundError(FileNotFoundError):
    """The CSV file does not exist."""


class MissingColumnError(ValueError):
    """A requested column is not in the file."""


class EmptyDatasetError(ValueError):
    """No usable rows remain."""


class SplitError(ValueError):
    """A split would leave one side empty."""


@dataclass
class Dataset:
    """Numeric inputs and target.

    Attributes
    ----------
    x : np.ndarray, shape (n_samples, n_features)
        A 1-D array is read as a single feature.
    y : np.ndarray, shape (n_samples,)
    feature_names : list of str, optional
        Defaults to ``x1, x2, ...``.
    target_name : str
    provenance : str
        File path or generator id.
    n_dropped : int
        Rows discarded on load.
    """

    x: np.ndarray
    y: np.ndarray
    feature_names: Optional[List[str]] = None
    target_name: str = "y"
    provenance: str = ""
    n_dropped: int = 0

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, np.newaxis]
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.ndim != 2 or self.x.shape[1] < 1:
            raise ValueError(f"x must be (n_samples, n_features), got {self.x.shape}")
        if self.x.shape[0] == 0:
            raise EmptyDatasetError(f"Dataset {self.provenance!r} has no rows")
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}"
            )
        if self.feature_names is None:
            self.feature_names = [f"x{index + 1}" for index in range(self.input_dim)]
        self.feature_names = list(self.feature_names)
        if len(self.feature_names) != self.input_dim:
            raise ValueError(
                f"{len(self.feature_names)} feature names for {self.input_dim} features"
            )

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    def subset(self, indices: np.ndarray, tag: str) -> "Dataset":
        return Dataset(
            x=self.x[indices],
            y=self.y[indices],
            feature_names=self.feature_names,
            target_name=self.target_name,
            provenance=f"{self.provenance}[{tag}]",
        )

    def to_dataframe(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.x, columns=self.feature_names)
        frame[self.target_name] = self.y
        return frame


def _resolve_column(frame: pd.DataFrame, column: Union[str, int]) -> str:
    if isinstance(column, (int, np.integer)):
        if not -frame.shape[1] <= column < frame.shape[1]:
            raise MissingColumnError(
                f"Column index {column} out of range for {frame.shape[1]} columns"
            )
        return frame.columns[column]
    if column not in frame.columns:
        raise MissingColumnError(
            f"Column {column!r} not found; available: {list(frame.columns)}"
        )
    return column


def _from_frame(
    frame: pd.DataFrame,
    target_column: Union[str, int],
    feature_columns: Optional[Sequence[Union[str, int]]],
    provenance: str,
) -> Dataset:
    target = _resolve_column(frame, target_column)
    if feature_columns is None:
        features = [column for column in frame.columns if column != target]
    else:
        features = [_resolve_column(frame, column) for column in feature_columns]
    if not features:
        raise MissingColumnError("No feature columns selected")

    numeric = (
        frame[features + [target]]
        .apply(pd.to_numeric, errors="coerce")
        .replace([np.inf, -np.inf], np.nan)
    )
    is_usable = numeric.notna().all(axis=1)
    n_dropped = int((~is_usable).sum())
    if n_dropped > 0:
        logger.info(f"Dropped {n_dropped} rows with missing or non-finite values")
    numeric = numeric.loc[is_usable]
    if numeric.empty:
        raise EmptyDatasetError(f"No usable rows in {provenance}")

    return Dataset(
        x=numeric[features].to_numpy(dtype=float),
        y=numeric[target].to_numpy(dtype=float),
        feature_names=[str(name) for name in features],
        target_name=str(target),
        provenance=provenance,
        n_dropped=n_dropped,
    )


def load_csv(
    path: Union[str, Path],
    target_column: Union[str, int],
    feature_columns: Optional[Sequence[Union[str, int]]] = None,
    **read_csv_kwargs,
) -> Dataset:
    """Read a headered CSV into a `Dataset`.

    Parameters
    ----------
    path : str or Path
    target_column : str or int
        Name or position.
    feature_columns : sequence of str or int, optional
        Defaults to every other column, in file order.
    **read_csv_kwargs
        Passed to `pandas.read_csv`.

    Returns
    -------
    dataset : Dataset

    Raises
    ------
    DatasetFileNotFoundError
    MissingColumnError
    EmptyDatasetError
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetFileNotFoundError(f"No such data file: {path}")
    frame = pd.read_csv(path, **read_csv_kwargs)
    return _from_frame(frame, target_column, feature_columns, str(path))


def split(
    dataset: Dataset,
    fraction: float,
    mode: SplitMode = "random",
    seed: int = 0,
) -> Tuple[Dataset, Dataset]:
    """Cut `dataset` into train and test parts.

    Parameters
    ----------
    dataset : Dataset
    fraction : float
        Training share, ``round(fraction * n_samples)`` rows.
    mode : {"random", "chronological"}, optional
        Chronological keeps row order and trains on the leading rows.
    seed : int, optional
        Shuffling seed for random mode.

    Returns
    -------
    train, test : Dataset

    Raises
    ------
    SplitError
    """
    if not 0 < fraction < 1:
        raise SplitError(f"fraction must lie in (0, 1), got {fraction}")
    n_samples = dataset.n_samples
    n_train = int(round(fraction * n_samples))
    if not 0 < n_train < n_samples:
        raise SplitError(
            f"fraction {fraction} of {n_samples} rows leaves an empty split"
        )
    indices = np.arange(n_samples)
    if mode == "chronological":
        train_indices, test_indices = indices[:n_train], indices[n_train:]
    elif mode == "random":
        train_indices, test_indices = train_test_split(
            indices, train_size=n_train, random_state=seed, shuffle=True
        )
    else:
        raise SplitError(f"Unknown split mode {mode!r}")
    return dataset.subset(train_indices, "train"), dataset.subset(test_indices, "test")


@dataclass
class StandardizationTransform:
    """Per-feature affine map ``z = (x - mean) / scale`` from training statistics.

    Attributes
    ----------
    mean : np.ndarray, shape (n_features,)
    scale : np.ndarray, shape (n_features,)
    passthrough : np.ndarray of bool, shape (n_features,)
        Zero-variance features, left unscaled.
    """

    mean: np.ndarray
    scale: np.ndarray
    passthrough: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.passthrough is None:
            self.passthrough = np.zeros_like(self.mean, dtype=bool)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.mean


def standardize(
    train: Dataset, test: Optional[Dataset] = None
) -> Tuple[Dataset, Optional[Dataset], StandardizationTransform]:
    """Scale features with the training mean and standard deviation.

    The test set, if any, uses the training statistics.

    Returns
    -------
    train : Dataset
    test : Dataset or None
    transform : StandardizationTransform
    """
    mean = train.x.mean(axis=0)
    scale = train.x.std(axis=0)
    passthrough = scale == 0.0
    if np.any(passthrough):
        names = [name for name, flag in zip(train.feature_names, passthrough) if flag]
        logger.warning(f"Zero-variance features left unscaled: {names}")
    mean = np.where(passthrough, 0.0, mean)
    scale = np.where(passthrough, 1.0, scale)
    transform = StandardizationTransform(mean, scale, passthrough)

    def _scaled(dataset: Dataset) -> Dataset:
        scaled = copy.copy(dataset)
        scaled.x = transform.apply(dataset.x)
        return scaled

    return _scaled(train), None if test is None else _scaled(test), transform


def unstandardize_tree(tree: ExprTree, transform: StandardizationTransform) -> ExprTree:
    """Copy of `tree` that reads raw features.

    Every leaf ``w * z_j + b`` becomes ``(w / s_j) * x_j + (b - w * m_j / s_j)``,
    which is the same function of the raw input.
    """
    raw = tree.copy()
    for node in raw.nodes():
        if node.kind.is_leaf:
            index = node.kind.index
            mean, scale = transform.mean[index], transform.scale[index]
            node.b = float(node.b - node.w * mean / scale)
            node.w = float(node.w / scale)
    raw.refresh()
    return raw


@dataclass(frozen=True)
class DiscoveryDataset:
    """Where a real dataset comes from and how it is fitted.

    Attributes
    ----------
    name : str
    target : str
    features : tuple of str
    split_mode : {"random", "chronological"}
    split_fraction : float
    url : str, optional
        Public source. Without one a local CSV with these columns is expected.
    read_csv_kwargs : dict
    standardize : bool
    description : str
    sample : str, optional
        File name of the small copy shipped in `xnet/data`.
    """

    name: str
    target: str
    features: Tuple[str, ...]
    split_mode: SplitMode = "random"
    split_fraction: float = 0.8
    url: Optional[str] = None
    read_csv_kwargs: Dict = field(default_factory=dict)
    standardize: bool = True
    description: str = ""
    sample: Optional[str] = None


_BOSTON_URL = (
    "https://raw.githubusercontent.com/selva86/datasets/master/BostonHousing.csv"
)
_AIRFOIL_URL = (
    "https://archive.ics.uci.edu/ml/machine-learning-databases/00291/"
    "airfoil_self_noise.dat"
)
_AIRFOIL_COLUMNS = [
    "frequency",
    "angle_of_attack",
    "chord_length",
    "velocity",
    "thickness",
    "sound_pressure",
]

DISCOVERY_DATASETS: Dict[str, DiscoveryDataset] = {
    entry.name: entry
    for entry in (
        DiscoveryDataset(
            "boston-rm",
            target="medv",
            features=("rm",),
            url=_BOSTON_URL,
            description="Median house value from rooms per dwelling",
            sample="boston.csv",
        ),
        DiscoveryDataset(
            "boston-lstat",
            target="medv",
            features=("lstat",),
            url=_BOSTON_URL,
            description="Median house value from the low-income share",
            sample="boston.csv",
        ),
        DiscoveryDataset(
            "boston-rm-lstat",
            target="medv",
            features=("rm", "lstat"),
            url=_BOSTON_URL,
            description="Median house value from rooms and low-income share",
            sample="boston.csv",
        ),
        DiscoveryDataset(
            "airfoil",
            target="sound_pressure",
            features=tuple(_AIRFOIL_COLUMNS[:-1]),
            url=_AIRFOIL_URL,
            read_csv_kwargs={"sep": "\t", "header": None, "names": _AIRFOIL_COLUMNS},
            description="Scaled sound pressure level of airfoil self-noise",
            sample="airfoil.csv",
        ),
        DiscoveryDataset(
            "climate",
            target="temperature_change",
            features=("ch4", "co2", "n2o"),
            split_mode="chronological",
            split_fraction=40 / 72,
            description=(
                "Global mean temperature change from cumulative greenhouse gas "
                "emissions, one row per year from 1950"
            ),
            sample="climate.csv",
        ),
        DiscoveryDataset(
            "solar",
            target="power",
            features=("irradiance", "air_temperature", "relative_humidity"),
            description="Solar station output from weather measurements",
            sample="solar.csv",
        ),
        DiscoveryDataset(
            "wind",
            target="power",
            features=("wind_speed", "wind_direction", "air_temperature"),
            description="Wind farm output from hub-height weather measurements",
            sample="wind.csv",
        ),
    )
}


SAMPLE_DIR = Path(__file__).parent / "data"


def sample_path(name: str) -> Path:
    """Bundled copy of a registered dataset."""
    entry = DISCOVERY_DATASETS[name]
    if entry.sample is None:
        raise DatasetFileNotFoundError(f"{name} ships without a sample")
    return SAMPLE_DIR / entry.sample


def fetch_dataset(
    name: str,
    cache_dir: Union[str, Path] = "data",
    path: Optional[Union[str, Path]] = None,
    use_sample: bool = False,
) -> Dataset:
    """Load a registered dataset, downloading it once into `cache_dir`.

    Without a cached copy, a public source that can be reached, or an
    explicit `path`, the small sample shipped with the package is used.

    Parameters
    ----------
    name : str
        Key of `DISCOVERY_DATASETS`.
    cache_dir : str or Path, optional
    path : str or Path, optional
        Local CSV to use instead of the cache or the download.
    use_sample : bool, optional
        Skip the cache and the download and read the bundled sample.

    Returns
    -------
    dataset : Dataset

    Raises
    ------
    KeyError
        Unknown name.
    DatasetFileNotFoundError
        No local file, no reachable source and no sample.
    """
    try:
        entry = DISCOVERY_DATASETS[name]
    except KeyError:
        raise KeyError(
            f"Unknown dataset {name!r}; choose from {sorted(DISCOVERY_DATASETS)}"
        ) from None

    if path is not None:
        return load_csv(path, entry.target, list(entry.features))
    if use_sample:
        return load_csv(sample_path(name), entry.target, list(entry.features))

    cached = Path(cache_dir) / f"{name}.csv"
    if cached.is_file():
        return load_csv(cached, entry.target, list(entry.features))

    if entry.url is not None:
        logger.info(f"Downloading {name} from {entry.url}")
        try:
            frame = pd.read_csv(entry.url, **entry.read_csv_kwargs)
        except OSError as error:
            if entry.sample is None:
                raise
            logger.warning(f"Download of {name} failed ({error}); using the sample")
        else:
            cached.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(cached, index=False)
            return load_csv(cached, entry.target, list(entry.features))

    if entry.sample is None:
        raise DatasetFileNotFoundError(
            f"{name} has no public source; place a CSV with columns "
            f"{list(entry.features) + [entry.target]} at {cached}"
        )
    logger.warning(
        f"No CSV for {name} at {cached}; using the {entry.sample} sample, "
        "which is too small for published comparisons"
    )
    return load_csv(sample_path(name), entry.target, list(entry.features))


def linear_baseline_r2(train: Dataset, test: Dataset) -> float:
    """Test R^2 of ordinary least squares fitted on `train`."""
    model = LinearRegression().fit(train.x, train.y)
    return float(r2_score(test.y, model.predict(test.x)))
