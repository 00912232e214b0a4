import copy
import pickle
from logging import getLogger
from typing import Optional, Sequence, Tuple

import numpy as np
import sklearn
from sklearn.base import BaseEstimator

from xnet.backprop import StepState
from xnet.data_io import Dataset, StandardizationTransform
from xnet.data_io import standardize as standardize_features
from xnet.evolve import SelectionConfig
from xnet.trainer import TrainConfig

logger = getLogger(__name__)
sklearn.set_config(print_changed_only=False)


class _XNetBase(BaseEstimator):
    """Shared settings and persistence for the scikit-learn estimators."""

    def __init__(
        self,
        max_epochs: int = 2000,
        target_r2: float = 0.99,
        restarts: int = 10,
        no_parameter_mode: bool = False,
        ite: int = 50,
        accept_threshold: float = 0.01,
        stagnation_limit: int = 20,
        max_depth: int = 10,
        a: float = 10.0,
        alpha_fixed: float = 0.01,
        ada_enabled: bool = True,
        standardize: bool = True,
        seed: int = 0,
        disable_progress_bar: bool = True,
    ) -> None:
        """
        Parameters
        ----------
        max_epochs : int, optional
            Epoch budget per restart, by default 2000.
        target_r2 : float, optional
            Training R^2 at which a restart stops, by default 0.99.
        restarts : int, optional
            By default 10.
        no_parameter_mode : bool, optional
            Freeze every node at ``w = 1, b = 0``, by default False.
        ite : int, optional
            Period of the structure steps, by default 50.
        accept_threshold : float, optional
            Residual below which an activation is swapped, by default 0.01.
        stagnation_limit : int, optional
            Stalled epochs before a random perturbation, by default 20.
        max_depth : int, optional
            By default 10.
        a : float, optional
            Divisor of the adaptive step, by default 10.0.
        alpha_fixed : float, optional
            Step when adaptation is off, by default 0.01.
        ada_enabled : bool, optional
            By default True.
        standardize : bool, optional
            Scale features with training statistics; the learned trees are
            rewritten to read raw features, by default True.
        seed : int, optional
            By default 0.
        disable_progress_bar : bool, optional
            By default True.
        """
        self.max_epochs = max_epochs
        self.target_r2 = target_r2
        self.restarts = restarts
        self.no_parameter_mode = no_parameter_mode
        self.ite = ite
        self.accept_threshold = accept_threshold
        self.stagnation_limit = stagnation_limit
        self.max_depth = max_depth
        self.a = a
        self.alpha_fixed = alpha_fixed
        self.ada_enabled = ada_enabled
        self.standardize = standardize
        self.seed = seed
        self.disable_progress_bar = disable_progress_bar

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            max_epochs=self.max_epochs,
            target_r2=self.target_r2,
            restarts=self.restarts,
            no_parameter_mode=self.no_parameter_mode,
            selection=SelectionConfig(
                accept_threshold=self.accept_threshold,
                ite=self.ite,
                stagnation_limit=self.stagnation_limit,
                max_depth=self.max_depth,
            ),
            step=StepState(
                a=self.a, alpha_fixed=self.alpha_fixed, ada_enabled=self.ada_enabled
            ),
            seed=self.seed,
            disable_progress_bar=self.disable_progress_bar,
        )

    def _prepare_training_data(
        self,
        X: np.ndarray,
        y: np.ndarray,
        feature_names: Optional[Sequence[str]],
    ) -> Tuple[Dataset, Optional[StandardizationTransform]]:
        dataset = Dataset(x=X, y=y, feature_names=feature_names, provenance="fit")
        self.n_features_in_ = dataset.input_dim
        self.feature_names_ = dataset.feature_names
        if not self.standardize:
            return dataset, None
        scaled, _, transform = standardize_features(dataset)
        return scaled, transform

    def save_model(self, filename: str = "model.pkl") -> None:
        """
        Save the estimator to a pickled file.

        Parameters
        ----------
        filename : str, optional
            By default "model.pkl".
        """
        with open(filename, "wb") as f:
            pickle.dump(self, f, protocol=pickle.HIGHEST_PROTOCOL)

    @staticmethod
    def load_model(filename: str = "model.pkl") -> "_XNetBase":
        """
        Load an estimator saved with `save_model`.

        Parameters
        ----------
        filename : str, optional
            By default "model.pkl".

        Returns
        -------
        _XNetBase
        """
        with open(filename, "rb") as f:
            return pickle.load(f)

    def copy(self) -> "_XNetBase":
        """Deep copy of the estimator."""
        return copy.deepcopy(self)
