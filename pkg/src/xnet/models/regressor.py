from logging import getLogger
from typing import Optional, Sequence

import numpy as np
from sklearn.base import RegressorMixin

from xnet.data_io import unstandardize_tree
from xnet.expression import ExprTree, to_formula
from xnet.models.base import _XNetBase
from xnet.numerics import evaluate
from xnet.trainer import RunReport, train

logger = getLogger(__name__)


class XNetRegressor(RegressorMixin, _XNetBase):
    """Symbolic regression with a single expression-tree network.

    After `fit`, ``tree_`` reads raw (unscaled) features and ``report_``
    holds the training report.
    """

    def fit(
        self,
        X: np.ndarray,
        y: np.ndarray,
        feature_names: Optional[Sequence[str]] = None,
    ) -> "XNetRegressor":
        """
        Parameters
        ----------
        X : np.ndarray, shape (n_samples, n_features)
        y : np.ndarray, shape (n_samples,)
        feature_names : sequence of str, optional

        Returns
        -------
        XNetRegressor
        """
        dataset, transform = self._prepare_training_data(X, y, feature_names)
        self.report_: RunReport = train(dataset, self._train_config())
        tree = self.report_.best_tree
        self.tree_: ExprTree = (
            tree if transform is None else unstandardize_tree(tree, transform)
        )
        logger.info(f"Fitted {self.formula()} (R^2 {self.report_.r2_train:.4f})")
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        """
        Parameters
        ----------
        X : np.ndarray, shape (n_samples, n_features)

        Returns
        -------
        y_hat : np.ndarray, shape (n_samples,)
        """
        return evaluate(self.tree_, X)

    def formula(self, precision: Optional[int] = 2) -> str:
        """The fitted tree in raw feature units."""
        return to_formula(self.tree_, precision, self.feature_names_)
