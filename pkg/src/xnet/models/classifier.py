from logging import getLogger
from typing import Optional, Sequence

import numpy as np
from sklearn.base import ClassifierMixin

from xnet.data_io import unstandardize_tree
from xnet.expression import to_formula
from xnet.models.base import _XNetBase
from xnet.numerics import evaluate
from xnet.trainer import ConfigurationError, fit_one_vs_rest, predict_classes

logger = getLogger(__name__)


class XNetClassifier(ClassifierMixin, _XNetBase):
    """One expression tree per class, fitted to one-hot targets.

    The predicted class is the one whose tree gives the largest output.
    """

    def fit(
        self,
        X: np.ndarray,
        y: np.ndarray,
        feature_names: Optional[Sequence[str]] = None,
    ) -> "XNetClassifier":
        """
        Parameters
        ----------
        X : np.ndarray, shape (n_samples, n_features)
        y : np.ndarray, shape (n_samples,)
            Class labels of any hashable type.
        feature_names : sequence of str, optional

        Returns
        -------
        XNetClassifier
        """
        self.classes_, encoded = np.unique(np.asarray(y), return_inverse=True)
        if self.classes_.size < 2:
            raise ConfigurationError("Classification needs at least two classes")
        dataset, transform = self._prepare_training_data(X, encoded, feature_names)
        self.reports_ = fit_one_vs_rest(
            dataset.x,
            encoded,
            self.classes_.size,
            self._train_config(),
            dataset.feature_names,
        )
        trees = [report.best_tree for report in self.reports_]
        if transform is not None:
            trees = [unstandardize_tree(tree, transform) for tree in trees]
        self.trees_ = trees
        return self

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        """Class-tree outputs, shape (n_samples, n_classes)."""
        return np.stack([evaluate(tree, X) for tree in self.trees_], axis=1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes_[predict_classes(self.trees_, X)]

    def formulas(self, precision: Optional[int] = 2) -> list:
        return [
            to_formula(tree, precision, self.feature_names_) for tree in self.trees_
        ]
