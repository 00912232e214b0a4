from xnet.models.classifier import XNetClassifier  # noqa
from xnet.models.regressor import XNetRegressor  # noqa
