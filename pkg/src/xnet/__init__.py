from xnet.data_io import (  # noqa
    Dataset,
    fetch_dataset,
    load_csv,
    split,
    standardize,
    unstandardize_tree,
)
from xnet.evolve import SelectionConfig  # noqa
from xnet.expression import (  # noqa
    ExprTree,
    Node,
    NodeKind,
    init_default_tree,
    load_tree,
    save_tree,
    to_formula,
)
from xnet.models import XNetClassifier, XNetRegressor  # noqa
from xnet.numerics import NumericLimits, evaluate, r_squared  # noqa
from xnet.trainer import (  # noqa
    RunReport,
    TrainConfig,
    train,
    train_classifier,
    train_no_parameter,
)

try:
    from ._version import __version__
except ImportError:
    pass
