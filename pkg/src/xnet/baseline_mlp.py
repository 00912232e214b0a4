"""Fixed-topology feedforward network trained by full-batch gradient descent,
used as the size baseline for complexity comparisons."""

from dataclasses import dataclass, replace
from logging import getLogger
from typing import List, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from xnet.data_io import Dataset
from xnet.types import MlpActivation

jax.config.update("jax_enable_x64", True)

logger = getLogger(__name__)

Params = List[Tuple[jnp.ndarray, jnp.ndarray]]

_ACTIVATIONS = {
    "tanh": jnp.tanh,
    "relu": jax.nn.relu,
    "sigmoid": jax.nn.sigmoid,
}
DEFAULT_HIDDEN_SIZES = (4, 8, 14, 20, 28, 40)


@dataclass(frozen=True)
class MlpSpec:
    """Network shape and training settings.

    Attributes
    ----------
    layer_sizes : tuple of int
        Input, hidden..., output.
    activation : {"tanh", "relu", "sigmoid"}
        Hidden-layer nonlinearity; the output layer is linear.
    learning_rate : float
    epochs : int
        Gradient-descent step budget.
    seed : int
    check_every : int
        Steps between R^2 checks.
    """

    layer_sizes: Tuple[int, ...] = (1, 8, 1)
    activation: MlpActivation = "tanh"
    learning_rate: float = 0.05
    epochs: int = 20_000
    seed: int = 0
    check_every: int = 500

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError(
                f"Need at least an input and an output layer, got {self.layer_sizes}"
            )
        if min(self.layer_sizes) < 1:
            raise ValueError(f"Layer sizes must be positive, got {self.layer_sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"activation must be one of {sorted(_ACTIVATIONS)}, "
                f"got {self.activation!r}"
            )
        if self.learning_rate <= 0:
            raise ValueError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if self.epochs < 1 or self.check_every < 1:
            raise ValueError("epochs and check_every must be at least 1")


@dataclass
class MlpResult:
    """Outcome of one baseline fit.

    Attributes
    ----------
    r2_train : float
        NaN when training diverged.
    param_count : int
    hidden_node_count : int
        Hidden plus output units.
    epochs_used : int
    diverged : bool
    layer_sizes : tuple of int
    """

    r2_train: float
    param_count: int
    hidden_node_count: int
    epochs_used: int
    diverged: bool
    layer_sizes: Tuple[int, ...]


def mlp_param_count(spec: MlpSpec) -> int:
    """Weights plus biases, ``sum(fan_in * fan_out + fan_out)`` over layers."""
    sizes = spec.layer_sizes
    return sum(
        fan_in * fan_out + fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
    )


def mlp_node_count(spec: MlpSpec) -> int:
    """Hidden and output units; inputs are not counted."""
    return sum(spec.layer_sizes[1:])


def init_params(spec: MlpSpec) -> Params:
    """Uniform ``[-sqrt(3 / fan_in), sqrt(3 / fan_in)]`` weights, zero biases."""
    key = jax.random.PRNGKey(spec.seed)
    params = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        key, subkey = jax.random.split(key)
        limit = jnp.sqrt(3.0 / fan_in)
        weights = jax.random.uniform(
            subkey, (fan_in, fan_out), minval=-limit, maxval=limit, dtype=jnp.float64
        )
        params.append((weights, jnp.zeros((fan_out,), dtype=jnp.float64)))
    return params


def mlp_forward(params: Params, x: jnp.ndarray, activation: MlpActivation = "tanh"):
    """Network output, shape (n_samples,)."""
    nonlinearity = _ACTIVATIONS[activation]
    hidden = x
    for weights, bias in params[:-1]:
        hidden = nonlinearity(hidden @ weights + bias)
    weights, bias = params[-1]
    return (hidden @ weights + bias)[:, 0]


def mlp_loss(
    params: Params,
    x: jnp.ndarray,
    y: jnp.ndarray,
    activation: MlpActivation = "tanh",
) -> jnp.ndarray:
    """Mean squared error."""
    return jnp.mean((y - mlp_forward(params, x, activation)) ** 2)


def mlp_grad(
    params: Params,
    x: jnp.ndarray,
    y: jnp.ndarray,
    activation: MlpActivation = "tanh",
) -> Params:
    return jax.grad(mlp_loss)(params, x, y, activation)


def mlp_train(dataset: Dataset, spec: MlpSpec, target_r2: float = 0.99) -> MlpResult:
    """Full-batch gradient descent on MSE until ``target_r2`` or the budget.

    Targets are standardised internally; R^2 does not change under that map.
    A non-finite loss ends the run and is reported as ``diverged``.

    Parameters
    ----------
    dataset : Dataset
    spec : MlpSpec
        ``layer_sizes[0]`` must equal the number of features and
        ``layer_sizes[-1]`` must be 1.
    target_r2 : float, optional

    Returns
    -------
    result : MlpResult
    """
    if spec.layer_sizes[0] != dataset.input_dim or spec.layer_sizes[-1] != 1:
        raise ValueError(
            f"layer_sizes {spec.layer_sizes} do not fit {dataset.input_dim} inputs "
            "and one output"
        )
    y_scale = dataset.y.std()
    if y_scale == 0.0:
        raise ValueError("Target is constant; R^2 is undefined")
    x = jnp.asarray(dataset.x, dtype=jnp.float64)
    z = jnp.asarray((dataset.y - dataset.y.mean()) / y_scale, dtype=jnp.float64)
    learning_rate = spec.learning_rate
    activation = spec.activation

    @jax.jit
    def train_chunk(params: Params) -> Params:
        def gradient_step(_, params):
            gradients = jax.grad(mlp_loss)(params, x, z, activation)
            return jax.tree_util.tree_map(
                lambda param, gradient: param - learning_rate * gradient,
                params,
                gradients,
            )

        return jax.lax.fori_loop(0, spec.check_every, gradient_step, params)

    loss_fn = jax.jit(lambda params: mlp_loss(params, x, z, activation))

    params = init_params(spec)
    epochs_used = 0
    r2 = 1.0 - float(loss_fn(params))
    diverged = False
    while epochs_used < spec.epochs and r2 < target_r2:
        params = train_chunk(params)
        epochs_used += spec.check_every
        loss = float(loss_fn(params))
        if not np.isfinite(loss):
            logger.warning(f"MLP {spec.layer_sizes} diverged after {epochs_used} steps")
            diverged = True
            r2 = np.nan
            break
        # z has unit variance
        r2 = 1.0 - loss

    return MlpResult(
        r2_train=float(r2),
        param_count=mlp_param_count(spec),
        hidden_node_count=mlp_node_count(spec),
        epochs_used=min(epochs_used, spec.epochs),
        diverged=diverged,
        layer_sizes=spec.layer_sizes,
    )


def smallest_successful_mlp(
    dataset: Dataset,
    spec: MlpSpec = MlpSpec(),
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN_SIZES,
    target_r2: float = 0.99,
) -> MlpResult:
    """Grow a single hidden layer until the fit reaches `target_r2`.

    Returns the first success, or the best attempt if none succeeds.
    """
    best = None
    for hidden_size in hidden_sizes:
        candidate = replace(spec, layer_sizes=(dataset.input_dim, hidden_size, 1))
        result = mlp_train(dataset, candidate, target_r2)
        logger.info(
            f"MLP hidden={hidden_size}: R^2 {result.r2_train:.4f} "
            f"({result.param_count} parameters)"
        )
        if result.r2_train >= target_r2:
            return result
        if best is None or (
            np.isfinite(result.r2_train) and not result.r2_train <= best.r2_train
        ):
            best = result
    return best
