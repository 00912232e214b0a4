from typing import Literal, Tuple

Side = Literal["left", "right", "none"]
SplitMode = Literal["random", "chronological"]
MlpActivation = Literal["tanh", "relu", "sigmoid"]
Which = Literal["train", "test"]
Interval = Tuple[float, float]
