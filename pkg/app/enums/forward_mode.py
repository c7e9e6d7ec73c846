from enum import Enum


class ForwardModeEnum(str, Enum):
    TRAIN = "train"
    EVAL = "eval"
