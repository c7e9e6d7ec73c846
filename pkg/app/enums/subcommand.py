from enum import Enum


class SubcommandEnum(str, Enum):
    TRAIN = "train"
    EVAL = "eval"
    MAKE_SPLIT = "make-split"
    RECONSTRUCT = "reconstruct"
    COMPARE = "compare"
