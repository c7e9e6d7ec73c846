from enum import Enum


class RngStreamEnum(str, Enum):
    MASKING = "masking"
    AUGMENTATION = "augmentation"
    DATA_ORDER = "data_order"
    # torch global generator, consumed only by dropout
    DROPOUT = "dropout"
