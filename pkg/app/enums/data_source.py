from enum import Enum


class DataSourceEnum(str, Enum):
    SYNTHETIC = "synthetic"
    CIFAR10 = "cifar10"
    NPZ = "npz"
