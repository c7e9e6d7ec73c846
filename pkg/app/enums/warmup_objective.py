from enum import Enum


class WarmupObjectiveEnum(str, Enum):
    # lambda_u forced to 0; supervised + reconstruction terms active
    SUPERVISED_MAE = "supervised_mae"
    # lambda_u and mu_mae both forced to 0
    SUPERVISED_ONLY = "supervised_only"
