"""Echo state network identification, reduction and offset-free MPC."""
from .ident import Dataset, EsnModel, ReadoutWeights, Scaling, fitting, train_lasso, train_ls
from .mpc import Controller, MpcConfig
from .plant import PhPlant, PhProcess
from .reduce import observable_closure, prune, reduce_and_retrain
from .reservoir import EsnState, ReservoirWeights, certify, generate_reservoir

__version__ = "0.1.0"

__all__ = [
    "Controller", "Dataset", "EsnModel", "EsnState", "MpcConfig", "PhPlant",
    "PhProcess", "ReadoutWeights", "ReservoirWeights", "Scaling", "certify",
    "fitting", "generate_reservoir", "observable_closure", "prune",
    "reduce_and_retrain", "train_lasso", "train_ls",
]
