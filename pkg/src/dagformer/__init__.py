"""Causal effect estimation with DAG-masked attention models.

Public surface: the causal graph and mask compiler, the masked-attention
model, training objectives, plug-in estimators, data simulators/loaders,
and the surrogate-scored model-selection utilities.
"""

from .data import (
    LinearScm, TabularDataset, bootstrap, demand_true_curve,
    demand_true_potential_outcome, heldout_w_draws, lalonde_schema,
    linear_scm_dag, load_csv, simulate_demand, simulate_linear_scm, write_csv,
)
from .errors import (
    ConfigError, ContractError, DagformerError, DataError, DegenerateInputError,
    SelectionFailedError, ShapeError, TrainingDivergedError,
)
from .estimators import (
    EstimateReport, TableNuisance, aipw_from_nuisances, cate_by_group,
    estimate_aipw, estimate_gformula, estimate_iptw, estimate_proximal,
    gformula_from_mu, iptw_from_pi,
)
from .forest import ForestConfig, HonestForestRegressor
from .graph import (
    CausalDag, NodeRole, backdoor_dag, build_adjacency, build_mask, demand_dag,
    input_nodes_for, mask_to_additive,
)
from .model import DagTransformer, ModelConfig, train_model
from .objectives import (
    AipwJoint, GFormula, Iptw, Nmmr, loss_aipw_joint, loss_gformula, loss_iptw,
    loss_nmmr, rbf_kernel_matrix,
)
from .optim import AdamState, adam_step
from .selection import c_mse, fit_plugin, grid_search, nrmse

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AipwJoint", "CausalDag", "ConfigError", "ContractError",
    "DagTransformer", "DagformerError", "DataError", "DegenerateInputError",
    "EstimateReport", "ForestConfig", "GFormula", "HonestForestRegressor",
    "Iptw", "LinearScm", "ModelConfig", "Nmmr", "NodeRole",
    "SelectionFailedError", "ShapeError", "TableNuisance", "TabularDataset",
    "TrainingDivergedError", "adam_step", "aipw_from_nuisances", "backdoor_dag",
    "bootstrap", "build_adjacency", "build_mask", "c_mse", "cate_by_group",
    "demand_dag", "demand_true_curve", "demand_true_potential_outcome",
    "estimate_aipw", "estimate_gformula", "estimate_iptw", "estimate_proximal",
    "fit_plugin", "gformula_from_mu", "grid_search", "heldout_w_draws",
    "input_nodes_for", "iptw_from_pi", "lalonde_schema", "linear_scm_dag",
    "load_csv", "loss_aipw_joint", "loss_gformula", "loss_iptw", "loss_nmmr",
    "mask_to_additive", "nrmse", "rbf_kernel_matrix", "simulate_demand",
    "simulate_linear_scm", "train_model", "write_csv", "__version__",
]
