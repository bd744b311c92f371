"""Sketching-based low-rank approximation under tensor-train, tree and general network structure."""

from .errors import InvalidArgumentError, InvalidStateError, ResourceLimitError, RetrySignal, TnsketchError
from .fpt_tucker import FptParams, TuckerCandidate, evaluate_candidate, fpt_tucker, gaussian_exact_k_regress, kron_gaussian_regress
from .harness import Instance, generate, tt_svd_oracle
from .net_compile import ContractionPlan, GeneralNetwork, approx_by_tree, contract_to_tree, general_contract, plan_contraction, replay_plan
from .sketching import Countsketch, GaussianK, SketchParams, Sign, TTSketch, apply_group, apply_mode, tt_sketch, tt_sketch_calibrated
from .tensor import SparseTensor, dense_cap, read_tns, set_dense_cap, write_tns
from .tree_net import TreeNetwork, balanced_binary_tree, path_tree, star_tree, tree_bicriteria, tree_contract, tree_error
from .tt import TensorTrain, tt_bicriteria, tt_error, tt_materialize

__version__ = "0.1.0"
