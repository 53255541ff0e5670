"""Probabilistic regression with causal-graph-enhanced deep kernels.

Exact Gaussian process regression over an ARD-RBF kernel, optionally
composed with a learned feature map (MLP, 1-D CNN, or a graph-convolution
network over a causal DAG), trained jointly by maximizing the exact
marginal likelihood.  Includes a synthetic structural-causal-model
benchmark, an ECDF normalization pipeline, and an evaluation suite.
"""

__version__ = "0.1.0"

from .graphs import (
    CausalGraph,
    GraphError,
    PropagationOperator,
    adjacency_matrix,
    parse_graph,
    perturb_graph,
    propagation_operator,
    restrict_to_inputs,
    serialize_graph,
)
from .extractors import (
    CNN1DSpec,
    CNNExtractor,
    ExtractorParams,
    GCNExtractor,
    GCNSpec,
    MLPExtractor,
    MLPSpec,
    build_gcn_extractor,
    gcn_layer,
    init_params,
    subsample_nodes,
)
from .gp import (
    ConditionedGP,
    GPError,
    GPModel,
    JitterConfig,
    PredictiveDistribution,
    RBFParams,
    condition,
    kernel_matrix,
    log_marginal_likelihood,
    mll_gradients,
    mll_terms,
    posterior_predict,
    rbf_kernel,
)
from .training import (
    AdamState,
    EarlyStopper,
    TrainConfig,
    TrainTrace,
    adam_step,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .scm import SCMConfig, SCMDataset, generate, illustrative_graph, scm_eval, split
from .pipeline import (
    QuantileTransform,
    WindowedDataset,
    fit_transform,
    fit_transforms,
    make_windows,
    read_csv,
    write_csv,
)
from .evaluation import (
    EvalReport,
    QQData,
    error_percentile,
    inverse_normal_cdf,
    metrics,
    qq_data,
)
