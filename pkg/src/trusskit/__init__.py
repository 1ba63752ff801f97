"""trusskit: truss design datasets via linear-elastic FEA and graph surrogates."""

import os as _os

# Forward the thread-count override to the BLAS pools before numpy loads.
_threads = _os.environ.get("TRUSSKIT_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .model import (  # noqa: E402
    STEEL,
    GraphSample,
    Joint,
    Material,
    Truss,
    from_graph,
    to_graph,
)
from .fea import (  # noqa: E402
    FRAME_BEAM,
    TRUSS_BAR,
    MechanismError,
    NumericalError,
    SolveResult,
    element_stiffness,
    solve,
)
from .designs import DESIGN_MODELS, DesignModel, get_design_model  # noqa: E402
from .datasets import (  # noqa: E402
    Dataset,
    filter_against_reference,
    filter_worst,
    generate_dataset,
    latin_hypercube,
    merge,
    split,
)
from .gsm import (  # noqa: E402
    GsmNetwork,
    TargetScaler,
    build_network,
    count_parameters,
    feast_conv,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .training import (  # noqa: E402
    GraphBatch,
    LossHistory,
    TrainConfig,
    predict_many,
    train,
    transfer,
)
from .pointwise import (  # noqa: E402
    MeanBaseline,
    PointwiseSurrogate,
    RandomForest,
    RegressionTree,
    TopologyError,
    fit_baseline,
    fit_forest,
    fit_pointwise,
    predict_baseline,
    predict_pointwise,
)
from .experiments import (  # noqa: E402
    TrialRecord,
    TrialReport,
    TrialSpec,
    dataset_mae,
    default_spec,
    emit_report,
    mae,
    run_trial,
)

__version__ = "0.1.0"
