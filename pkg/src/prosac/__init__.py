"""Distribution-free safety certification of classifiers under attack.

Decides whether a black-box model can be declared safe (worst-case
adversarial risk below alpha) with Type-I error at most zeta, by testing
Hoeffding-Bentkus p-values over the attacker's hyperparameter grid --
exhaustively or through a GP-UCB search with a conservative threshold.
"""

from .certifier import (
    CERTIFIED_SAFE,
    INDETERMINATE,
    NOT_CERTIFIED,
    CertificationError,
    ComparisonReport,
    SafetySpec,
    ThresholdParams,
    Type1Report,
    Verdict,
    compare_methods,
    grid_certify,
    simulate_type1,
    ucb_certify,
)
from .grid import HyperGrid, UnknownPointError
from .gp_ucb import (
    GPState,
    IllConditionedKernelError,
    KernelConfig,
    UcbConfig,
    UcbResult,
    conservative_threshold,
    info_gain,
    kernel_eval,
    posterior,
    ucb_run,
    ucb_select,
)
from .hb_stats import (
    MIN_P_VALUE,
    PValue,
    RiskEstimate,
    binom_tail,
    empirical_risk,
    h1,
    hb_p_value,
)
from .oracle import (
    AVERAGE,
    AnalyticOracle,
    AnalyticSurface,
    CachedOracle,
    NDriftError,
    OracleDescriptor,
    OracleError,
    OracleTimeoutError,
    ProtocolError,
    RiskOracle,
    RiskTable,
    RunnerCrashError,
    RunnerReportedError,
    SubprocessOracle,
    TableOracle,
    cached,
    load_table,
    save_table,
)
from .seeds import split_seed

__version__ = "0.1.0"
