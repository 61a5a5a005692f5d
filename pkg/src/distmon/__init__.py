"""Simulation of continuous distributed monitoring protocols over a broadcast channel."""

from .core import (
    SERVER,
    LogParams,
    MessageLedger,
    RngContext,
    RoundBudgetExceeded,
    StepContext,
    StreamTrace,
    TraceFormatError,
    run_step,
    simulate,
)
from .domain import DomainMonitor, PropagateMaxMonitor, propagate_max, run_domain_monitoring
from .frequency import (
    FrequencyContinuous,
    FrequencyPerStep,
    const_factor_freq,
    cont_eps_factor_freq,
    eps_factor_freq,
)
from .countdistinct import (
    CoinAudit,
    CountDistinctContinuous,
    CountDistinctPerStep,
    PublicCoin,
    cd_const_factor,
    cd_eps_factor,
)
from .oracles import exact_count_distinct, exact_domain, exact_frequency, r_star, sigma_of

__version__ = "0.1.0"
