"""Monte Carlo studies of price-impact trading models.

The library simulates an informed trader acting against a market maker who
quotes prices through a weighted signal process, decomposes the trader's
wealth into value-potential terms, and turns the model's optimality and
growth claims into statistical pass/fail checks.
"""

from .config import build_rule, build_sim, load_config, validate_document
from .engine import (PathRecord, SimConfig, WealthBreakdown, simulate_block,
                     simulate_path, wealth_decomposition, wealth_direct,
                     wealth_ibp)
from .errors import (KyleBackError, PathDiverged, SchemaError,
                     TooManyDiverged, UsageError)
from .experiments import (McSummary, SweepResult, convergence_study,
                          mc_estimate, rationality_test, sweep)
from .market import CATALOG, PricingRule, SignalModel, catalog_rule, validate_rule
from .strategies import KINDS, StrategyConfig, make_strategy

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "KINDS",
    "KyleBackError",
    "McSummary",
    "PathDiverged",
    "PathRecord",
    "PricingRule",
    "SchemaError",
    "SignalModel",
    "SimConfig",
    "StrategyConfig",
    "SweepResult",
    "TooManyDiverged",
    "UsageError",
    "WealthBreakdown",
    "__version__",
    "build_rule",
    "build_sim",
    "catalog_rule",
    "convergence_study",
    "load_config",
    "make_strategy",
    "mc_estimate",
    "rationality_test",
    "simulate_block",
    "simulate_path",
    "sweep",
    "validate_document",
    "validate_rule",
    "wealth_decomposition",
    "wealth_direct",
    "wealth_ibp",
]
