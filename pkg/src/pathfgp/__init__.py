"""Pathwise functionally generated portfolios.

Market-weight paths, non-anticipative generating functionals with their
vertical and horizontal derivatives, additive and multiplicative
strategy construction, arbitrage certificates and a daily backtester.
"""

from .backtest import BacktestConfig, BacktestReport, run_backtest
from .errors import PathfgpError
from .funcalc import (AffineFunctional, GeneratingFunctional, gamma_by_definition, gamma_by_ito_expansion,
                      gamma_closed_form, verify_ito)
from .genlib import CATALOG, make_functional
from .marketpath import (CapitalizationPath, MarketWeightPath, RefiningPartitionFamily, TimeGrid, aux_path,
                         covariation, load_capitalizations, to_market_weights)
from .strategy import (additive_strategy, detect_arbitrage_T41, detect_arbitrage_T42, detect_arbitrage_T43,
                       multiplicative_strategy)
from .synth import MeanRevertingWeights, MultiplicativeWalk, SynthSpec, generate, oracle_gamma

__version__ = "0.1.0"
