"""Risk-aware bidding for real-time display advertising auctions."""

from .bidders import LinearBidder, RMPBidder, VaRBidder, make_bidder
from .ctr_distribution import (
    CtrPosterior,
    MomentTable,
    build_moment_table,
    lookup_moments,
    moments_mc,
    moments_quadrature,
    pdf,
)
from .ctr_model import BayesianLogisticRegression, TrainConfig
from .evaluation import (
    ExperimentConfig,
    SweepPoint,
    cp_profit,
    dominance,
    run_experiment,
    select_model,
    sweep,
    write_report,
)
from .exceptions import (
    InsufficientDataError,
    InvalidInputError,
    LogParseError,
    NotFittedError,
    RiskBidError,
)
from .market import EmpiricalMarket, LogNormalMarket, fit_empirical, fit_lognormal, load_market
from .simulator import (
    AuctionLog,
    LogRecord,
    ReplayMetrics,
    SyntheticSpec,
    generate_synthetic,
    read_log,
    replay,
    replay_bids,
    write_log,
)
from .strategies import (
    BidGrid,
    RmpBidTable,
    StrategyConfig,
    bid_lr,
    bid_rmp,
    bid_var,
    build_rmp_table,
    efficient_frontier,
    negative_profit_prob,
    profit_moments,
)

__all__ = [
    "AuctionLog",
    "BayesianLogisticRegression",
    "bid_lr",
    "bid_rmp",
    "bid_var",
    "BidGrid",
    "build_moment_table",
    "build_rmp_table",
    "cp_profit",
    "CtrPosterior",
    "dominance",
    "efficient_frontier",
    "EmpiricalMarket",
    "ExperimentConfig",
    "fit_empirical",
    "fit_lognormal",
    "generate_synthetic",
    "InsufficientDataError",
    "InvalidInputError",
    "LinearBidder",
    "load_market",
    "LogNormalMarket",
    "LogParseError",
    "LogRecord",
    "lookup_moments",
    "make_bidder",
    "moments_mc",
    "moments_quadrature",
    "MomentTable",
    "negative_profit_prob",
    "NotFittedError",
    "pdf",
    "profit_moments",
    "read_log",
    "replay",
    "replay_bids",
    "ReplayMetrics",
    "RiskBidError",
    "RMPBidder",
    "RmpBidTable",
    "run_experiment",
    "select_model",
    "StrategyConfig",
    "sweep",
    "SweepPoint",
    "SyntheticSpec",
    "TrainConfig",
    "VaRBidder",
    "write_log",
    "write_report",
]

__version__ = "0.1.0"
