"""Monte Carlo lab for the Metropolis chain on disordered trees and the Einstein relation."""
from .distributions import (EdgeLaw, LawError, brw_speed, check_xm, law_from_config, log_laplace,
                            make_shifted_binomial, make_tilted_symmetric, make_two_point)
from .environment import ROOT, Environment, Vertex, edge_mark, enumerate_level, s_value
from .estimators import Estimate, einstein_report, sigma2_from_blocks, sigma2_naive, speed_from_blocks
from .regeneration import RegenerationDetector, block_stats
from .rng import SeedSchedule, WalkerStream
from .walk import HFunction, Params, p_beta, run_trajectory, transition_distribution

__version__ = "0.1.0"
