"""Benchmark harness: plan tables, block and model runs, baselines, queue simulation."""
from .baselines import BaselineCostModel, Dims, OUT_OF_DOMAIN, TABLE1_SCHEMES, TABLE2_SCHEMES, baseline_rows
from .queue_sim import POLICIES, Arrival, BlockCosts, QueuePolicy, parse_arrivals, simulate

__all__ = ["BaselineCostModel", "Dims", "OUT_OF_DOMAIN", "TABLE1_SCHEMES", "TABLE2_SCHEMES",
           "baseline_rows", "POLICIES", "Arrival", "BlockCosts", "QueuePolicy", "parse_arrivals",
           "simulate"]
