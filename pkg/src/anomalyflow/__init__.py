"""Spectral simulation of the anomaly flow and the Monge-Ampere flow on flat complex tori."""

from .anomaly import ansatz_lift, anomaly_rhs_metric, dilaton_functional, metric_velocity, stationary_residual
from .forms import PQForm, UnsupportedDimensionError, hodge_star_n1n1, omega, omega_power, wedge
from .maflow import FlowBreakdown, FlowConfig, MAFlow, OracleFailure, PositivityError, cy_oracle, run_flow
from .torus import TorusGrid, read_snapshot, write_snapshot

__version__ = "0.1.0"

__all__ = [
    "ansatz_lift", "anomaly_rhs_metric", "dilaton_functional", "metric_velocity", "stationary_residual",
    "PQForm", "UnsupportedDimensionError", "hodge_star_n1n1", "omega", "omega_power", "wedge",
    "FlowBreakdown", "FlowConfig", "MAFlow", "OracleFailure", "PositivityError", "cy_oracle", "run_flow",
    "TorusGrid", "read_snapshot", "write_snapshot",
]
