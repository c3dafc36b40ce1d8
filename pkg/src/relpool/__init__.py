"""Estimate conditional probabilities by pooling over irrelevant attributes."""

from relpool.dataset import (
    AttributeSchema,
    Dataset,
    Event,
    Observation,
    count_matching,
    ingest,
    joint_proportion,
    load_schema,
    siblings,
)
from relpool.decision import DecisionMatrix, DecisionReport, column_events, decide, expected_utilities, load_matrix
from relpool.errors import DataError, InsufficientDataError, RelpoolError, SchemaError, StarvedEstimateError
from relpool.estimator import EstimateResult, EstimatorConfig, OnInvalid, estimate, estimate_all_columns, load_config
from relpool.stats import AlphaPolicy, CellSummary, Decision, independence_test

__version__ = "0.1.0"
