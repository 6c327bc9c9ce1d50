"""Fair court-date scheduling with OWA objectives and decision-focused learning."""

from fairsched.core import (
    Assignment,
    ConfigurationError,
    DataError,
    GroupPartition,
    InvalidInputError,
    NumericError,
    PreferenceMatrix,
    SizeLimitError,
    SlotGrid,
    group_utilities,
    total_utility,
    utility_vector,
)
from fairsched.matching import BlackboxConfig, matching_backward, solve_assignment
from fairsched.oracle import LocalSearchConfig, exact_owa_schedule, local_search_owa
from fairsched.owa import MoreauConfig, OwaWeights, gini_weights, moreau_gradient, owa_subgradient, owa_value, permutahedron_project

__version__ = "0.1.0"
