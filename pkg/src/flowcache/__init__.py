"""Predictive feature caching for flow-matching samplers over equivariant point sets."""

__version__ = "0.1.0"

from .backbone import (EquivariantBackbone, MixtureField, MixtureSpec, PositionMLPField,
                       VectorField, build_equivariant_backbone, evaluate, mixture_velocity,
                       random_point_mixture)
from .cache import (ABMode, CacheKind, CachePolicy, CacheState, forecast_ab, forecast_taylor,
                    memory_footprint, refresh, schedule)
from .core import (Channel, GroupElement, Role, State, Tangent, TimeGrid, apply_group,
                   complete_edges, make_state, make_uniform_grid, push_tangent,
                   random_group_element)
from .errors import (CacheUsageError, ConfigError, DomainError, NumericDivergenceError,
                     NumericError, ShapeError)
from .metrics import (StepSeries, energy_distance, equivariance_error,
                      linear_predictability_error, pca_project, trajectory_deviation)
from .sampler import (BatchResult, RunRecord, StateLayout, TrajectoryRecord, batch_sample,
                      integrate, sample_base)
