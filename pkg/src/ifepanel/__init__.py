"""Interactive fixed effects estimation for unbalanced panels."""

__version__ = "0.1.0"

from .errors import (Collinear, DataError, DegenerateProjector, DuplicateCell, EigenFailure,  # noqa: E402
                     IfeError, NoConvergence, NonFinite, NumericalError, PatternInfeasible,
                     RaggedRow, RankTooLarge, ShapeMismatch, SpectrumFailure, StudyFailed,
                     UnitRoot, ZeroStdErr)
from .estimator import IfeFit, IfeOptions, fit, profile_objective, within_ols  # noqa: E402
from .factor_count import SelectionInput, SelectionResult, default_rbar, permuted_spectrum, select  # noqa: E402
from .factors import FactorStructure, NormalizationSide, em_impute, pca_factors  # noqa: E402
from .inference import (BiasBandwidths, InferenceReport, VcovKind, bias_terms, covariance,  # noqa: E402
                        d_matrix, infer, long_run_effect, z_test)
from .nuclear import NnFit, fit_nuclear, nuclear_objective, post_estimate  # noqa: E402
from .panel import MaskedMatrix, ObsIndex, PanelData, read_csv, two_way_within, write_csv  # noqa: E402
from .residualize import ResidualKind, dense_residualize, map_residualize  # noqa: E402
