"""Model-based clustering of count panels with mixtures of INAR(s*) processes."""

from .baseline import FcmddConfig, dtw_distance, dtw_matrix, fcmdd_fit, fcmdd_select
from .core import (ComponentParams, ComponentSpec, Family, InnovationModel, ParameterError,
                   conditional_pmf, series_loglik, simulate_inar)
from .criteria import bic, n_free_params
from .evaluation import CrossTab, adjusted_rand_index, crosstab, map_classify, rand_index
from .initialization import InitConfig, augment_model, initial_model
from .mixture import (ConvergenceMonitor, DegenerateFitError, FitResult, MixtureModel, MStepWarning,
                      e_step, fit_em, loglik_matrix, m_step_component, m_step_weights)
from .panel import PanelData, PanelFormatError, read_panel_csv, write_panel_csv
from .selection import (DiagnosticsReport, ModelGrid, SearchFailedError, acf_panel, diagnose,
                        dispersion_diagnostic, enumerate_models, model_search)
from .simstudy import ScenarioSpec, builtin_scenarios, get_scenario, run_scenario, simulate_panel

__version__ = "0.1.0"
