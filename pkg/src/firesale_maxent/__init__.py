"""Fire-sale systemic risk on bank-asset holdings networks, with maximum-entropy
reconstruction of unobserved holdings from their marginals."""

__version__ = "0.1.0"

from .core import (BankSheet, DegreeSequences, HoldingsMatrix, MarketParams, StrengthSequences,
                   degrees, marginals, weights)
from .ensembles import (EnsembleParams, EntryDistribution, entry_distribution, expected_matrix,
                        fit_bipecm, fit_bipwcm, fit_mecapm, mecapm_expected_indirect_vulnerability,
                        mecapm_expected_systemicness)
from .evaluation import (QuartileErrorReport, ScenarioConfig, SyntheticScenario,
                         estimator_comparison, generate_scenario, quartile_report, relative_errors)
from .monitoring import MonitorResult, monitor_bank, monitor_panel
from .reconstruct import SupportMask, capm_matrix, cross_entropy_min
from .riskmetrics import (RiskReport, aggregate_vulnerability, indirect_vulnerability, risk_report,
                          systemicness)
from .sampling import QuantileBand, SampleBatch, mc_metrics, quantile_band, sample_matrix
