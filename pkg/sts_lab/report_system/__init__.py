"""
Report System - charts and PDF summaries of experiment tables
"""

from .colors import ReportColors
from .plots import plot_metric_bars, plot_probe_accuracy, plot_sample_grid
from .report_generator import PDFReportGenerator, ReportArtifacts, generate_report

__all__ = [
    'ReportColors',
    'plot_metric_bars',
    'plot_probe_accuracy',
    'plot_sample_grid',
    'PDFReportGenerator',
    'ReportArtifacts',
    'generate_report',
]
