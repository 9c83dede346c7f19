"""
Main Report Generator
Collects the CSV tables of a run directory, renders the charts and builds the
PDF summary.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Image, PageBreak, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from ..pipeline.translate import FULL_STS
from ..workspace_manager import WorkspaceManager
from .colors import ReportColors
from .plots import plot_metric_bars, plot_probe_accuracy, plot_sample_grid
from .sections_title import TitlePageGenerator

logger = logging.getLogger(__name__)

TABLES = {"ablation": "ablation.csv", "cfg_sweep": "cfg_sweep.csv", "probe": "probe.csv"}


@dataclass
class ReportArtifacts:
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    plots: List[Path] = field(default_factory=list)
    pdf: Optional[Path] = None


def _sample_grid(workspace: WorkspaceManager, table: pd.DataFrame, path: Path) -> Optional[Path]:
    """Grid of eval sources and each ablation row's outputs, when the arrays exist"""
    if not workspace.has_array("data/eval_a"):
        return None
    outputs = {}
    for name in table["config_name"]:
        array_name = f"ablation/{name.lower().replace('+', '_')}/images"
        if workspace.has_array(array_name):
            outputs[name] = workspace.load_array(array_name)
    if not outputs:
        return None
    return plot_sample_grid(workspace.load_array("data/eval_a"), outputs, path)


def generate_report(workspace: WorkspaceManager, run_name: str = "run",
                    details: Optional[Dict[str, Any]] = None, pdf: bool = True) -> ReportArtifacts:
    """
    Render charts for every table present and optionally the PDF summary.

    Args:
        workspace: run directory holding ablation.csv / cfg_sweep.csv / probe.csv
        run_name: title of the report
        details: extra key/value pairs for the title page
        pdf: also write report.pdf

    Returns:
        ReportArtifacts with the loaded tables and written files
    """
    artifacts = ReportArtifacts()
    for key, filename in TABLES.items():
        if workspace.path(filename).exists():
            artifacts.tables[key] = workspace.load_table(filename)
    if not artifacts.tables:
        raise FileNotFoundError(f"No result tables in {workspace.root}; run ablate, cfg-sweep or probe first")

    plot_dir = workspace.path("plots")
    for key in ("ablation", "cfg_sweep"):
        if key in artifacts.tables:
            artifacts.plots.extend(plot_metric_bars(artifacts.tables[key], plot_dir, key))
    if "probe" in artifacts.tables:
        artifacts.plots.append(plot_probe_accuracy(artifacts.tables["probe"], plot_dir))
    if "ablation" in artifacts.tables:
        grid = _sample_grid(workspace, artifacts.tables["ablation"], plot_dir / "samples.png")
        if grid is not None:
            artifacts.plots.append(grid)

    if pdf:
        artifacts.pdf = PDFReportGenerator().generate(
            artifacts.tables, artifacts.plots, workspace.path("report.pdf"),
            {"run_name": run_name, "details": details or {}},
        )
    logger.info(f"✅ Report written with {len(artifacts.plots)} plots")
    return artifacts


class PDFReportGenerator:
    """Generates the PDF summary of one run"""

    def __init__(self):
        self.colors = ReportColors()
        self.styles = self._create_styles()

    def _create_styles(self) -> Dict:
        styles = getSampleStyleSheet()
        styles.add(ParagraphStyle(
            name='SectionHeader',
            fontSize=20,
            textColor=self.colors.PRIMARY,
            spaceAfter=16,
            spaceBefore=10,
            fontName='Helvetica-Bold',
        ))
        styles.add(ParagraphStyle(
            name='BulletPoint',
            fontSize=10,
            leftIndent=20,
            spaceAfter=6,
            textColor=self.colors.TEXT_PRIMARY,
        ))
        return styles

    def generate(self, tables: Dict[str, pd.DataFrame], plots: List[Path], path: Path,
                 metadata: Dict[str, Any]) -> Path:
        doc = SimpleDocTemplate(
            str(path),
            pagesize=letter,
            rightMargin=0.75 * inch,
            leftMargin=0.75 * inch,
            topMargin=0.75 * inch,
            bottomMargin=0.75 * inch,
            title=f"StS report: {metadata['run_name']}",
            author='sts-lab',
            invariant=1,
        )

        ablation = tables.get("ablation")
        if ablation is not None:
            full = ablation[ablation["config_name"] == FULL_STS.name]
            if not full.empty:
                metadata = {**metadata, "headline": {m: float(full[m].iloc[0]) for m in ("KID", "MMD", "SSIM")}}

        elements = TitlePageGenerator(self.colors, self.styles).generate(metadata)
        if ablation is not None:
            elements.extend(self._metric_table("Component ablation", ablation))
        if "cfg_sweep" in tables:
            elements.extend(self._metric_table("Guidance scale sweep", tables["cfg_sweep"]))
        if "probe" in tables:
            elements.extend(self._probe_section(tables["probe"]))
        if plots:
            elements.extend(self._plot_pages(plots))

        doc.build(elements)
        logger.info(f"💾 PDF report saved to {path}")
        return Path(path)

    def _metric_table(self, title: str, table: pd.DataFrame) -> list:
        elements = [Paragraph(title, self.styles['SectionHeader'])]
        metrics = [m for m in ("KID", "MMD", "SSIM", "probe_acc") if m in table.columns]
        rows = [["Configuration", "ω", *metrics]]
        style = [
            ('BACKGROUND', (0, 0), (-1, 0), self.colors.PRIMARY),
            ('TEXTCOLOR', (0, 0), (-1, 0), self.colors.WHITE),
            ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, -1), 9),
            ('GRID', (0, 0), (-1, -1), 0.5, self.colors.BORDER),
            ('ROWBACKGROUNDS', (0, 1), (-1, -1), [self.colors.WHITE, self.colors.BACKGROUND_DARK]),
        ]
        for r, (_, record) in enumerate(table.iterrows(), start=1):
            cells = [str(record["config_name"]), f"{record['omega']:g}"]
            for c, metric in enumerate(metrics, start=2):
                rel = record.get(f"{metric}_rel")
                if rel is not None and not pd.isna(rel) and record["config_name"] != FULL_STS.name:
                    cells.append(f"{record[metric]:.3f} ({rel:+.1f}%)")
                    style.append(('TEXTCOLOR', (c, r), (c, r), self.colors.get_delta_color(metric, rel)))
                else:
                    cells.append(f"{record[metric]:.3f}")
            rows.append(cells)
        grid = Table(rows, repeatRows=1)
        grid.setStyle(TableStyle(style))
        elements.append(grid)
        elements.append(Spacer(1, 0.3 * inch))
        return elements

    def _probe_section(self, table: pd.DataFrame) -> list:
        row = table.iloc[0]
        return [
            Paragraph("Seed informativeness", self.styles['SectionHeader']),
            Paragraph(f"• Task: {row['task']}", self.styles['BulletPoint']),
            Paragraph(f"• Image probe accuracy: {row['acc_images']:.3f}", self.styles['BulletPoint']),
            Paragraph(f"• Seed probe accuracy: {row['acc_seeds']:.3f}", self.styles['BulletPoint']),
            Paragraph(f"• Train / validation samples: {row['num_train']} / {row['num_val']}",
                      self.styles['BulletPoint']),
            Spacer(1, 0.3 * inch),
        ]

    def _plot_pages(self, plots: List[Path]) -> list:
        elements = [PageBreak(), Paragraph("Charts", self.styles['SectionHeader'])]
        for plot in plots:
            elements.append(Image(str(plot), width=5.5 * inch, height=3.2 * inch, kind='proportional'))
            elements.append(Spacer(1, 0.2 * inch))
        return elements
