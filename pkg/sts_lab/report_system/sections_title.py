"""
Title Page Section Generator
"""

from typing import Any, Dict, List

from reportlab.lib.enums import TA_CENTER
from reportlab.lib.styles import ParagraphStyle
from reportlab.lib.units import inch
from reportlab.platypus import PageBreak, Paragraph, Spacer, Table, TableStyle

from .colors import ReportColors


class TitlePageGenerator:
    """Run name, headline numbers of the full StS row and the run metadata"""

    def __init__(self, colors: ReportColors, styles: Dict):
        self.colors = colors
        self.styles = styles

    def generate(self, metadata: Dict[str, Any]) -> List:
        elements = [Spacer(1, 1.5 * inch)]

        elements.append(Paragraph(
            f"<b>{metadata['run_name']}</b>",
            ParagraphStyle('ReportTitle', fontSize=32, textColor=self.colors.PRIMARY,
                           alignment=TA_CENTER, spaceAfter=15, fontName='Helvetica-Bold'),
        ))
        elements.append(Paragraph(
            "Seed-to-Seed Translation Experiment Report",
            ParagraphStyle('Subtitle', fontSize=16, textColor=self.colors.TEXT_SECONDARY,
                           alignment=TA_CENTER, spaceAfter=40),
        ))

        headline = metadata.get('headline')
        if headline:
            cells = " &nbsp; ".join(
                f"<font size='12' color='#{self.colors.TEXT_SECONDARY.hexval()[2:]}'>{name}</font> "
                f"<font size='20' color='#{self.colors.PRIMARY.hexval()[2:]}'><b>{value:.3f}</b></font>"
                for name, value in headline.items()
            )
            card = Table([[Paragraph(f"<para align='center'>{cells}</para>", self.styles['Normal'])]],
                         colWidths=[6 * inch])
            card.setStyle(TableStyle([
                ('BACKGROUND', (0, 0), (-1, -1), self.colors.BACKGROUND),
                ('BOX', (0, 0), (-1, -1), 3, self.colors.ACCENT),
                ('ROUNDEDCORNERS', [12, 12, 12, 12]),
                ('TOPPADDING', (0, 0), (-1, -1), 25),
                ('BOTTOMPADDING', (0, 0), (-1, -1), 25),
            ]))
            elements.append(card)
            elements.append(Spacer(1, 0.6 * inch))

        rows = [[f"{key}:", str(value)] for key, value in metadata.get('details', {}).items()]
        if rows:
            table = Table(rows, colWidths=[2.2 * inch, 3.8 * inch])
            table.setStyle(TableStyle([
                ('ALIGN', (0, 0), (0, -1), 'RIGHT'),
                ('ALIGN', (1, 0), (1, -1), 'LEFT'),
                ('TEXTCOLOR', (0, 0), (0, -1), self.colors.TEXT_SECONDARY),
                ('TEXTCOLOR', (1, 0), (1, -1), self.colors.TEXT_PRIMARY),
                ('FONTNAME', (0, 0), (0, -1), 'Helvetica-Bold'),
                ('FONTSIZE', (0, 0), (-1, -1), 10),
                ('BOTTOMPADDING', (0, 0), (-1, -1), 6),
            ]))
            elements.append(table)

        elements.append(PageBreak())
        return elements
