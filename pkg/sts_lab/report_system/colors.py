"""
Color scheme for experiment reports and plots
"""

from typing import Optional

from reportlab.lib import colors


class ReportColors:
    """Palette shared by the PDF summary and the matplotlib charts"""

    PRIMARY = colors.HexColor('#2563EB')  # Blue
    SECONDARY = colors.HexColor('#7C3AED')  # Purple
    ACCENT = colors.HexColor('#10B981')  # Green

    # Better / worse than the full StS row
    IMPROVED = colors.HexColor('#059669')
    NEUTRAL = colors.HexColor('#F59E0B')
    REGRESSED = colors.HexColor('#DC2626')

    BACKGROUND = colors.HexColor('#F9FAFB')
    BACKGROUND_DARK = colors.HexColor('#F3F4F6')
    BORDER = colors.HexColor('#D1D5DB')
    TEXT_PRIMARY = colors.HexColor('#111827')
    TEXT_SECONDARY = colors.HexColor('#6B7280')
    TEXT_LIGHT = colors.HexColor('#9CA3AF')
    WHITE = colors.white

    CONFIG_COLORS = {
        'ControlNet': colors.HexColor('#9CA3AF'),
        'ControlNet+Inv': colors.HexColor('#3B82F6'),
        'ControlNet+ST': colors.HexColor('#F59E0B'),
        'ControlNet+Inv+ST': colors.HexColor('#10B981'),
    }

    # Metrics where a lower value is better
    LOWER_IS_BETTER = {'KID', 'MMD'}

    @classmethod
    def get_config_color(cls, config_name: str) -> colors.Color:
        return cls.CONFIG_COLORS.get(config_name, cls.PRIMARY)

    @classmethod
    def get_delta_color(cls, metric: str, relative_change: Optional[float]) -> colors.Color:
        """Color of a percent change against the reference row"""
        if relative_change is None or abs(relative_change) < 1e-9:
            return cls.NEUTRAL
        better = relative_change < 0 if metric in cls.LOWER_IS_BETTER else relative_change > 0
        return cls.IMPROVED if better else cls.REGRESSED

    @staticmethod
    def hex(color: colors.Color) -> str:
        """'#rrggbb' for matplotlib"""
        return '#' + color.hexval()[2:]
