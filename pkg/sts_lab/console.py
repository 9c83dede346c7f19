"""
Console helpers - logging setup and ANSI highlighting for stage banners
"""

import logging


class LogColors:
    """ANSI color codes for terminal output"""
    # Background colors
    BG_RED = '\033[41m'
    BG_GREEN = '\033[42m'
    BG_YELLOW = '\033[43m'
    BG_BLUE = '\033[44m'
    BG_CYAN = '\033[46m'

    # Text colors
    BLACK = '\033[30m'
    WHITE = '\033[37m'
    BOLD = '\033[1m'
    RESET = '\033[0m'


def color_log(message, bg_color=LogColors.BG_YELLOW, text_color=LogColors.BLACK):
    """Wrap message with color codes"""
    return f"{bg_color}{text_color}{LogColors.BOLD}{message}{LogColors.RESET}"


def stage_banner(stage: str) -> str:
    """Highlighted banner marking the start of a pipeline stage"""
    return color_log(f" {stage.upper()} ", LogColors.BG_BLUE, LogColors.WHITE)


def configure_logging(level: str = "INFO") -> None:
    """Configure root logging once for CLI and script entry points"""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
