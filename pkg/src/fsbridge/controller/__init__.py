from .cli import main, build_parser
from .commands import RunContext

__all__ = ['main', 'build_parser', 'RunContext']
