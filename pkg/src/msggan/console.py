from __future__ import annotations
from typing import Callable, Optional

from colorama import Fore, Style, init as colorama_init

Printer = Callable[[str], None]


def silent(_msg: str) -> None:
    pass


def tagged_printer(tag: str, color: str = Fore.MAGENTA) -> Printer:
    """Printer that prefixes every line with a coloured `[tag]`."""
    def _print(msg: str) -> None:
        print(color + f"[{tag}] " + Style.RESET_ALL + msg)
    return _print


def warn_printer() -> Printer:
    return tagged_printer("warn", Fore.YELLOW)


def init_console() -> None:
    colorama_init(autoreset=True)


def or_silent(printer: Optional[Printer]) -> Printer:
    return printer or silent
