"""
Command routing for the CLI.

Command modules declare their subcommands on a `CommandRouter` with the
`@router.command(...)` decorator; `app.api.router` includes every module's
router into one tree and turns it into an argparse parser.
"""

import argparse
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from app.core.exceptions import UsageError


@dataclass
class Option:
    """One argparse argument: flags plus add_argument keyword arguments"""
    flags: Tuple[str, ...]
    kwargs: Dict[str, Any]


def opt(*flags: str, **kwargs: Any) -> Option:
    return Option(flags=flags, kwargs=kwargs)


@dataclass
class Command:
    name: str
    help: str
    handler: Callable[..., int]
    options: List[Option] = field(default_factory=list)
    group: Optional[str] = None


class CliArgumentParser(argparse.ArgumentParser):
    """argparse parser whose usage errors raise instead of exiting with status 2"""

    def error(self, message: str):
        raise UsageError(message, usage=self.format_usage())


class CommandRouter:

    def __init__(self):
        self.commands: List[Command] = []

    def command(self, name: str, help: str, options: Sequence[Option] = ()):
        def register(handler: Callable[..., int]) -> Callable[..., int]:
            self.commands.append(Command(name=name, help=help, handler=handler, options=list(options)))
            return handler
        return register

    def include_router(self, router: "CommandRouter", group: Optional[str] = None) -> None:
        for cmd in router.commands:
            if any(c.name == cmd.name for c in self.commands):
                raise ValueError(f"duplicate command {cmd.name}")
            self.commands.append(Command(cmd.name, cmd.help, cmd.handler, list(cmd.options), group or cmd.group))

    def build_parser(self, prog: str, common: Sequence[Option] = ()) -> Tuple[CliArgumentParser, Dict[str, CliArgumentParser]]:
        parser = CliArgumentParser(prog=prog, description="Triplet-loss embedding engine")
        subparsers = parser.add_subparsers(dest="command", metavar="<command>", parser_class=CliArgumentParser)
        subparsers.required = True

        by_name: Dict[str, CliArgumentParser] = {}
        for cmd in self.commands:
            sub = subparsers.add_parser(cmd.name, help=cmd.help, description=cmd.help)
            for option in list(common) + cmd.options:
                sub.add_argument(*option.flags, **option.kwargs)
            sub.set_defaults(handler=cmd.handler)
            by_name[cmd.name] = sub
        return parser, by_name
