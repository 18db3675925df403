"""Exception hierarchy shared by all modules.

The CLI maps the two top-level families onto exit codes: validation problems
(bad input) exit with 2, numerical failures exit with 3.
"""


class HJSwitchError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(HJSwitchError, ValueError):
    """Invalid user input: malformed matrices, fields, scenarios."""


class NumericalError(HJSwitchError, RuntimeError):
    """A numerical routine could not deliver its contract."""
