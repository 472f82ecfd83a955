"""Exception roots shared across the package.

The CLI maps :class:`InputError` to exit code 1 (bad config, bad data,
unknown names) and every other :class:`MMHError` to exit code 2.
"""


class MMHError(Exception):
    """Base class for all errors raised by this package."""


class InputError(MMHError):
    """The user supplied something invalid: a config, a file, a name."""
