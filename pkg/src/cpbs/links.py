"""Link functions mapping means to linear predictors.

Only the log link is built in (the standard choice for count regression);
the registry keeps the set extensible without touching any call sites.
"""

from __future__ import annotations

import numpy as np

__all__ = ["LogLink", "LINKS", "get_link"]


class LogLink:
    """g(mu) = log(mu), inverse exp; maps reals to positive means."""

    name = "log"

    @staticmethod
    def link(mu):
        return np.log(mu)

    @staticmethod
    def inverse(eta):
        return np.exp(eta)


LINKS = {"log": LogLink()}


def get_link(link):
    """Resolve a link by name or pass an already-constructed link through."""
    if isinstance(link, str):
        try:
            return LINKS[link]
        except KeyError:
            raise ValueError(f"unknown link {link!r}; available: {sorted(LINKS)}") from None
    if hasattr(link, "link") and hasattr(link, "inverse"):
        return link
    raise TypeError(f"link must be a name or link object, got {type(link).__name__}")
