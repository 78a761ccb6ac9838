"""Connected automated vehicle toolkits."""

from cav import voi

__all__ = ["voi"]
