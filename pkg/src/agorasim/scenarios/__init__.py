"""Built-in scenario types.

Importing this package registers the four shipped scenario types in the
engine registry.  Third-party types register themselves the same way from
plugin modules named in a run config.
"""

from ..runtime import register_type
from .curated_feed import CuratedFeedType
from .multigen import MultigenType
from .panel import PanelType
from .social import SocialType

register_type("panel", PanelType())
register_type("social", SocialType())
register_type("curated_feed", CuratedFeedType())
register_type("multigen", MultigenType())

__all__ = ["PanelType", "SocialType", "CuratedFeedType", "MultigenType"]
