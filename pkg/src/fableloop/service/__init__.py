from .app import build_runtime, create_app, factor_effects, serve
from .config import ServiceConfig, load_config, packaged_blocklist_path
from .loopback import run_protocol_sim_players
from .protocol import (
    CLIENT_TAGS,
    SERVER_TAGS,
    GameplayHandler,
    MessageError,
    parse_client_message,
)

__all__ = [
    "CLIENT_TAGS",
    "SERVER_TAGS",
    "GameplayHandler",
    "MessageError",
    "ServiceConfig",
    "build_runtime",
    "create_app",
    "factor_effects",
    "load_config",
    "packaged_blocklist_path",
    "parse_client_message",
    "run_protocol_sim_players",
    "serve",
]
