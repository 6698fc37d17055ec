"""detbridge: wire-protocol server side for detector oracles."""

from .backends import EchoBackend, ModelBackend, ModelSpec, load_fixture_boxes
from .protocol import PROTOCOL_VERSION, ProtocolError
from .server import BridgeConfig, Session, serve

__version__ = "0.1.0"
