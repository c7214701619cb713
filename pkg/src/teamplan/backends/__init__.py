from .base import Backend, BackendError, BackendRequest, BackendResponse, ReplayDivergence, TransportError, WaitBackend
from .http import EndpointConfig, HttpChatBackend
from .replay import ReplayBackend
from .scripted import ScriptedBackend

__all__ = ["Backend", "BackendError", "BackendRequest", "BackendResponse", "EndpointConfig", "HttpChatBackend",
           "ReplayBackend", "ReplayDivergence", "ScriptedBackend", "TransportError", "WaitBackend"]
