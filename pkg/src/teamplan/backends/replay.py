"""Answers requests from a recorded episode log."""

from __future__ import annotations

import hashlib
import json
from typing import Union

from .base import BackendRequest, BackendResponse, ReplayDivergence


def _key(key) -> str:
    return json.dumps(list(key))


class ReplayBackend:
    """Serves the recorded response for each (cycle, role, group or agent) key.

    A missing key or a prompt that hashes differently from the recorded one
    means the run has left the recorded trajectory; both raise
    ``ReplayDivergence`` naming the cycle and role.
    """

    name = "replay"

    def __init__(self, log: Union[dict, str], check_prompts: bool = True):
        if isinstance(log, str):
            log = json.loads(log)
        self.source = log.get("backend", "")
        self.check_prompts = check_prompts
        self._table = {_key(e["key"]): e for e in log.get("exchanges", [])}

    def __len__(self) -> int:
        return len(self._table)

    def complete(self, request: BackendRequest) -> BackendResponse:
        cycle = request.key[0] if request.key else "?"
        entry = self._table.get(_key(request.key))
        if entry is None:
            raise ReplayDivergence(f"cycle {cycle}, {request.role}: no recorded exchange for key {list(request.key)}")
        if self.check_prompts:
            digest = hashlib.sha256(request.rendered_prompt.encode()).hexdigest()
            if digest != entry["prompt_sha256"]:
                raise ReplayDivergence(f"cycle {cycle}, {request.role}: prompt differs from the recording "
                                       f"(key {list(request.key)})")
        return BackendResponse(entry["text"])
