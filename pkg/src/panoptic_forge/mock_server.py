"""Serve the synthetic annotators over real HTTP.

Useful for exercising the gateway against a live endpoint and for demos:
every wire role is mounted under /v1/<role>, backed by the same
deterministic scene synthesizer the in-process mock transport uses.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .mocks import mock_response
from .wire import ROLES, AnnotatorRequest, WireError


def make_mock_app(seed: int = 0, bias: Optional[dict] = None) -> FastAPI:
    app = FastAPI(title="mock-annotators")

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "roles": list(ROLES), "seed": seed}

    @app.post("/v1/{role}")
    def serve(role: str, payload: dict):
        if role not in ROLES:
            return JSONResponse(status_code=404,
                                content={"detail": f"unknown role {role!r}"})
        try:
            request = AnnotatorRequest.from_payload(payload)
        except WireError as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        if request.role != role:
            return JSONResponse(
                status_code=422,
                content={"detail": f"body role {request.role!r} does not "
                                   f"match path role {role!r}"})
        response = mock_response(request, seed=seed, bias=bias)
        return response.to_payload()

    return app
