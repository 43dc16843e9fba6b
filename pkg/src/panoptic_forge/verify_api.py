"""HTTP facade for the verification workflow.

Thin JSON layer over TaskStore: leasing, submission, package review,
metrics, and enough region context for a client to draw the box and the
candidate chips. Authentication is static bearer tokens, one per worker
or expert, supplied at app construction.
"""

from __future__ import annotations

from typing import Dict, List, Optional

from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .verification import (LeaseError, ResultError, TaskStore,
                           TransitionError, VerificationError)


class LeaseRequest(BaseModel):
    worker_id: str
    kind: Optional[str] = None


class SubmitRequest(BaseModel):
    worker_id: str
    result: dict


class ReviewRequest(BaseModel):
    expert_id: str
    verdicts: List[bool]


def _error(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"type": kind, "message": message}})


def make_app(store: TaskStore,
             worker_tokens: Optional[Dict[str, str]] = None,
             expert_tokens: Optional[Dict[str, str]] = None) -> FastAPI:
    """Build the service app.

    `worker_tokens` / `expert_tokens` map bearer token -> principal id.
    With both omitted the service runs open (local development).
    """
    workers = dict(worker_tokens or {})
    experts = dict(expert_tokens or {})
    auth_enabled = bool(workers or experts)

    app = FastAPI(title="verification-service")

    def principal(authorization: Optional[str] = Header(default=None)) -> dict:
        if not auth_enabled:
            return {"id": None, "roles": {"worker", "expert"}}
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="bearer token required")
        token = authorization[len("Bearer "):]
        roles = set()
        who = None
        if token in workers:
            roles.add("worker")
            who = workers[token]
        if token in experts:
            roles.add("expert")
            who = experts[token]
        if not roles:
            raise HTTPException(status_code=401, detail="unknown token")
        return {"id": who, "roles": roles}

    def require(role: str, who: dict) -> None:
        if role not in who["roles"]:
            raise HTTPException(status_code=403, detail=f"{role} token required")

    def check_principal(claimed: str, who: dict) -> None:
        if who["id"] is not None and claimed != who["id"]:
            raise HTTPException(status_code=403,
                                detail="token does not match claimed id")

    @app.exception_handler(VerificationError)
    def on_verification_error(request, exc: VerificationError):
        if isinstance(exc, (LeaseError, TransitionError)):
            return _error(409, type(exc).__name__, str(exc))
        if isinstance(exc, ResultError):
            return _error(422, type(exc).__name__, str(exc))
        if str(exc).startswith("no "):
            return _error(404, type(exc).__name__, str(exc))
        return _error(400, type(exc).__name__, str(exc))

    @app.get("/api/healthz")
    def healthz():
        return {"ok": True}

    @app.post("/api/tasks/lease")
    def lease(body: LeaseRequest, who: dict = Depends(principal)):
        require("worker", who)
        check_principal(body.worker_id, who)
        task = store.lease(body.worker_id, kind=body.kind)
        if task is None:
            return Response(status_code=204)
        return task.to_payload()

    @app.get("/api/tasks/{task_id}")
    def get_task(task_id: str, who: dict = Depends(principal)):
        return store.get_task(task_id).to_payload()

    @app.post("/api/tasks/{task_id}/submit")
    def submit(task_id: str, body: SubmitRequest, who: dict = Depends(principal)):
        require("worker", who)
        check_principal(body.worker_id, who)
        task = store.submit(task_id, body.worker_id, body.result)
        return {"acknowledged": True, "task": task.to_payload()}

    @app.get("/api/packages/open")
    def open_packages(who: dict = Depends(principal)):
        return {"packages": [p.to_payload() for p in store.open_packages()]}

    @app.get("/api/packages/{package_id}")
    def get_package(package_id: str, who: dict = Depends(principal)):
        return store.get_package(package_id).to_payload()

    @app.post("/api/packages/{package_id}/review")
    def review(package_id: str, body: ReviewRequest,
               who: dict = Depends(principal)):
        require("expert", who)
        pkg = store.review_package(package_id, body.expert_id, body.verdicts)
        return pkg.to_payload()

    @app.get("/api/metrics")
    def metrics(who: dict = Depends(principal)):
        return store.metrics()

    @app.get("/api/regions/{region_id}/context")
    def region_context(region_id: str, who: dict = Depends(principal)):
        if store.datastore is None:
            raise HTTPException(status_code=404, detail="no datastore attached")
        region = store.datastore.get_region(region_id)
        if region is None:
            raise HTTPException(status_code=404, detail=f"no region {region_id}")
        return {
            "region_id": region.region_id,
            "image_ref": region.image_id,
            "bbox": region.bbox.as_list(),
            "candidates": [t.text for t in region.matched_tags],
            "caption": region.caption,
            "qa": [q.to_record() for q in region.qa_pairs],
            "verification_state": region.verification.state,
        }

    return app
