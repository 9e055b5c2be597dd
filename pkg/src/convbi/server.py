"""
HTTP surface: thin JSON mappings onto the engine.

Domain failures never become 500s; the engine already folds them into
structured reject/ask replies. Transport-level problems map to 400
(malformed request), 404 (unknown session), or 500 with an opaque incident
id for genuine faults.
"""

from __future__ import annotations

import uuid

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .engine import Engine, UnknownSessionError
from .evaluation import run_eval
from .knowledge import ValidationError

__all__ = ["create_app"]


class MessageBody(BaseModel):
    text: str
    insight: bool = False


class EvalBody(BaseModel):
    dataset: str
    metrics: list[str] = ["ex"]


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="convbi", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"code": "bad_request", "message": str(exc)})

    @app.exception_handler(Exception)
    async def internal(request: Request, exc: Exception):
        incident = uuid.uuid4().hex[:8]
        return JSONResponse(status_code=500, content={"code": "internal", "id": incident})

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.post("/v1/sessions")
    def create_session():
        return {"session_id": engine.create_session()}

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        if not body.text.strip():
            return JSONResponse(
                status_code=400, content={"code": "bad_request", "message": "text is empty"}
            )
        try:
            return engine.send(session_id, body.text, insight=body.insight)
        except UnknownSessionError:
            return JSONResponse(
                status_code=404, content={"code": "unknown_session", "message": session_id}
            )

    @app.get("/v1/sessions/{session_id}")
    def get_transcript(session_id: str):
        try:
            session = engine.transcript(session_id)
        except UnknownSessionError:
            return JSONResponse(
                status_code=404, content={"code": "unknown_session", "message": session_id}
            )
        messages = []
        for turn in session.turns:
            messages.append({"author": "user", "text": turn.user_text})
            reply = engine.reply_for(session_id, turn.turn_id)
            if reply is not None:
                messages.append({"author": "engine", "response": reply})
        return {"session_id": session_id, "messages": messages}

    @app.post("/v1/knowledge/import")
    async def import_knowledge(request: Request):
        body = (await request.body()).decode("utf-8")
        try:
            count = engine.knowledge.import_jsonl_text(body)
        except ValidationError as exc:
            return JSONResponse(status_code=400, content={"code": "invalid_entry",
                                                          "message": str(exc)})
        return {"ingested": count}

    @app.get("/v1/knowledge/search")
    def search_knowledge(q: str, k: int = 10, n: int = 10):
        try:
            result = engine.knowledge.retrieve(q, k, n)
        except ValidationError as exc:
            return JSONResponse(status_code=400, content={"code": "bad_request",
                                                          "message": str(exc)})
        return {
            "hits": [
                {
                    "id": h.entry.id,
                    "label": h.entry.label,
                    "name": h.entry.name,
                    "description": h.entry.description,
                    "lexical_score": h.lexical_score,
                    "semantic_score": h.semantic_score,
                    "phase": h.phase,
                    "rank": h.rank,
                }
                for h in result.hits
            ],
            "flags": result.flags,
        }

    @app.post("/v1/eval/run")
    def eval_run(body: EvalBody):
        report = run_eval(
            body.dataset, engine, body.metrics, engine.config.database_dir,
            gateway=engine.gateway,
        )
        return report.to_dict()

    return app
