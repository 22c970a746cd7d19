"""FastAPI app implementing the POST /score wire contract.

Request:  {"pairs": [[query, sql], ...]}   (non-empty, pairs of strings)
Response: {"scores": [float, ...]}          same length and order
Errors:   400 malformed body, 503 while the model is loading.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool


def _validate_pairs(body) -> str | None:
    if not isinstance(body, dict) or "pairs" not in body:
        return "body must be a JSON object with a 'pairs' key"
    pairs = body["pairs"]
    if not isinstance(pairs, list) or not pairs:
        return "'pairs' must be a non-empty list"
    for i, pair in enumerate(pairs):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            return f"pairs[{i}] must have exactly 2 elements"
        if not all(isinstance(x, str) for x in pair):
            return f"pairs[{i}] must contain strings"
    return None


def create_app(backend=None) -> FastAPI:
    app = FastAPI(title="scorer-service")
    app.state.backend = backend

    @app.get("/healthz")
    async def healthz():
        if app.state.backend is None:
            return JSONResponse({"status": "loading"}, status_code=503)
        return {"status": "ok"}

    @app.post("/score")
    async def score(request: Request):
        if app.state.backend is None:
            return JSONResponse({"error": "model is loading"}, status_code=503)
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be valid JSON"}, status_code=400)
        error = _validate_pairs(body)
        if error:
            return JSONResponse({"error": error}, status_code=400)
        pairs = [(q, s) for q, s in body["pairs"]]
        scores = await run_in_threadpool(app.state.backend.predict, pairs)
        return {"scores": scores}

    return app


def set_backend(app: FastAPI, backend) -> None:
    app.state.backend = backend
