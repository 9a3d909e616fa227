"""REST surface over canvas state.

Wire protocol notes:
- Canvas-scoped routes carry the canvas id in the path.  Node and fragment
  routes use composite ids ("<canvas>:<node>" / "<canvas>:<fragment>") since
  per-canvas ids restart at n1 on every canvas.
- Every error body is {"error": <code>, "detail": <text>}.
- A static API token (WHVCANVAS_API_TOKEN) guards all routes when set;
  clients send it as a Bearer token or X-API-Token header.
- Requests touching one canvas are serialized through that canvas's lock;
  different canvases proceed in parallel.
"""

from __future__ import annotations

import os
import threading
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import pipeline
from .canvas import (
    Canvas,
    CorruptSnapshot,
    Mode,
    canvas_from_record,
    canvas_to_record,
)
from .core import AbstractionOperator
from .embedding import EmbeddingProvider, embedder_from_env
from .errors import WhvError
from .llm.gateway import Backend
from .metrics import metrics_report
from .pipeline import MergeOperator, PipelineResources

_STATUS_BY_CODE = {
    "unknown_canvas": 404,
    "unknown_node": 404,
    "unknown_fragment": 404,
    "unknown_theme": 404,
    "duplicate_theme": 409,
    "schema_error": 502,
    "unclassifiable_shift": 502,
    "transform_failure": 502,
    "merge_output_invalid": 502,
    "backend_unavailable": 503,
}


class UnknownCanvas(WhvError):
    code = "unknown_canvas"


class BadRequest(WhvError):
    code = "bad_request"


class CanvasRegistry:
    """All live canvases plus their per-canvas writer locks."""

    def __init__(self, embedder: Optional[EmbeddingProvider] = None):
        self.embedder = embedder
        self._canvases: dict[str, Canvas] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self._counter = 0

    def create(self, canvas_id: Optional[str] = None) -> Canvas:
        with self._registry_lock:
            if canvas_id is None:
                self._counter += 1
                canvas_id = f"c{self._counter}"
            if canvas_id in self._canvases:
                raise BadRequest(f"canvas {canvas_id!r} already exists")
            canvas = Canvas(canvas_id=canvas_id, embedder=self.embedder)
            self._canvases[canvas_id] = canvas
            self._locks[canvas_id] = threading.Lock()
            return canvas

    def replace(self, canvas_id: str, canvas: Canvas) -> None:
        with self._registry_lock:
            self._canvases[canvas_id] = canvas
            self._locks.setdefault(canvas_id, threading.Lock())

    def get(self, canvas_id: str) -> Canvas:
        with self._registry_lock:
            if canvas_id not in self._canvases:
                raise UnknownCanvas(canvas_id)
            return self._canvases[canvas_id]

    def lock(self, canvas_id: str) -> threading.Lock:
        with self._registry_lock:
            if canvas_id not in self._locks:
                raise UnknownCanvas(canvas_id)
            return self._locks[canvas_id]


def _split_wire_id(wire_id: str) -> tuple[str, str]:
    canvas_id, sep, local = wire_id.partition(":")
    if not sep or not canvas_id or not local:
        raise BadRequest(
            f"expected composite id '<canvas>:<local>', got {wire_id!r}")
    return canvas_id, local


def _load_case_corpus(directory: Optional[str]) -> list[tuple[str, str]]:
    if not directory:
        return []
    corpus = []
    for path in sorted(Path(directory).glob("*.txt")):
        corpus.append((path.stem, path.read_text(encoding="utf-8").strip()))
    return corpus


def _node_record(canvas: Canvas, node_id: str) -> dict:
    record = canvas.nodes[node_id].to_record()
    record["position"] = list(canvas.positions[node_id])
    record["size"] = canvas.node_size(node_id)
    return record


def create_app(
    backend: Optional[Backend] = None,
    embedder: Optional[EmbeddingProvider] = None,
    resources: Optional[PipelineResources] = None,
    case_dir: Optional[str] = None,
    api_token: Optional[str] = None,
) -> FastAPI:
    if backend is None:
        from .llm.gateway import backend_from_env
        backend = backend_from_env()
    if embedder is None:
        embedder = embedder_from_env()
    if resources is None:
        resources = PipelineResources(backend=backend, embedder=embedder)
    if api_token is None:
        api_token = os.environ.get("WHVCANVAS_API_TOKEN") or None
    registry = CanvasRegistry(embedder=embedder)
    cases = _load_case_corpus(case_dir or os.environ.get("WHVCANVAS_CASE_DIR"))

    app = FastAPI(title="whvcanvas", docs_url=None, redoc_url=None)
    app.state.registry = registry
    app.state.backend = backend

    @app.exception_handler(WhvError)
    async def whv_error_handler(_request: Request, exc: WhvError):
        status = _STATUS_BY_CODE.get(exc.code, 400)
        return JSONResponse(status_code=status, content=exc.payload())

    # Unparseable or non-JSON bodies must use the same error shape as
    # everything else, not the framework's default validation payload.
    @app.exception_handler(RequestValidationError)
    async def body_error_handler(_request: Request, _exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"error": "bad_request",
                     "detail": "request body must be a JSON object"},
        )

    @app.middleware("http")
    async def check_token(request: Request, call_next):
        if api_token is not None:
            supplied = request.headers.get("x-api-token")
            auth = request.headers.get("authorization", "")
            if auth.startswith("Bearer "):
                supplied = supplied or auth[len("Bearer "):]
            if supplied != api_token:
                return JSONResponse(
                    status_code=401,
                    content={"error": "unauthorized", "detail": "missing or wrong API token"},
                )
        return await call_next(request)

    # -- canvases -------------------------------------------------------------

    @app.post("/canvases", status_code=201)
    def create_canvas(body: dict = Body(default={})):
        canvas = registry.create(body.get("id"))
        return canvas_to_record(canvas)

    @app.get("/canvases/{canvas_id}")
    def get_canvas(canvas_id: str):
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            return canvas_to_record(canvas)

    @app.post("/canvases/{canvas_id}/nodes", status_code=201)
    def create_node(canvas_id: str, body: dict = Body(default={})):
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            node = canvas.create_node(
                str(body.get("title", "")), str(body.get("content", "")))
            return _node_record(canvas, node.id)

    # -- node routes (composite ids) ---------------------------------------------

    @app.post("/nodes/{wire_id}/analyze")
    def analyze_node(wire_id: str):
        canvas_id, node_id = _split_wire_id(wire_id)
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            canvas.analyze_node(node_id, backend)
            return _node_record(canvas, node_id)

    @app.post("/nodes/{wire_id}/transform")
    def transform_node(wire_id: str, body: dict = Body(default={})):
        canvas_id, node_id = _split_wire_id(wire_id)
        canvas = registry.get(canvas_id)
        k = body.get("k", pipeline.DEFAULT_TOPK)
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise BadRequest(f"k must be a positive integer, got {k!r}")
        with registry.lock(canvas_id):
            run = canvas.transform_node(node_id, resources, k=k)
            return {
                "node": _node_record(canvas, node_id),
                "run": run.to_record(),
                "edges": [e for e in canvas.transform_edges
                          if e["node"] == node_id],
            }

    @app.post("/nodes/{wire_id}/steer")
    def steer_node(wire_id: str, body: dict = Body(default={})):
        canvas_id, node_id = _split_wire_id(wire_id)
        canvas = registry.get(canvas_id)
        try:
            x, y = float(body["x"]), float(body["y"])
        except (KeyError, TypeError, ValueError):
            raise BadRequest("steer needs numeric 'x' and 'y'") from None
        k = body.get("k", pipeline.DEFAULT_STEER_K)
        tau = body.get("tau", pipeline.DEFAULT_STEER_TAU)
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise BadRequest(f"k must be a positive integer, got {k!r}")
        try:
            tau = float(tau)
        except (TypeError, ValueError):
            raise BadRequest(f"tau must be a number, got {tau!r}") from None
        if tau <= 0:
            raise BadRequest("tau must be positive")
        with registry.lock(canvas_id):
            successor = canvas.steer(node_id, (x, y), backend, k=k, tau=tau)
            return _node_record(canvas, successor.id)

    @app.get("/nodes/{wire_id}/related")
    def related_nodes(wire_id: str, k: int = Query(default=3, ge=1, le=50)):
        canvas_id, node_id = _split_wire_id(wire_id)
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            return canvas.related_nodes(node_id, k=k, corpus=cases)

    @app.get("/nodes/{wire_id}/view")
    def node_view(wire_id: str, zoom: Optional[int] = Query(default=None)):
        canvas_id, node_id = _split_wire_id(wire_id)
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            return canvas.node_view(node_id, zoom)

    # -- fragment routes -----------------------------------------------------------

    def _fragment_id(local: str) -> int:
        try:
            return int(local)
        except ValueError:
            raise BadRequest(f"fragment ids are integers, got {local!r}") from None

    @app.post("/fragments/{wire_id}/transform")
    def transform_fragment(wire_id: str, body: dict = Body(default={})):
        canvas_id, local = _split_wire_id(wire_id)
        canvas = registry.get(canvas_id)
        name = body.get("operator")
        try:
            operator = AbstractionOperator(name)
        except ValueError:
            raise BadRequest(
                f"operator must be one of "
                f"{[o.value for o in AbstractionOperator]}, got {name!r}") from None
        with registry.lock(canvas_id):
            fragment = canvas.transform_fragment(
                _fragment_id(local), operator, backend)
            owner, _ = canvas.find_fragment(fragment.id)
            return {
                "fragment": dict(fragment.to_record(), id=fragment.id),
                "node": _node_record(canvas, owner.id),
            }

    @app.post("/fragments/{wire_id}/dragout", status_code=201)
    def dragout_fragment(wire_id: str):
        canvas_id, local = _split_wire_id(wire_id)
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            node = canvas.drag_out(_fragment_id(local))
            return _node_record(canvas, node.id)

    # -- canvas-scoped operations -----------------------------------------------------

    @app.post("/canvases/{canvas_id}/merge", status_code=201)
    def merge_items(canvas_id: str, body: dict = Body(default={})):
        canvas = registry.get(canvas_id)
        items = body.get("items")
        if not isinstance(items, list) or not items:
            raise BadRequest("merge needs a non-empty 'items' list")
        operator = None
        if body.get("operator") is not None:
            try:
                operator = MergeOperator(body["operator"])
            except ValueError:
                raise BadRequest(
                    f"operator must be one of {[o.value for o in MergeOperator]}, "
                    f"got {body['operator']!r}") from None
        parsed: list = []
        for item in items:
            if isinstance(item, str):
                parsed.append(item)
            elif isinstance(item, int) and not isinstance(item, bool):
                parsed.append(item)
            else:
                raise BadRequest(
                    "merge items must be node id strings or fragment id integers")
        with registry.lock(canvas_id):
            node = canvas.merge(parsed, backend, operator=operator)
            return _node_record(canvas, node.id)

    @app.post("/canvases/{canvas_id}/themes", status_code=201)
    def add_theme(canvas_id: str, body: dict = Body(default={})):
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            if body.get("auto"):
                created = canvas.auto_themes(backend, k=body.get("k"))
                return {"themes": [t.to_record() for t in created]}
            theme = canvas.add_theme(str(body.get("title", "")))
            return {"themes": [theme.to_record()]}

    @app.put("/canvases/{canvas_id}/mode")
    def set_mode(canvas_id: str, body: dict = Body(default={})):
        canvas = registry.get(canvas_id)
        raw = body.get("mode")
        try:
            mode = Mode(raw)
        except ValueError:
            raise BadRequest(
                f"mode must be one of {[m.value for m in Mode]}, got {raw!r}"
            ) from None
        with registry.lock(canvas_id):
            canvas.set_mode(mode)
            return {"mode": canvas.mode.value}

    @app.put("/canvases/{canvas_id}/zoom")
    def set_zoom(canvas_id: str, body: dict = Body(default={})):
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            canvas.set_zoom(body.get("zoom"))
            return {"zoom": canvas.zoom}

    @app.put("/canvases/{canvas_id}/filters")
    def set_filters(canvas_id: str, body: dict = Body(default={})):
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            canvas.set_filters(
                levels=body.get("levels"), pillars=body.get("pillars"))
            return {
                "levels": sorted(canvas.level_filter),
                "pillars": sorted(p.value for p in canvas.pillar_filter),
            }

    @app.get("/canvases/{canvas_id}/layout")
    def get_layout(canvas_id: str):
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            return canvas.layout().to_record()

    @app.get("/canvases/{canvas_id}/events")
    def get_events(canvas_id: str):
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            return {"events": [e.to_record() for e in canvas.events]}

    @app.get("/canvases/{canvas_id}/snapshot")
    def get_snapshot(canvas_id: str):
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            return {
                "snapshot": canvas_to_record(canvas),
                "events": [e.to_record() for e in canvas.events],
            }

    @app.post("/canvases/{canvas_id}/snapshot")
    def restore_snapshot(canvas_id: str, body: dict = Body(default={})):
        registry.get(canvas_id)
        record = body.get("snapshot")
        if not isinstance(record, dict):
            raise CorruptSnapshot("body must carry a 'snapshot' object")
        with registry.lock(canvas_id):
            canvas = canvas_from_record(
                record, body.get("events", []), embedder=embedder)
            if canvas.id != canvas_id:
                raise BadRequest(
                    f"snapshot is for canvas {canvas.id!r}, not {canvas_id!r}")
            registry.replace(canvas_id, canvas)
            return canvas_to_record(canvas)

    @app.get("/canvases/{canvas_id}/metrics")
    def get_metrics(canvas_id: str, prompt: Optional[str] = Query(default=None)):
        canvas = registry.get(canvas_id)
        with registry.lock(canvas_id):
            return metrics_report(
                canvas.nodes, canvas.events, prompt=prompt, embedder=embedder)

    return app
