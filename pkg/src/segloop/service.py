"""Session-oriented HTTP API for the interactive refinement loop.

One session = one image + one private model copy + a frozen starting
prediction.  Clicks accumulate until a refine call either re-runs the
forward pass with the clicks encoded (``ac_only``) or retrains the copy
(``disca``).  Mutating calls on a session are serialized through a
non-blocking lock — a second writer gets a ``busy`` error instead of
queueing.  Images and checkpoints are registered up front and addressed
by content hash.

``create_app`` builds the FastAPI application; the checked-in
``api/openapi.json`` is the frozen wire contract.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .acquisition import METHODS, ConfidNetHead, compute_uncertainty
from .annotations import ClickAnnotation, EncodingConfig, encode
from .disca import DiscaConfig, capture_weights, refine, restore_weights
from .fixtures import FixtureBundle, toy_fixture
from .model import PredictionMap, SegmentationModel
from .queries import score_patches
from .rasters import RasterError, RasterImage, tile

#: rendering colors for indexed class rasters (first N entries are used)
PALETTE = [
    [31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40],
    [148, 103, 189], [140, 86, 75], [227, 119, 194], [127, 127, 127],
]

WEIGHT_POLICIES = ("reset_per_image", "sequential")
SNAPSHOT_LIMIT = 10  # older disca refines are no longer undoable


def _error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status,
                         detail={"code": code, "message": message})


class SessionRequest(BaseModel):
    checkpoint_id: str
    image_id: str
    weight_policy: str = "reset_per_image"
    refresh_p0: bool = False
    encoding: dict[str, Any] | None = None
    disca: dict[str, Any] | None = None
    tile_size: int = 32
    overlap: int = 8


class ClickBody(BaseModel):
    row: int
    col: int
    class_id: int


class ClicksRequest(BaseModel):
    clicks: list[ClickBody]


class RefineRequest(BaseModel):
    mode: str


class ImageRequest(BaseModel):
    pixels: list  # H x W x C nested floats in [0, 1]


class CheckpointRequest(BaseModel):
    path: str


@dataclass
class Session:
    """Server-side state of one interactive image session."""

    id: str
    image_id: str
    checkpoint_id: str
    image: RasterImage
    model: SegmentationModel
    p0: PredictionMap
    encoding: EncodingConfig
    disca: DiscaConfig
    weight_policy: str
    refresh_p0: bool
    tile_size: int
    overlap: int
    config_hash: str
    prediction: PredictionMap
    clicks: list[ClickAnnotation] = field(default_factory=list)
    snapshots: deque = field(default_factory=lambda: deque(maxlen=SNAPSHOT_LIMIT))
    refine_count: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)
    initial_weights: dict | None = None

    def annotation(self):
        if not self.clicks or not self.disca.ac_enabled:
            return None
        context = None
        if self.encoding.kind == "connected_prediction":
            context = self.p0
        elif self.encoding.kind == "guided_filter":
            context = self.image
        return encode(self.clicks, self.image.shape, self.model.class_count,
                      self.encoding, context=context)

    def forward(self) -> PredictionMap:
        return self.model.predict(self.image, self.annotation())

    def state_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.model.param_hash().encode())
        digest.update(str(len(self.snapshots)).encode())
        digest.update(str(self.refine_count).encode())
        for c in self.clicks:
            digest.update(f"{c.row},{c.col},{c.class_id};".encode())
        digest.update(self.prediction.probabilities.tobytes())
        return digest.hexdigest()

    def summary(self) -> dict:
        return {
            "session_id": self.id,
            "image_id": self.image_id,
            "checkpoint_id": self.checkpoint_id,
            "shape": list(self.image.shape),
            "class_count": self.model.class_count,
            "weight_policy": self.weight_policy,
            "clicks": len(self.clicks),
            "refines": self.refine_count,
            "snapshot_depth": len(self.snapshots),
            "config_hash": self.config_hash,
            "state_hash": self.state_hash(),
        }


class Registry:
    """Content-hash stores for images and checkpoints plus live sessions."""

    def __init__(self):
        self.images: dict[str, RasterImage] = {}
        self.checkpoints: dict[str, SegmentationModel] = {}
        self.lineage: dict[str, dict] = {}  # carried weights per checkpoint
        self.sessions: dict[str, Session] = {}
        self.confidnet: ConfidNetHead | None = None

    def add_image(self, image: RasterImage) -> str:
        image_id = hashlib.sha256(image.pixels.tobytes()).hexdigest()[:16]
        self.images[image_id] = image
        return image_id

    def add_checkpoint(self, model: SegmentationModel) -> str:
        checkpoint_id = model.param_hash()[:16]
        self.checkpoints[checkpoint_id] = model
        return checkpoint_id


def _session_or_404(registry: Registry, session_id: str) -> Session:
    session = registry.sessions.get(session_id)
    if session is None:
        raise _error(404, "unknown_session", f"no session {session_id!r}")
    return session


def _acquire(session: Session) -> None:
    if not session.lock.acquire(blocking=False):
        raise _error(409, "busy", f"session {session.id} has a refine in flight")


def create_app(bundle: FixtureBundle | None = None, profile: str = "binary",
               cache_dir: str | Path | None = None,
               confidnet: ConfidNetHead | None = None) -> FastAPI:
    """Build the service; the fixture checkpoint and its held-out scenes are
    pre-registered so clients can start sessions immediately."""
    app = FastAPI(title="segloop service", version="1.0.0")
    registry = Registry()
    app.state.registry = registry

    if bundle is None:
        bundle = toy_fixture(profile, cache_dir=cache_dir)
    registry.confidnet = confidnet
    checkpoint_id = registry.add_checkpoint(bundle.model)
    preregistered = [registry.add_image(image) for image, _ in bundle.test]
    app.state.default_checkpoint = checkpoint_id
    app.state.preregistered_images = preregistered

    @app.exception_handler(HTTPException)
    async def on_http_error(request: Request, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) else {
            "code": "error", "message": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content={"error": detail})

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422, content={
            "error": {"code": "invalid_body", "message": str(exc.errors())}})

    @app.get("/images")
    def list_images() -> dict:
        return {"images": [
            {"image_id": image_id, "shape": list(image.shape)}
            for image_id, image in registry.images.items()]}

    @app.post("/images", status_code=201)
    def register_image(body: ImageRequest) -> dict:
        try:
            image = RasterImage(np.asarray(body.pixels, dtype=np.float32))
        except (RasterError, ValueError) as exc:
            raise _error(422, "invalid_image", str(exc))
        return {"image_id": registry.add_image(image),
                "shape": list(image.shape)}

    @app.get("/checkpoints")
    def list_checkpoints() -> dict:
        return {"checkpoints": [
            {"checkpoint_id": checkpoint_id, "class_count": model.class_count}
            for checkpoint_id, model in registry.checkpoints.items()]}

    @app.post("/checkpoints", status_code=201)
    def register_checkpoint(body: CheckpointRequest) -> dict:
        path = Path(body.path)
        if not path.exists():
            raise _error(404, "unknown_checkpoint", f"no file at {path}")
        model = SegmentationModel.load(path)
        return {"checkpoint_id": registry.add_checkpoint(model),
                "class_count": model.class_count}

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionRequest) -> dict:
        if body.weight_policy not in WEIGHT_POLICIES:
            raise _error(422, "invalid_policy",
                         f"weight_policy must be one of {WEIGHT_POLICIES}")
        master = registry.checkpoints.get(body.checkpoint_id)
        if master is None:
            raise _error(404, "unknown_checkpoint",
                         f"no checkpoint {body.checkpoint_id!r}")
        image = registry.images.get(body.image_id)
        if image is None:
            raise _error(404, "unknown_image", f"no image {body.image_id!r}")
        try:
            encoding = EncodingConfig(**(body.encoding or {}))
            disca = DiscaConfig(**{**(body.disca or {}), "encoding": encoding})
        except (TypeError, ValueError) as exc:
            raise _error(422, "invalid_config", str(exc))

        model = master.clone()
        if body.weight_policy == "sequential" and body.checkpoint_id in registry.lineage:
            restore_weights(model, registry.lineage[body.checkpoint_id])
        p0 = model.predict(image)

        config_blob = json.dumps({
            "checkpoint_id": body.checkpoint_id, "image_id": body.image_id,
            "weight_policy": body.weight_policy, "refresh_p0": body.refresh_p0,
            "encoding": asdict(encoding),
            "disca": {k: v for k, v in asdict(disca).items() if k != "encoding"},
            "tile_size": body.tile_size, "overlap": body.overlap,
        }, sort_keys=True)
        session = Session(
            id=uuid.uuid4().hex[:12], image_id=body.image_id,
            checkpoint_id=body.checkpoint_id, image=image, model=model,
            p0=p0, encoding=encoding, disca=disca,
            weight_policy=body.weight_policy, refresh_p0=body.refresh_p0,
            tile_size=body.tile_size, overlap=body.overlap,
            config_hash=hashlib.sha256(config_blob.encode()).hexdigest()[:16],
            prediction=p0,
            initial_weights=capture_weights(model),
        )
        registry.sessions[session.id] = session
        probabilities = p0.probabilities
        mean_entropy = float(np.mean(
            -np.sum(probabilities * np.log(np.clip(probabilities, 1e-12, None)),
                    axis=-1)))
        return {**session.summary(), "initial_mean_entropy": mean_entropy}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        return _session_or_404(registry, session_id).summary()

    @app.post("/sessions/{session_id}/clicks")
    def submit_clicks(session_id: str, body: ClicksRequest) -> dict:
        session = _session_or_404(registry, session_id)
        _acquire(session)
        try:
            height, width = session.image.shape
            staged = []
            for c in body.clicks:
                if not (0 <= c.row < height and 0 <= c.col < width):
                    raise _error(422, "invalid_click",
                                 f"({c.row}, {c.col}) outside {height}x{width}")
                if not 0 <= c.class_id < session.model.class_count:
                    raise _error(422, "invalid_click",
                                 f"class {c.class_id} out of range")
                staged.append(ClickAnnotation(c.row, c.col, c.class_id))
            session.clicks.extend(staged)  # append-only history
            return session.summary()
        finally:
            session.lock.release()

    @app.post("/sessions/{session_id}/refine")
    def refine_session(session_id: str, body: RefineRequest) -> dict:
        session = _session_or_404(registry, session_id)
        if body.mode not in ("ac_only", "disca"):
            raise _error(422, "invalid_mode",
                         "mode must be 'ac_only' or 'disca'")
        _acquire(session)
        try:
            if body.mode == "disca" and session.clicks:
                session.snapshots.append(
                    (capture_weights(session.model), len(session.clicks)))
                anchor = None if session.refresh_p0 else session.p0
                refine(session.model, session.image, session.clicks,
                       session.disca, np.random.default_rng(session.refine_count),
                       initial=anchor,
                       context=session.p0 if session.encoding.kind == "connected_prediction" else None)
                if session.weight_policy == "sequential":
                    registry.lineage[session.checkpoint_id] = \
                        capture_weights(session.model)
            session.prediction = session.forward()
            session.refine_count += 1
            return {**session.summary(), "mode": body.mode}
        finally:
            session.lock.release()

    @app.get("/sessions/{session_id}/prediction")
    def get_prediction(session_id: str) -> dict:
        session = _session_or_404(registry, session_id)
        return {
            "class_map": session.prediction.class_map.astype(int).tolist(),
            "palette": PALETTE[:session.model.class_count],
            "shape": list(session.image.shape),
            "config_hash": session.config_hash,
        }

    @app.get("/sessions/{session_id}/uncertainty")
    def get_uncertainty(session_id: str, method: str = "entropy") -> dict:
        session = _session_or_404(registry, session_id)
        if method not in METHODS:
            raise _error(422, "unknown_method",
                         f"method must be one of {METHODS}")
        if method == "confidnet" and registry.confidnet is None:
            raise _error(400, "confidnet_unavailable",
                         "no confidence head is loaded on this server")
        result = compute_uncertainty(method, session.model, session.image,
                                     session.annotation(),
                                     head=registry.confidnet,
                                     seed=session.refine_count)
        return {
            "method": method,
            "scores": result.scores.tolist(),
            "wall_time": result.wall_time,
            "config_hash": session.config_hash,
        }

    @app.get("/sessions/{session_id}/queries")
    def get_queries(session_id: str, strategy: str = "entropy",
                    k: int = 5) -> dict:
        session = _session_or_404(registry, session_id)
        if strategy not in METHODS:
            raise _error(422, "unknown_strategy",
                         f"strategy must be one of {METHODS}")
        if strategy == "confidnet" and registry.confidnet is None:
            raise _error(400, "confidnet_unavailable",
                         "no confidence head is loaded on this server")
        scores = compute_uncertainty(strategy, session.model, session.image,
                                     session.annotation(),
                                     head=registry.confidnet,
                                     seed=session.refine_count)
        grid = tile(session.image.shape, session.tile_size, session.overlap)
        ranked = sorted(score_patches(scores, grid), key=lambda q: q.rank)
        clicked = [(c.row, c.col) for c in session.clicks]
        pending = [q for q in ranked
                   if not any(q.window.contains(r, c) for r, c in clicked)]
        return {
            "strategy": strategy,
            "queries": [{
                "window": [q.window.row, q.window.col,
                           q.window.height, q.window.width],
                "score": q.score, "rank": q.rank,
            } for q in pending[:k]],
            "config_hash": session.config_hash,
        }

    @app.post("/sessions/{session_id}/undo")
    def undo_last(session_id: str) -> dict:
        session = _session_or_404(registry, session_id)
        _acquire(session)
        try:
            if not session.clicks:
                return {**session.summary(), "undone": False}
            session.clicks.pop()
            restored = False
            while session.snapshots and session.snapshots[-1][1] > len(session.clicks):
                weights, _ = session.snapshots.pop()
                restore_weights(session.model, weights)
                restored = True
            session.prediction = session.forward()
            return {**session.summary(), "undone": True,
                    "weights_restored": restored}
        finally:
            session.lock.release()

    @app.post("/sessions/{session_id}/reset")
    def reset_session(session_id: str) -> dict:
        session = _session_or_404(registry, session_id)
        _acquire(session)
        try:
            session.clicks.clear()
            session.snapshots.clear()
            restore_weights(session.model, session.initial_weights)
            session.prediction = session.p0
            session.refine_count = 0
            return {**session.summary(), "reset": True}
        finally:
            session.lock.release()

    return app
