"""HTTP facade over the review queue.

Serves the queue to annotation tooling: list/fetch items, submit label or
match resolutions, and a pending/resolved counter. Optionally hosts a static
single-page UI from a directory. All state lives in the QueueStore.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import uvicorn
from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .errors import CxrPipeError, InvariantViolation
from .labeling import SOURCE_MANUAL, LabelVector
from . import reviewqueue as rq


class BindFailed(CxrPipeError):
    """The server socket could not be bound."""


class LabelSubmission(BaseModel):
    chest_wall: int = Field(ge=0, le=1)
    pleura: int = Field(ge=0, le=1)
    parenchyma: int = Field(ge=0, le=1)
    cardio: int = Field(ge=0, le=1)
    abnormal: int = Field(ge=0, le=1)
    annotator: str


class MatchSubmission(BaseModel):
    report_id: str
    annotator: str = "reviewer"


def create_app(store: rq.QueueStore, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="review queue")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/api/queue")
    def list_queue(
        status: Literal["pending", "resolved"] | None = None,
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=50, ge=1, le=500),
    ):
        items = store.list_items(status=status)
        start = (page - 1) * page_size
        window = items[start : start + page_size]
        return {
            "items": [rq.item_to_dict(item) for item in window],
            "page": page,
            "page_size": page_size,
            "total": len(items),
        }

    @app.get("/api/items/{item_id}")
    def get_item(item_id: str):
        try:
            return rq.item_to_dict(store.get(item_id))
        except rq.NotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/api/items/{item_id}/labels")
    def post_labels(item_id: str, body: LabelSubmission):
        try:
            vec = LabelVector(
                chest_wall=body.chest_wall,
                pleura=body.pleura,
                parenchyma=body.parenchyma,
                cardio=body.cardio,
                abnormal=body.abnormal,
                source=SOURCE_MANUAL,
            )
            item = rq.submit_labels(store, item_id, vec, body.annotator)
        except rq.NotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except rq.AlreadyResolved as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (rq.WrongKind, InvariantViolation) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return rq.item_to_dict(item)

    @app.post("/api/items/{item_id}/match")
    def post_match(item_id: str, body: MatchSubmission):
        try:
            item = rq.submit_match(store, item_id, body.report_id, body.annotator)
        except rq.NotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except rq.AlreadyResolved as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (rq.WrongKind, InvariantViolation) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return rq.item_to_dict(item)

    @app.get("/api/stats")
    def get_stats():
        return store.stats()

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(store: rq.QueueStore, bind: str = "127.0.0.1:8642", ui_dir: str | Path | None = None) -> None:
    """Run the API until interrupted. Blocks."""
    host, _, port_text = bind.rpartition(":")
    if not host or not port_text.isdigit():
        raise BindFailed(f"bind must look like HOST:PORT, got {bind!r}")
    app = create_app(store, ui_dir=ui_dir)
    try:
        uvicorn.run(app, host=host, port=int(port_text), log_level="warning")
    except (OSError, SystemExit) as exc:
        raise BindFailed(f"could not serve on {bind}: {exc}") from exc
