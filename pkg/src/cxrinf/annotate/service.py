"""HTTP/JSON face of a campaign: blinded task queue for reviewers.

All ids in the wire format are opaque strings; payloads are built by
``CampaignStore.task_payload`` and never contain provenance.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .campaign import CampaignStore, ConflictError, Selection, StaleLockError


class SelectionBody(BaseModel):
    reviewer: str
    choice: str


class RenewBody(BaseModel):
    reviewer: str


def create_app(store: CampaignStore, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="cxrinf annotation service")

    @app.get("/api/tasks/next")
    def next_task(reviewer: str):
        task = store.next_task(reviewer)
        if task is None:
            return Response(status_code=204)
        return store.task_payload(task)

    @app.post("/api/tasks/{task_id}/selection")
    def submit(task_id: str, body: SelectionBody):
        sel = Selection(task_id=task_id, reviewer_id=body.reviewer, choice=body.choice)
        try:
            task = store.submit_selection(sel)
        except (StaleLockError, ConflictError) as e:
            raise HTTPException(status_code=409, detail=str(e))
        except KeyError as e:
            raise HTTPException(status_code=404, detail=str(e))
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e))
        return {"task_id": task_id, "status": task.status}

    @app.post("/api/tasks/{task_id}/renew")
    def renew(task_id: str, body: RenewBody):
        try:
            store.renew_lock(task_id, body.reviewer)
        except StaleLockError as e:
            raise HTTPException(status_code=409, detail=str(e))
        except KeyError as e:
            raise HTTPException(status_code=404, detail=str(e))
        return {"task_id": task_id, "status": "locked"}

    @app.get("/api/progress")
    def progress():
        return store.progress()

    @app.get("/api/images/{image_id}")
    def image(image_id: str):
        try:
            path = store.image_path(image_id)
        except KeyError as e:
            raise HTTPException(status_code=404, detail=str(e))
        return FileResponse(path, media_type="image/png")

    @app.get("/api/masks/{ref}")
    def mask(ref: str):
        path = store.masks_dir / f"{ref}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"unknown mask ref {ref!r}")
        return FileResponse(path, media_type="image/png")

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def serve(store: CampaignStore, host: str = "127.0.0.1", port: int = 8008,
          ui_dir: str | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(store, ui_dir=ui_dir), host=host, port=port, log_level="warning")
