"""Long-running generation/editing service.

A thread-pool worker executes jobs; edits within one session are serialized
FIFO while independent sessions run concurrently against the shared
read-only checkpoint. Artifacts are content-addressed PNGs written with a
temp-file + rename discipline so completed results survive restarts.

HTTP surface (all under /v1):
    POST /v1/sessions                  create an editing session
    POST /v1/sessions/{id}/edits      submit an edited basemap (base64 PNG)
    GET  /v1/jobs/{id}                 poll job status / fetch results
    GET  /v1/artifacts/{digest}        raw PNG by content digest
    GET  /v1/meta                      cities, palette, classes, checkpoint hash

(No `from __future__ import annotations` here: FastAPI must evaluate the
request-model annotations of the factory-local endpoint functions.)
"""
import base64
import hashlib
import os
import tempfile
import threading
import uuid
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import ModelState
from .errors import DataError, TerradiffError
from .geo import CityIndex, GeoCoordinate, Provider, SourceTag
from .palette import DEFAULT_PALETTE, LayerPalette
from .pipelines import EditSession, compound_edit_step, derive_seed
from .procedural import procedural_rasters
from .schedule import NoiseSchedule
from .tiles import TilePair, TileStore, decode_png, encode_png

JOB_KINDS = ("sample", "inpaint", "two_stage", "edit_step")
_STATUS_ORDER = {"queued": 0, "running": 1, "done": 2, "failed": 2}


class ArtifactStore:
    """Content-addressed PNG store (sha256 of the encoded bytes)."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, raster: np.ndarray) -> str:
        data = encode_png(raster)
        digest = hashlib.sha256(data).hexdigest()
        path = self.path(digest)
        if not path.exists():
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        return digest

    def path(self, digest: str) -> Path:
        return self.root / f"{digest}.png"

    def get(self, digest: str) -> bytes:
        try:
            return self.path(digest).read_bytes()
        except FileNotFoundError:
            raise KeyError(digest) from None


@dataclass
class Job:
    job_id: str
    kind: str
    session_id: str | None = None
    status: str = "queued"
    inputs_digest: str = ""
    result: dict | None = None
    error: dict | None = None

    def advance(self, status: str) -> None:
        if _STATUS_ORDER[status] < _STATUS_ORDER[self.status]:
            raise DataError(f"job {self.job_id}: illegal transition {self.status} -> {status}")
        self.status = status

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "kind": self.kind,
            "session_id": self.session_id,
            "status": self.status,
            "inputs_digest": self.inputs_digest,
            "result": self.result,
            "error": self.error,
        }


@dataclass
class _SessionEntry:
    session: EditSession
    queue: deque = field(default_factory=deque)  # (job_id, payload bytes)
    in_flight: bool = False


class EditService:
    """Session/job management over one image checkpoint."""

    def __init__(
        self,
        image_model: tuple[ModelState, NoiseSchedule],
        city_index: CityIndex,
        artifact_root: Path | str,
        tile_store: TileStore | None = None,
        palette: LayerPalette = DEFAULT_PALETTE,
        workers: int = 2,
        proc_seed: int = 0,
        checkpoint_hash: str | None = None,
    ):
        self.image_model = image_model
        self.city_index = city_index
        self.palette = palette
        self.tile_store = tile_store
        self.artifacts = ArtifactStore(artifact_root)
        self.proc_seed = proc_seed
        self.checkpoint_hash = checkpoint_hash or image_model[0].config.config_hash()
        self._sessions: dict[str, _SessionEntry] = {}
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="terradiff-job")

    # -- sessions -------------------------------------------------------

    def _reference_pair(self, city: str, reference_tile_id: str | None, seed: int) -> TilePair:
        if reference_tile_id is not None:
            if self.tile_store is None:
                raise DataError("service has no tile store; cannot resolve reference tile ids")
            return self.tile_store.load_dir(self.tile_store.root / reference_tile_id)
        res = self.image_model[0].config.resolution
        rng = np.random.default_rng(derive_seed(seed, "ref-coord", city))
        coord = GeoCoordinate(float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)))
        sat, bmp = procedural_rasters(self.proc_seed, coord, res, palette=self.palette)
        return TilePair(satellite=sat, basemap=bmp, coord=coord,
                        source=SourceTag(Provider.PROC, 16), city=city)

    def create_session(self, city: str, reference_tile_id: str | None = None, seed: int = 0) -> dict:
        if city not in self.city_index:
            raise KeyError(f"unknown city {city!r}; known: {self.city_index.names}")
        pair = self._reference_pair(city, reference_tile_id, seed)
        session = EditSession(
            session_id=uuid.uuid4().hex,
            reference=pair,
            city_id=self.city_index.id_of(city),
            base_seed=seed,
        )
        with self._lock:
            self._sessions[session.session_id] = _SessionEntry(session=session)
        sat_digest = self.artifacts.put(pair.satellite)
        bmp_digest = self.artifacts.put(pair.basemap)
        return {
            "session_id": session.session_id,
            "city": city,
            "stage_count": 0,
            "resolution": pair.size,
            "reference": {
                "satellite": {"digest": sat_digest, "png_b64": _b64(pair.satellite)},
                "basemap": {"digest": bmp_digest, "png_b64": _b64(pair.basemap)},
            },
        }

    # -- jobs -------------------------------------------------------------

    def submit_edit(self, session_id: str, basemap_png: bytes) -> str:
        with self._lock:
            entry = self._sessions.get(session_id)
            if entry is None:
                raise KeyError(f"unknown session {session_id!r}")
            job = Job(
                job_id=uuid.uuid4().hex,
                kind="edit_step",
                session_id=session_id,
                inputs_digest=hashlib.sha256(basemap_png).hexdigest(),
            )
            self._jobs[job.job_id] = job
            entry.queue.append((job.job_id, basemap_png))
            self._maybe_dispatch(entry)
        return job.job_id

    def _maybe_dispatch(self, entry: _SessionEntry) -> None:
        # caller holds the lock
        if entry.in_flight or not entry.queue:
            return
        job_id, payload = entry.queue.popleft()
        entry.in_flight = True
        self._pool.submit(self._run_edit_job, entry, job_id, payload)

    def _run_edit_job(self, entry: _SessionEntry, job_id: str, payload: bytes) -> None:
        job = self._jobs[job_id]
        try:
            with self._lock:
                job.advance("running")
            basemap = decode_png(payload)
            session = entry.session
            compound_edit_step(session, basemap, self.image_model, palette=self.palette)
            stage = session.stages[-1]
            result = {
                "stage_index": len(session.stages) - 1,
                "seed": stage.seed,
                "mask_empty": bool(not stage.mask_bitmap.any()),
                "artifacts": {
                    "basemap": self.artifacts.put(stage.basemap),
                    "mask": self.artifacts.put(stage.mask_bitmap.astype(np.uint8) * 255),
                    "image": self.artifacts.put(stage.satellite),
                },
            }
            with self._lock:
                job.result = result
                job.advance("done")
        except TerradiffError as e:
            with self._lock:
                job.error = {"category": "data", "message": str(e)}
                job.advance("failed")
        except Exception as e:  # noqa: BLE001 - job boundary
            with self._lock:
                job.error = {"category": "internal", "message": f"{type(e).__name__}: {e}"}
                job.advance("failed")
        finally:
            with self._lock:
                entry.in_flight = False
                self._maybe_dispatch(entry)

    def get_job(self, job_id: str) -> dict:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise KeyError(f"unknown job {job_id!r}")
            out = job.to_dict()
        if out["status"] == "done" and out["result"]:
            arts = out["result"]["artifacts"]
            out = dict(out)
            out["result"] = dict(out["result"])
            out["result"]["png_b64"] = {
                name: base64.b64encode(self.artifacts.get(d)).decode() for name, d in arts.items()
            }
        return out

    def session_info(self, session_id: str) -> dict:
        with self._lock:
            entry = self._sessions.get(session_id)
            if entry is None:
                raise KeyError(f"unknown session {session_id!r}")
            return {
                "session_id": session_id,
                "city": entry.session.reference.city,
                "stage_count": len(entry.session.stages),
                "pending": entry.in_flight or bool(entry.queue),
            }

    def meta(self) -> dict:
        return {
            "cities": self.city_index.names,
            "classes": {name: self.city_index.id_of(name) for name in self.city_index.names},
            "palette": {
                "version": self.palette.version,
                "layers": [{"name": n, "rgb": list(c)} for n, c in self.palette.layers],
            },
            "checkpoint_hash": self.checkpoint_hash,
            "resolution": self.image_model[0].config.resolution,
            "timesteps": self.image_model[1].T,
            "job_kinds": list(JOB_KINDS),
        }

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)


def _b64(raster: np.ndarray) -> str:
    return base64.b64encode(encode_png(raster)).decode()


def create_app(service: EditService):
    """FastAPI application over an EditService."""
    from fastapi import FastAPI, HTTPException, Response
    from fastapi.middleware.cors import CORSMiddleware
    from pydantic import BaseModel

    class SessionRequest(BaseModel):
        city: str
        reference_tile_id: str | None = None
        seed: int = 0

    class EditRequest(BaseModel):
        basemap_png_b64: str

    app = FastAPI(title="terradiff edit service")
    # local tool: the browser UI is served from another origin (file/dev server)
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])

    @app.post("/v1/sessions")
    def create_session(req: SessionRequest):
        try:
            return service.create_session(req.city, req.reference_tile_id, req.seed)
        except KeyError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        except DataError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e

    @app.get("/v1/sessions/{session_id}")
    def session_info(session_id: str):
        try:
            return service.session_info(session_id)
        except KeyError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e

    @app.post("/v1/sessions/{session_id}/edits")
    def submit_edit(session_id: str, req: EditRequest):
        try:
            payload = base64.b64decode(req.basemap_png_b64, validate=True)
        except Exception as e:
            raise HTTPException(status_code=400, detail=f"invalid base64 payload: {e}") from e
        try:
            job_id = service.submit_edit(session_id, payload)
        except KeyError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        return {"job_id": job_id}

    @app.get("/v1/jobs/{job_id}")
    def get_job(job_id: str):
        try:
            return service.get_job(job_id)
        except KeyError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e

    @app.get("/v1/artifacts/{digest}")
    def get_artifact(digest: str):
        try:
            return Response(content=service.artifacts.get(digest), media_type="image/png")
        except KeyError as e:
            raise HTTPException(status_code=404, detail=f"unknown artifact {digest}") from e

    @app.get("/v1/meta")
    def meta():
        return service.meta()

    return app
