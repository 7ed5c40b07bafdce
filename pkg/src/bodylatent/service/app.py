"""HTTP service exposing a trained checkpoint for the latent explorer.

Stateless between requests: the loaded model, dataset index, and template
topology are immutable after startup. All geometry payloads are flat JSON
number arrays; faces can be fetched once from /topology and omitted from
decode/transfer responses.
"""
from __future__ import annotations

import hashlib
from contextlib import asynccontextmanager
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from ..mesh import Mesh
from ..model import LatentCode
from ..pipeline import load_dataset, load_run


class ManifestResponse(BaseModel):
    beta_dim: int
    theta_dim: int
    bone_groups: int
    group_names: list[str]
    vertex_count: int
    face_count: int
    checkpoint_hash: str
    base_beta: list[float]
    base_thetas: list[list[float]]
    mesh_ids: list[str]


class TopologyResponse(BaseModel):
    vertex_count: int
    face_count: int
    faces: list[int]


class DecodeRequest(BaseModel):
    beta: list[float]
    thetas: list[list[float]]
    omit_faces: bool = False


class MeshResponse(BaseModel):
    vertices: list[float]
    faces: list[int] | None = None


class EncodeRequest(BaseModel):
    mesh_id: str | None = None
    vertices: list[float] | None = None


class EncodeResponse(BaseModel):
    beta: list[float]
    thetas: list[list[float]]
    residual_beta: list[float]
    residual_thetas: list[list[float]]


class TransferRequest(BaseModel):
    shape_mesh_id: str
    pose_mesh_id: str
    omit_faces: bool = False


class _ServiceState:
    def __init__(self, checkpoint_path, dataset_dir):
        self.checkpoint_path = Path(checkpoint_path)
        self.dataset_dir = Path(dataset_dir)
        self.ready = False
        self.model = None
        self.dataset = None
        self.checkpoint_hash = ""
        self.faces_flat: list = []

    def load(self):
        self.dataset = load_dataset(self.dataset_dir)
        self.model, _, _ = load_run(self.checkpoint_path, self.dataset)
        self.checkpoint_hash = hashlib.sha256(self.checkpoint_path.read_bytes()).hexdigest()
        self.faces_flat = self.model.template.faces.ravel().tolist()
        self.ready = True


def _mesh_payload(mesh: Mesh, omit_faces: bool) -> MeshResponse:
    return MeshResponse(
        vertices=mesh.vertices.ravel().tolist(),
        faces=None if omit_faces else mesh.faces.ravel().tolist(),
    )


def create_app(checkpoint_path, dataset_dir) -> FastAPI:
    state = _ServiceState(checkpoint_path, dataset_dir)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state.load()
        yield

    app = FastAPI(title="bodylatent explorer service", lifespan=lifespan)
    app.state.service = state

    def require_ready() -> _ServiceState:
        if not state.ready:
            raise HTTPException(status_code=503, detail="model is still loading")
        return state

    def check_code_dims(beta, thetas):
        model = state.model
        if len(beta) != model.config.beta_dim:
            raise HTTPException(
                status_code=400,
                detail=f"beta has length {len(beta)}, expected {model.config.beta_dim}",
            )
        if len(thetas) != model.K:
            raise HTTPException(
                status_code=400,
                detail=f"thetas has {len(thetas)} rows, expected K={model.K}",
            )
        for k, row in enumerate(thetas):
            if len(row) != model.config.theta_dim:
                raise HTTPException(
                    status_code=400,
                    detail=f"thetas[{k}] has length {len(row)}, "
                    f"expected {model.config.theta_dim}",
                )

    def mesh_by_id(mesh_id: str) -> Mesh:
        ds = state.dataset
        try:
            return ds.meshes[ds.ids.index(mesh_id)]
        except ValueError:
            raise HTTPException(status_code=404, detail=f"unknown mesh id {mesh_id!r}")

    @app.get("/manifest", response_model=ManifestResponse)
    def manifest():
        s = require_ready()
        base = s.model.base_codes()
        return ManifestResponse(
            beta_dim=s.model.config.beta_dim,
            theta_dim=s.model.config.theta_dim,
            bone_groups=s.model.K,
            group_names=list(s.model.skeleton.group_names),
            vertex_count=s.model.template.vertex_count,
            face_count=s.model.template.face_count,
            checkpoint_hash=s.checkpoint_hash,
            base_beta=base.beta.tolist(),
            base_thetas=base.thetas.tolist(),
            mesh_ids=list(s.dataset.ids),
        )

    @app.get("/topology", response_model=TopologyResponse)
    def topology():
        s = require_ready()
        return TopologyResponse(
            vertex_count=s.model.template.vertex_count,
            face_count=s.model.template.face_count,
            faces=s.faces_flat,
        )

    @app.post("/decode", response_model=MeshResponse, response_model_exclude_none=True)
    def decode(request: DecodeRequest):
        s = require_ready()
        check_code_dims(request.beta, request.thetas)
        code = LatentCode(np.array(request.beta), np.array(request.thetas))
        return _mesh_payload(s.model.decode(code), request.omit_faces)

    @app.post("/encode", response_model=EncodeResponse)
    def encode(request: EncodeRequest):
        s = require_ready()
        if (request.mesh_id is None) == (request.vertices is None):
            raise HTTPException(
                status_code=400, detail="provide exactly one of mesh_id or vertices"
            )
        if request.mesh_id is not None:
            mesh = mesh_by_id(request.mesh_id)
        else:
            expected = 3 * s.model.template.vertex_count
            if len(request.vertices) != expected:
                raise HTTPException(
                    status_code=400,
                    detail=f"vertices has length {len(request.vertices)}, "
                    f"expected {expected}",
                )
            mesh = Mesh(
                np.array(request.vertices, dtype=np.float64).reshape(-1, 3),
                s.model.template.faces,
            )
        residual = s.model.encode(mesh)
        base = s.model.base_codes()
        return EncodeResponse(
            beta=(base.beta + residual.beta).tolist(),
            thetas=(base.thetas + residual.thetas).tolist(),
            residual_beta=residual.beta.tolist(),
            residual_thetas=residual.thetas.tolist(),
        )

    @app.post("/transfer", response_model=MeshResponse, response_model_exclude_none=True)
    def transfer(request: TransferRequest):
        s = require_ready()
        shape_mesh = mesh_by_id(request.shape_mesh_id)
        pose_mesh = mesh_by_id(request.pose_mesh_id)
        return _mesh_payload(
            s.model.pose_transfer(shape_mesh, pose_mesh), request.omit_faces
        )

    @app.get("/mesh/{mesh_id}", response_model=MeshResponse,
             response_model_exclude_none=True)
    def dataset_mesh(mesh_id: str, omit_faces: bool = True):
        require_ready()
        return _mesh_payload(mesh_by_id(mesh_id), omit_faces)

    return app
