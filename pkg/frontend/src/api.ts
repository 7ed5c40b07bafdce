// Typed client for the latent service. The UI never computes geometry itself:
// every mesh shown comes back from these endpoints.

export interface Manifest {
  beta_dim: number;
  theta_dim: number;
  bone_groups: number;
  group_names: string[];
  vertex_count: number;
  face_count: number;
  checkpoint_hash: string;
  base_beta: number[];
  base_thetas: number[][];
  mesh_ids: string[];
}

export interface Topology {
  vertex_count: number;
  face_count: number;
  faces: number[];
}

export interface LatentCode {
  beta: number[];
  thetas: number[][];
}

export interface MeshPayload {
  vertices: number[];
  faces?: number[];
}

export interface EncodeResult extends LatentCode {
  residual_beta: number[];
  residual_thetas: number[][];
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `${response.status}`;
    try {
      const body = await response.json();
      if (typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body: keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ExplorerApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private get(path: string): Promise<Response> {
    return this.fetchFn(`${this.baseUrl}${path}`);
  }

  private post(path: string, body: unknown): Promise<Response> {
    return this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async manifest(): Promise<Manifest> {
    return parseOrThrow(await this.get("/manifest"));
  }

  async topology(): Promise<Topology> {
    return parseOrThrow(await this.get("/topology"));
  }

  async decode(code: LatentCode, omitFaces = true): Promise<MeshPayload> {
    return parseOrThrow(
      await this.post("/decode", {
        beta: code.beta,
        thetas: code.thetas,
        omit_faces: omitFaces,
      }),
    );
  }

  async encodeById(meshId: string): Promise<EncodeResult> {
    return parseOrThrow(await this.post("/encode", { mesh_id: meshId }));
  }

  async transfer(shapeMeshId: string, poseMeshId: string): Promise<MeshPayload> {
    return parseOrThrow(
      await this.post("/transfer", {
        shape_mesh_id: shapeMeshId,
        pose_mesh_id: poseMeshId,
        omit_faces: true,
      }),
    );
  }

  async datasetMesh(meshId: string): Promise<MeshPayload> {
    return parseOrThrow(await this.get(`/mesh/${encodeURIComponent(meshId)}`));
  }
}
