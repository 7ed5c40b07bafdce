import { describe, expect, it, vi } from "vitest";

import { ApiError, ExplorerApi } from "./api";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function mockFetch(handler: () => Response) {
  return vi.fn(async (_url: string, _init?: RequestInit) => handler());
}

describe("ExplorerApi", () => {
  it("posts codes to /decode with omit_faces", async () => {
    const fetchFn = mockFetch(() => jsonResponse({ vertices: [1, 2, 3] }));
    const api = new ExplorerApi("http://svc", fetchFn);
    const payload = await api.decode({ beta: [0.5], thetas: [[1, 2]] });
    expect(payload.vertices).toEqual([1, 2, 3]);
    const [url, init] = fetchFn.mock.calls[0];
    expect(url).toBe("http://svc/decode");
    expect(JSON.parse(init!.body as string)).toEqual({
      beta: [0.5],
      thetas: [[1, 2]],
      omit_faces: true,
    });
  });

  it("surfaces the service's field-level 400 message", async () => {
    const fetchFn = mockFetch(() =>
      jsonResponse({ detail: "beta has length 3, expected 10" }, 400),
    );
    const api = new ExplorerApi("", fetchFn);
    await expect(api.decode({ beta: [1, 2, 3], thetas: [] })).rejects.toThrow(
      "beta has length 3, expected 10",
    );
  });

  it("maps unknown mesh ids to an ApiError with status 404", async () => {
    const fetchFn = mockFetch(() =>
      jsonResponse({ detail: "unknown mesh id 'nope'" }, 404),
    );
    const api = new ExplorerApi("", fetchFn);
    const failure = api.encodeById("nope");
    await expect(failure).rejects.toBeInstanceOf(ApiError);
    await expect(api.encodeById("nope")).rejects.toMatchObject({ status: 404 });
  });

  it("sends both mesh ids to /transfer", async () => {
    const fetchFn = mockFetch(() => jsonResponse({ vertices: [] }));
    const api = new ExplorerApi("", fetchFn);
    await api.transfer("body_0001", "body_0002");
    const [url, init] = fetchFn.mock.calls[0];
    expect(url).toBe("/transfer");
    expect(JSON.parse(init!.body as string)).toEqual({
      shape_mesh_id: "body_0001",
      pose_mesh_id: "body_0002",
      omit_faces: true,
    });
  });

  it("fetches raw dataset meshes for the side-by-side transfer view", async () => {
    const fetchFn = mockFetch(() => jsonResponse({ vertices: [7, 8, 9] }));
    const api = new ExplorerApi("", fetchFn);
    const payload = await api.datasetMesh("body_0003");
    expect(fetchFn.mock.calls[0][0]).toBe("/mesh/body_0003");
    expect(payload.vertices).toEqual([7, 8, 9]);
  });

  it("returns the transfer payload verbatim for rendering", async () => {
    // the transfer view must show exactly what a direct service call returns
    const vertices = [0.25, 1.5, -3.0, 0.125, 0, 9];
    const fetchFn = mockFetch(() => jsonResponse({ vertices }));
    const api = new ExplorerApi("", fetchFn);
    const payload = await api.transfer("a", "b");
    expect(payload.vertices).toEqual(vertices);
  });
});
