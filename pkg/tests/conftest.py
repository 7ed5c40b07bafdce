import numpy as np
import pytest

from bodylatent.mesh import Mesh


def make_tetrahedron(scale=1.0):
    """Regular tetrahedron with unit edge length (times scale), outward winding."""
    verts = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64
    ) * (scale / (2.0 * np.sqrt(2.0)))
    faces = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]
    return Mesh(verts, faces)


def make_icosahedron():
    """Regular icosahedron, outward winding."""
    p = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    return Mesh(verts, faces)


def make_grid(n=10, spacing=0.1):
    """Flat n x n triangulated grid in the z=0 plane (open boundary)."""
    xs, ys = np.meshgrid(np.arange(n) * spacing, np.arange(n) * spacing, indexing="ij")
    verts = np.stack([xs.ravel(), ys.ravel(), np.zeros(n * n)], axis=1)
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a = i * n + j
            b = a + 1
            c = a + n
            d = c + 1
            faces.append([a, d, b])
            faces.append([a, c, d])
    return Mesh(verts, faces)


def make_icosphere(subdivisions=2, radius=1.0):
    """Icosahedron subdivided and projected to a sphere (closed manifold)."""
    base = make_icosahedron()
    verts = [tuple(v) for v in base.vertices / np.linalg.norm(base.vertices[0])]
    faces = [tuple(f) for f in base.faces]
    for _ in range(subdivisions):
        lookup = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in lookup:
                m = np.array(verts[i]) + np.array(verts[j])
                m /= np.linalg.norm(m)
                lookup[key] = len(verts)
                verts.append(tuple(m))
            return lookup[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.array(verts) * radius, np.array(faces))


def make_band_skeleton(mesh, K=4):
    """Latitude-band part labels with centroid joints; single-joint groups."""
    from bodylatent.skeleton import SkeletonSpec

    z = mesh.vertices[:, 2]
    edges = np.quantile(z, np.linspace(0, 1, K + 1))
    labels = np.clip(np.searchsorted(edges, z, side="right") - 1, 0, K - 1)
    reg = np.zeros((K, mesh.vertex_count))
    for k in range(K):
        members = np.nonzero(labels == k)[0]
        reg[k, members] = 1.0 / len(members)
    return SkeletonSpec(K, [f"j{k}" for k in range(K)], reg, labels,
                        [[k] for k in range(K)], [f"g{k}" for k in range(K)])


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A small trained checkpoint + dataset shared by CLI/service tests."""
    from bodylatent.pipeline import RunConfig, load_dataset, save_run, train
    from bodylatent.synth import GeneratorSpec, write_dataset

    root = tmp_path_factory.mktemp("tiny_run")
    dataset_dir = root / "dataset"
    write_dataset(dataset_dir, n=10, seed=2, spec=GeneratorSpec(voxel_size=0.07))
    dataset = load_dataset(dataset_dir)
    config = RunConfig(
        dataset=str(dataset_dir),
        ratios=(0.5, 0.5, 0.5, 0.7),
        spiral_lengths=(10, 10, 10, 10),
        beta_dim=6,
        theta_dim=4,
        enc_channels=(8, 12, 12, 16),
        shape_hidden=24,
        pose_hidden=(16, 8),
        feature_dim=6,
        epochs=2,
        seed=4,
    )
    model, report = train(config, dataset)
    checkpoint = root / "model.ckpt"
    save_run(model, config, report, checkpoint)
    return {
        "root": root,
        "dataset_dir": dataset_dir,
        "dataset": dataset,
        "config": config,
        "model": model,
        "checkpoint": checkpoint,
    }


@pytest.fixture(scope="session")
def tetrahedron():
    return make_tetrahedron()


@pytest.fixture(scope="session")
def icosahedron():
    return make_icosahedron()


@pytest.fixture(scope="session")
def grid10():
    return make_grid(10)
