import numpy as np
import pytest

from pullmesh.meshing import TriangleMesh, weld_mesh


def make_tetrahedron() -> TriangleMesh:
    vertices = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    )
    faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriangleMesh(vertices, faces)


def make_cube(center=(0.0, 0.0, 0.0), edge=1.0) -> TriangleMesh:
    """Axis-aligned cube, 12 outward-facing triangles."""
    c = np.asarray(center, dtype=np.float64)
    h = edge / 2.0
    corners = np.array(
        [[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)]
    ) + c
    # index bits: x*4 + y*2 + z
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, cc, d in quads:
        faces.append([a, b, cc])
        faces.append([a, cc, d])
    return TriangleMesh(corners, np.array(faces))


def make_icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron projected to the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    for _ in range(subdivisions):
        new_faces = []
        verts = list(vertices)
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                midpoint[key] = len(verts)
                verts.append((verts[i] + verts[j]) / 2.0)
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        vertices = np.array(verts)
        faces = np.array(new_faces)
    vertices = vertices / np.linalg.norm(vertices, axis=1, keepdims=True) * radius
    return weld_mesh(TriangleMesh(vertices, faces))


def make_torus_mesh(ring: float = 0.5, tube: float = 0.15, nu: int = 48, nv: int = 24) -> TriangleMesh:
    """Structured torus grid around the z axis, outward winding."""
    iu, iv = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    u = 2 * np.pi * iu / nu
    v = 2 * np.pi * iv / nv
    x = (ring + tube * np.cos(v)) * np.cos(u)
    y = (ring + tube * np.cos(v)) * np.sin(u)
    z = tube * np.sin(v)
    vertices = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriangleMesh(vertices, np.array(faces))


@pytest.fixture(scope="session")
def tetrahedron():
    return make_tetrahedron()


@pytest.fixture(scope="session")
def unit_cube():
    return make_cube()


@pytest.fixture(scope="session")
def icosphere():
    return make_icosphere(subdivisions=2, radius=1.0)


@pytest.fixture(scope="session")
def torus_mesh():
    return make_torus_mesh()
