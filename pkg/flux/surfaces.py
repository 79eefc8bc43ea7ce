import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from rest_framework.serializers import ValidationError

logger = logging.getLogger(__name__)

# Golden-ratio icosahedron, vertices before normalization.
_PHI = (1.0 + np.sqrt(5.0)) / 2.0
ICOSAHEDRON_VERTICES = np.array([
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
], dtype=float)
ICOSAHEDRON_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
])


@dataclass(frozen=True)
class SurfacePatch:
    """
    Quadrature for a compact surface: element centroids, outward unit normals
    and area weights.
    """
    name: str
    centroids: np.ndarray
    normals: np.ndarray
    areas: np.ndarray

    def __post_init__(self):
        centroids = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        areas = np.asarray(self.areas, dtype=float).ravel()
        if centroids.shape != normals.shape or centroids.shape[0] != areas.shape[0]:
            raise ValidationError('Surface centroids, normals and areas must have matching lengths.')
        if np.any(np.abs(np.linalg.norm(normals, axis=1) - 1.0) > 1e-12):
            raise ValidationError('Surface normals must be unit vectors.')
        if not areas.sum() > 0 or np.any(areas < 0):
            raise ValidationError('Surface area weights must be nonnegative with positive total.')
        object.__setattr__(self, 'centroids', centroids)
        object.__setattr__(self, 'normals', normals)
        object.__setattr__(self, 'areas', areas)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @classmethod
    def sphere(cls, center=(0.0, 0.0, 0.0), radius: float = 1.0, refinement: int = 3) -> 'SurfacePatch':
        """
        Icosahedral triangulation of a sphere, refined ``refinement`` times.

        Centroids are projected onto the sphere and the area weights are
        normalized to 4 pi R^2 once the flat triangles cover the sphere to within
        the triangulation tolerance.
        """
        if not radius > 0:
            raise ValidationError(f'Sphere radius must be positive, got {radius}.')
        vertices, faces = _subdivided_icosahedron(refinement)
        triangles = vertices[faces]
        areas = 0.5 * np.linalg.norm(np.cross(triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0]),
                                     axis=1)
        normals = triangles.mean(axis=1)
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        deficit = 1.0 - areas.sum() / (4.0 * np.pi)
        if deficit > settings.SCATTERLAB_TRIANGULATION_RTOL:
            raise ValidationError(f'Sphere refinement {refinement} leaves {deficit:.3f} of the area uncovered.')
        areas *= 4.0 * np.pi / areas.sum()
        return cls(name='sphere', centroids=np.asarray(center, dtype=float) + radius * normals, normals=normals,
                   areas=radius * radius * areas)

    @classmethod
    def disk(cls, center=(0.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0), radius: float = 1.0, rings: int = 16,
             sectors: int = 32) -> 'SurfacePatch':
        """Flat disk split into annular sectors; each sector carries its exact area."""
        if not radius > 0:
            raise ValidationError(f'Disk radius must be positive, got {radius}.')
        normal = np.asarray(normal, dtype=float)
        normal = normal / np.linalg.norm(normal)
        first = np.cross(normal, [1.0, 0.0, 0.0] if abs(normal[0]) < 0.9 else [0.0, 1.0, 0.0])
        first /= np.linalg.norm(first)
        second = np.cross(normal, first)

        edges = np.linspace(0.0, radius, rings + 1)
        inner, outer = edges[:-1], edges[1:]
        width = 2.0 * np.pi / sectors
        angles = (np.arange(sectors) + 0.5) * width
        # centroid radius of an annular sector
        centroid_radius = (2.0 / 3.0) * (outer ** 3 - inner ** 3) / (outer ** 2 - inner ** 2) \
            * np.sin(width / 2.0) / (width / 2.0)
        radii, phis = np.meshgrid(centroid_radius, angles, indexing='ij')
        areas = np.repeat(0.5 * (outer ** 2 - inner ** 2) * width, sectors)
        offsets = radii.ravel()[:, None] * (np.cos(phis.ravel())[:, None] * first + np.sin(phis.ravel())[:, None] * second)
        return cls(name='disk', centroids=np.asarray(center, dtype=float) + offsets,
                   normals=np.tile(normal, (areas.size, 1)), areas=areas)


def _subdivided_icosahedron(refinement: int) -> tuple:
    vertices = [tuple(vertex / np.linalg.norm(vertex)) for vertex in ICOSAHEDRON_VERTICES]
    faces = [tuple(face) for face in ICOSAHEDRON_FACES]
    for _ in range(refinement):
        midpoints = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                point = np.add(vertices[a], vertices[b])
                vertices.append(tuple(point / np.linalg.norm(point)))
                midpoints[key] = len(vertices) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = refined
    return np.array(vertices), np.array(faces)
