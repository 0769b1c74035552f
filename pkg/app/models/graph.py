from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import DomainError, ValidationError

EARTH_RADIUS_KM = 6371.0
DEFAULT_EPSILON_KM = 0.35

WEIGHT_MODES = ("distance", "gaussian", "binary")


@dataclass(frozen=True)
class GeoPoint:
    """
    Вершина графа – паркінг.
    lat, lon – координати у градусах;
    site_id  – ідентифікатор паркінгу (непрозорий рядок).
    """
    lat: float
    lon: float
    site_id: str

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0) or math.isnan(self.lat):
            raise DomainError(f"latitude {self.lat!r} of '{self.site_id}' is outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0) or math.isnan(self.lon):
            raise DomainError(f"longitude {self.lon!r} of '{self.site_id}' is outside [-180, 180]")


@dataclass(frozen=True)
class GraphSummary:
    nodes: int
    edges: int
    min_distance_km: float
    max_distance_km: float


class ParkingGraph:
    """
    Граф паркінгів з фіксованим порядком вершин (за зростанням site_id).
    Зберігаємо:
    - список вершин;
    - матрицю попарних відстаней;
    - сиру матрицю суміжності A;
    - нормалізовану матрицю A_hat = D^-1/2 (A + I) D^-1/2.
    Після створення всі матриці доступні лише для читання.
    """

    def __init__(
        self,
        nodes: Sequence[GeoPoint],
        distances: np.ndarray,
        adjacency: np.ndarray,
        epsilon: float,
        radius: float,
        weight_mode: str = "distance",
    ) -> None:
        self._nodes: Tuple[GeoPoint, ...] = tuple(nodes)
        self._distances = _frozen(distances)
        self._adjacency = _frozen(adjacency)
        self._normalized = _frozen(normalize_adjacency(adjacency))
        self._epsilon = float(epsilon)
        self._radius = float(radius)
        self._weight_mode = weight_mode
        self._index: Dict[str, int] = {p.site_id: i for i, p in enumerate(self._nodes)}

    # ----------------- базові властивості -----------------

    @property
    def nodes(self) -> Tuple[GeoPoint, ...]:
        return self._nodes

    @property
    def site_ids(self) -> List[str]:
        return [p.site_id for p in self._nodes]

    @property
    def distances(self) -> np.ndarray:
        return self._distances

    @property
    def adjacency(self) -> np.ndarray:
        return self._adjacency

    @property
    def normalized(self) -> np.ndarray:
        return self._normalized

    @property
    def epsilon(self) -> float:
        return self._epsilon

    @property
    def radius(self) -> float:
        return self._radius

    @property
    def weight_mode(self) -> str:
        return self._weight_mode

    def __len__(self) -> int:
        return len(self._nodes)

    # ----------------- допоміжні методи -----------------

    def index_of(self, site_id: str) -> int:
        try:
            return self._index[site_id]
        except KeyError:
            raise ValidationError(f"unknown site_id '{site_id}'") from None

    def edges(self) -> List[Tuple[str, str, float]]:
        """
        Неорієнтовані ребра (i < j) з ненульовою вагою.
        """
        ids = self.site_ids
        rows, cols = np.nonzero(np.triu(self._adjacency, k=1))
        return [(ids[i], ids[j], float(self._adjacency[i, j])) for i, j in zip(rows, cols)]

    def summary(self) -> GraphSummary:
        n = len(self._nodes)
        off_diag = self._distances[~np.eye(n, dtype=bool)]
        return GraphSummary(
            nodes=n,
            edges=len(self.edges()),
            min_distance_km=float(off_diag.min()) if off_diag.size else 0.0,
            max_distance_km=float(off_diag.max()) if off_diag.size else 0.0,
        )


def _frozen(matrix: np.ndarray) -> np.ndarray:
    out = np.array(matrix, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


# ----------------- відстані -----------------

def haversine_distance(p1: GeoPoint, p2: GeoPoint, radius: float = EARTH_RADIUS_KM) -> float:
    """
    Відстань по великому колу між двома паркінгами, у тих самих одиницях, що й radius.
    a, b – піврізниці широт і довгот у радіанах.
    """
    if radius <= 0:
        raise DomainError(f"radius must be positive, got {radius!r}")

    lat1 = math.radians(p1.lat)
    lat2 = math.radians(p2.lat)
    a = (lat1 - lat2) / 2.0
    b = math.radians(p1.lon - p2.lon) / 2.0

    h = math.sin(a) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(b) ** 2
    # похибка округлення може дати h трохи більше за 1 для діаметрально протилежних точок
    h = min(1.0, max(0.0, h))
    return 2.0 * radius * math.asin(math.sqrt(h))


def distance_matrix(points: Sequence[GeoPoint], radius: float = EARTH_RADIUS_KM) -> np.ndarray:
    n = len(points)
    dist = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = haversine_distance(points[i], points[j], radius)
            dist[i, j] = d
            dist[j, i] = d
    return dist


# ----------------- побудова графа -----------------

def build_adjacency(
    points: Sequence[GeoPoint],
    epsilon: float = DEFAULT_EPSILON_KM,
    radius: float = EARTH_RADIUS_KM,
    weight_mode: str = "distance",
) -> ParkingGraph:
    """
    Порогова матриця суміжності: A_ij = d_ij, якщо d_ij <= epsilon, інакше 0.
    Вершини впорядковуються за site_id.

    weight_mode:
    - distance – вага дорівнює відстані (як у формулі);
    - binary   – 1 для кожного збереженого ребра;
    - gaussian – exp(-d^2 / sigma^2), sigma – стандартне відхилення збережених відстаней.
    """
    if not points:
        raise ValidationError("at least one site is required to build a graph")
    if epsilon < 0:
        raise DomainError(f"epsilon must be non-negative, got {epsilon!r}")
    if weight_mode not in WEIGHT_MODES:
        raise ValidationError(f"unknown weight mode '{weight_mode}', expected one of {WEIGHT_MODES}")

    seen = set()
    for p in points:
        if p.site_id in seen:
            raise ValidationError(f"duplicate site_id '{p.site_id}'")
        seen.add(p.site_id)

    nodes = sorted(points, key=lambda p: p.site_id)
    dist = distance_matrix(nodes, radius)

    n = len(nodes)
    keep = (dist <= epsilon) & ~np.eye(n, dtype=bool)

    if weight_mode == "distance":
        adjacency = np.where(keep, dist, 0.0)
    elif weight_mode == "binary":
        adjacency = keep.astype(np.float64)
    else:
        kept = dist[keep]
        sigma = float(kept.std()) if kept.size else 0.0
        if sigma == 0.0:
            sigma = epsilon if epsilon > 0 else 1.0
        adjacency = np.where(keep, np.exp(-(dist ** 2) / sigma ** 2), 0.0)

    return ParkingGraph(nodes, dist, adjacency, epsilon, radius, weight_mode)


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """
    A_hat = D^-1/2 (A + I) D^-1/2, де D_ii = sum_j (A + I)_ij.
    Завдяки петлям D_ii >= 1, тому ділення на нуль неможливе.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValidationError("adjacency must be symmetric")
    if (a < 0).any():
        raise ValidationError("adjacency must be non-negative")

    a_tilde = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    a_hat = d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]

    # дзеркалимо верхній трикутник, щоб симетрія була точною, а не з точністю до ulp
    return np.triu(a_hat) + np.triu(a_hat, k=1).T
