from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd
from graphviz import Graph as DotGraph

from app.models.graph import GraphSummary, ParkingGraph

from .storage import atomic_write_text

logger = logging.getLogger(__name__)


def warn_if_edgeless(graph: ParkingGraph) -> bool:
    """Попереджає, якщо при заданому epsilon жодна пара паркінгів не зʼєднана."""
    if graph.edges():
        return False
    logger.warning("graph has no edges (epsilon=%g km)", graph.epsilon)
    return True


class GraphService:
    """
    Сервіс роботи з графом паркінгів.
    Інкапсулює запити до графа та експорт матриць і схеми
    для використання з CLI.
    """

    def __init__(self, graph: ParkingGraph) -> None:
        self._graph = graph
        warn_if_edgeless(graph)

    @property
    def graph(self) -> ParkingGraph:
        return self._graph

    # ---------- вершини ----------

    def neighbours(self, site_id: str) -> Dict[str, float]:
        """Сусіди вершини з вагами ребер."""
        i = self._graph.index_of(site_id)
        ids = self._graph.site_ids
        row = self._graph.adjacency[i]
        return {ids[j]: float(row[j]) for j in np.nonzero(row)[0]}

    def summary(self) -> GraphSummary:
        return self._graph.summary()

    # ---------- експорт ----------

    def metadata_line(self) -> str:
        g = self._graph
        return (
            f"# epsilon_km={g.epsilon!r} radius_km={g.radius!r} "
            f"weight_mode={g.weight_mode} order={','.join(g.site_ids)}"
        )

    def matrix_csv(self, which: str = "adjacency") -> str:
        """
        Матриця з заголовками site_id по рядках і стовпцях,
        перший рядок – коментар з параметрами побудови.
        """
        matrices = {
            "adjacency": self._graph.adjacency,
            "normalized": self._graph.normalized,
            "distances": self._graph.distances,
        }
        if which not in matrices:
            raise ValueError(f"unknown matrix '{which}'")
        ids = list(self._graph.site_ids)
        frame = pd.DataFrame(matrices[which], index=ids, columns=ids)
        frame.index.name = "site_id"
        return self.metadata_line() + "\n" + frame.to_csv(float_format="%.17g")

    def to_dot(self) -> DotGraph:
        """Схема графа для graphviz: вершини – паркінги, ребра – підписані відстанню."""
        dot = DotGraph("parking_graph")
        dot.attr(layout="neato", overlap="false")
        dot.attr("node", shape="circle", fontname="DejaVu Sans")
        dot.attr("edge", fontname="DejaVu Sans", fontsize="9")
        for p in self._graph.nodes:
            # neato читає pos у дюймах; масштабуємо градуси, щоб райони не злипались
            dot.node(p.site_id, p.site_id, pos=f"{p.lon * 1000:.3f},{p.lat * 1000:.3f}!")
        for a, b, _ in self._graph.edges():
            d = self._graph.distances[self._graph.index_of(a), self._graph.index_of(b)]
            dot.edge(a, b, label=f"{d:.3f} km")
        return dot

    def export(self, out_dir: Path) -> List[Path]:
        out_dir = Path(out_dir)
        written = [
            atomic_write_text(out_dir / "adjacency.csv", self.matrix_csv("adjacency")),
            atomic_write_text(out_dir / "adjacency_normalized.csv", self.matrix_csv("normalized")),
            atomic_write_text(out_dir / "graph.dot", self.to_dot().source),
        ]
        s = self.summary()
        logger.info(
            "graph: %d nodes, %d edges, distances %.3f..%.3f km",
            s.nodes, s.edges, s.min_distance_km, s.max_distance_km,
        )
        return written
