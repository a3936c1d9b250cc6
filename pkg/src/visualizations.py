"""
EdgeTracer Visualization Module

Static curve overlays (matplotlib) and the interactive energy history chart (plotly).
"""

from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import plotly.graph_objects as go  # noqa: E402

from models import CurveNetwork, GridImage  # noqa: E402

ENERGY_TRACES = [
    ("total", "Total E^h"),
    ("length_term", "Length"),
    ("gradient_term", "Gradient"),
    ("fidelity_term", "Fidelity"),
]


class OverlayRenderer:
    """Curves drawn over a gray-level image."""

    @staticmethod
    def create_figure(
        image: GridImage, network: CurveNetwork, title: Optional[str] = None
    ) -> plt.Figure:
        """
        Image in PGM orientation (row 0 on top) with every curve; free endpoints
        are marked with dots, closed curves drawn as loops.
        """
        width, height = network.extent
        fig, ax = plt.subplots(figsize=(6, 6 * height / max(width, 1e-12)))
        ax.imshow(
            image.values.T,
            cmap="gray",
            vmin=0.0,
            vmax=1.0,
            extent=(0.0, width, height, 0.0),
            interpolation="nearest",
        )
        for curve in network.curves:
            nodes = curve.nodes
            if curve.closed:
                nodes = nodes[list(range(curve.n_nodes)) + [0]]
            ax.plot(nodes[:, 0], nodes[:, 1], color="tab:red", linewidth=1.2)
            for rho in curve.free_ends():
                x, y = curve.nodes[curve.end_index(rho)]
                ax.plot([x], [y], "o", color="tab:orange", markersize=4)
        ax.set_xlim(0.0, width)
        ax.set_ylim(height, 0.0)
        ax.set_axis_off()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return fig

    @staticmethod
    def render(
        image: GridImage,
        network: CurveNetwork,
        path: Union[str, Path],
        title: Optional[str] = None,
    ) -> Path:
        fig = OverlayRenderer.create_figure(image, network, title)
        try:
            fig.savefig(path, dpi=100)
        finally:
            plt.close(fig)
        return Path(path)


class EnergyHistoryChart:
    """Energy terms over the steps of a run."""

    @staticmethod
    def create(energy: pd.DataFrame) -> go.Figure:
        """
        Args:
            energy: frame with the energy.csv columns

        Returns:
            Plotly figure with one line per term; phase changes shown as dashed lines
        """
        fig = go.Figure()
        for column, label in ENERGY_TRACES:
            fig.add_trace(go.Scatter(
                x=energy["step"],
                y=energy[column],
                mode="lines",
                name=label,
            ))

        if "phase" in energy.columns and len(energy):
            changes = energy.loc[energy["phase"].ne(energy["phase"].shift()), ["step", "phase"]]
            for step, phase in changes.iloc[1:].itertuples(index=False):
                fig.add_vline(x=step, line_dash="dash", annotation_text=str(phase))

        fig.update_layout(
            title="Energy History",
            xaxis_title="Step",
            yaxis_title="Energy",
            height=400,
            hovermode="x unified",
        )
        return fig

    @staticmethod
    def write_html(energy: pd.DataFrame, path: Union[str, Path]) -> Path:
        EnergyHistoryChart.create(energy).write_html(str(path), include_plotlyjs="cdn")
        return Path(path)
