from pathlib import Path

import pandas as pd
import plotly.express as px


def generate_importance_chart(report):
    """Generate importance factor chart, channels in rank order"""
    df = report.to_frame()
    if df.empty:
        return None

    df["channel"] = df["channel"].astype(str)

    # Create bar chart
    fig = px.bar(
        df,
        x="rank",
        y="factor",
        hover_data=["channel"],
        title=f"Channel importance ({report.layer})",
        labels={"rank": "Rank", "factor": "Importance factor"},
    )

    # Update layout
    fig.update_layout(
        xaxis_title="Channel rank",
        yaxis_title="Importance factor",
        showlegend=False,
    )

    return fig


def generate_ablation_chart(rows, layer=None):
    """Generate reconstruction error chart for bottom- vs top-ranked removal"""
    if not rows:
        return None

    df = pd.DataFrame(rows).melt(id_vars="K", var_name="mode", value_name="recon_error")
    df["mode"] = df["mode"].str.replace("recon_error_", "", regex=False)

    # Create line chart
    fig = px.line(
        df,
        x="K",
        y="recon_error",
        color="mode",
        markers=True,
        title=f"Pruning Top- vs Bottom-Ranking Channels{f' ({layer})' if layer else ''}",
        labels={"K": "Channels removed", "recon_error": "Relative reconstruction error", "mode": "Removed"},
    )

    # Update layout
    fig.update_layout(
        showlegend=True,
        legend_title="Removed",
        xaxis_title="Channels removed",
        yaxis_title="Relative reconstruction error",
    )

    return fig


def write_chart(fig, path):
    """Write a figure as a self-contained HTML file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs=True)
    return path
