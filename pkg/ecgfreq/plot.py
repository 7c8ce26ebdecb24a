from plotly.colors import sample_colorscale
from plotly.subplots import make_subplots
import plotly.graph_objects as go

from typing import Literal
from pathlib import Path
import logging

import pandas as pd
import numpy as np

from .config import ARCH_NAMES
from .utils import read_csv

logger = logging.getLogger(__name__)

fig_param = {
    'size': {'w': 800, 'h': 600},
    'margin': {'t': 50, 'b': 50, 'l': 50, 'r': 50},
    'template': 'plotly_dark',
    'colors': {
        'Bright Green': '#00FF00', 'Bright Red': '#FF0000', 'Bright Yellow': '#FFCC00',
        'Bright Cyan': '#00FFFF', 'Bright Orange': '#FF9900', 'Bright Magenta': '#FF00FF',
        'Light Grey': '#AAAAAA', 'Light Blue': '#636EFA', 'Light Red': '#EF553B',
        'Dark Blue': '#0000FF', 'Dark Grey': '#7F7F7F', 'White': '#FFFFFF',
    },
    'font': {'family': 'Arial'},
    'pos_colorscale': [[0, '#414553'], [0.5, '#6E0001'], [1, '#FF0001']],
}


# utils
def _bold(text):
    return f'<b>{text}</b>'


def _color_scale(names: list[str]) -> dict[str, str]:
    if len(names) == 1:
        return {names[0]: fig_param['colors']['Bright Cyan']}
    colors = sample_colorscale('Teal', [0.4 + (n * 0.6 / (len(names) - 1)) for n in range(len(names))])
    return dict(zip(names, colors))


def _layout(fig: go.Figure, title: str, **kwargs) -> go.Figure:
    fig.update_layout(**{
        'title': _bold(title),
        'legend': dict(x=0.99, y=0.01, xanchor='right', yanchor='bottom', bgcolor='rgba(0,0,0,0)'),
        'width': fig_param['size']['w'],
        'height': fig_param['size']['h'],
        'margin': fig_param['margin'],
        'template': fig_param['template'],
        'font': fig_param['font'],
        **kwargs,
    })
    return fig


# figures
def plot_confusion_matrices(confusions: dict[str, pd.Series], title: str = 'Pooled confusion matrices') -> go.Figure:
    """One heatmap per entry; each entry holds tn, fp, fn, tp."""
    names = list(confusions)
    fig = make_subplots(rows=1, cols=len(names), subplot_titles=[_bold(n) for n in names], horizontal_spacing=0.04)
    for i, name in enumerate(names, start=1):
        cm = confusions[name]
        z = np.array([[cm['tn'], cm['fp']], [cm['fn'], cm['tp']]])
        fig.add_trace(go.Heatmap(
            z=z,
            x=['NORM', 'AFIB'],
            y=['NORM', 'AFIB'],
            text=z, texttemplate='%{text}',
            colorscale=fig_param['pos_colorscale'],
            showscale=False,
        ), row=1, col=i)
        fig.update_yaxes(autorange='reversed', row=1, col=i)
    fig.update_xaxes(title_text='Predicted')
    fig.update_yaxes(title_text='True', row=1, col=1)
    return _layout(fig, title, height=fig_param['size']['h'] // 2 + 100, width=max(fig_param['size']['w'], 250 * len(names)))


def plot_mean_curves(
    curves: dict[str, pd.DataFrame],
    kind: Literal['roc', 'pr'] = 'roc',
    prevalence: float = None,
    title: str = None,
) -> go.Figure:
    """Mean curve per entry with a +-1 std band.

    Args:
        curves: name -> frame with `x, y_mean, y_std`
        kind: 'roc' draws the chance diagonal, 'pr' the no-skill line at `prevalence`
    """
    fig = go.Figure()
    color_scale = _color_scale(list(curves))

    for name, df in curves.items():
        color = color_scale[name]
        upper = (df['y_mean'] + df['y_std']).clip(0, 1)
        lower = (df['y_mean'] - df['y_std']).clip(0, 1)
        fig.add_trace(go.Scatter(
            x=pd.concat([df['x'], df['x'][::-1]]),
            y=pd.concat([upper, lower[::-1]]),
            fill='toself', fillcolor=color, opacity=0.2,
            line=dict(width=0), hoverinfo='skip',
            legendgroup=name, showlegend=False,
        ))
        fig.add_trace(go.Scatter(
            x=df['x'], y=df['y_mean'], name=name, legendgroup=name,
            line=dict(color=color, width=2),
        ))

    if kind == 'roc':
        fig.add_trace(go.Scatter(x=[0, 1], y=[0, 1], name='Chance', line=dict(color=fig_param['colors']['Dark Grey'], dash='dash')))
        xaxis, yaxis = 'False positive rate', 'True positive rate'
    else:
        if prevalence is not None:
            fig.add_trace(go.Scatter(x=[0, 1], y=[prevalence] * 2, name=f'No skill ({prevalence:.2f})',
                                     line=dict(color=fig_param['colors']['Dark Grey'], dash='dash')))
        xaxis, yaxis = 'Recall', 'Precision'

    fig.update_xaxes(title_text=xaxis, range=[0, 1])
    fig.update_yaxes(title_text=yaxis, range=[0, 1.02])
    return _layout(fig, title or ('Mean ROC' if kind == 'roc' else 'Mean precision-recall'))


def plot_calibration(bins: dict[str, pd.DataFrame], title: str = 'Calibration') -> go.Figure:
    """Empirical positive rate vs mean predicted P(AFIB); empty bins are skipped."""
    fig = go.Figure()
    color_scale = _color_scale(list(bins))
    for name, df in bins.items():
        filled = df[df['count'] > 0]
        fig.add_trace(go.Scatter(
            x=filled['mean_p'], y=filled['pos_rate'], name=name,
            mode='lines+markers', line=dict(color=color_scale[name], width=2),
            customdata=filled['count'], hovertemplate='p=%{x:.3f}<br>rate=%{y:.3f}<br>n=%{customdata}',
        ))
    fig.add_trace(go.Scatter(x=[0, 1], y=[0, 1], name='Perfect', line=dict(color=fig_param['colors']['Dark Grey'], dash='dash')))
    fig.update_xaxes(title_text='Mean predicted probability', range=[0, 1])
    fig.update_yaxes(title_text='Fraction of AFIB', range=[0, 1])
    return _layout(fig, title)


def plot_report(report_root: str | Path, archs: list[str], fs_list: list[int]) -> dict[str, go.Figure]:
    """Build every figure of a written report directory.

    Examples:
        ```python
        figs = plot_report('out/report', ['cnn1d', 'cnnlstm'], [62, 100, 250, 500])
        write_figures(figs, 'out/report/figures')
        ```
    """
    root = Path(report_root)
    figs = {}
    for arch in archs:
        label = ARCH_NAMES.get(arch, arch)
        cells = {fs: root / arch / f'{fs}hz' for fs in fs_list if (root / arch / f'{fs}hz').exists()}
        if not cells:
            logger.warning(f'plot_report: no report cells for {arch} under {root}')
            continue

        confusions = {}
        for fs, d in cells.items():
            cm = read_csv(d / 'confusion.csv').set_index('split')
            confusions[f'{fs} Hz'] = cm.loc['validation']
        figs[f'{arch}_confusion'] = plot_confusion_matrices(confusions, f'{label}: pooled validation confusion (tau=0.5)')

        figs[f'{arch}_roc'] = plot_mean_curves(
            {f'{fs} Hz': read_csv(d / 'roc_validation.csv') for fs, d in cells.items()}, 'roc', title=f'{label}: mean ROC')
        figs[f'{arch}_pr'] = plot_mean_curves(
            {f'{fs} Hz': read_csv(d / 'pr_validation.csv') for fs, d in cells.items()}, 'pr',
            prevalence=_prevalence(cells), title=f'{label}: mean precision-recall')
        figs[f'{arch}_calibration'] = plot_calibration(
            {f'{fs} Hz': read_csv(d / 'calibration_test.csv') for fs, d in cells.items()}, f'{label}: test calibration')
    return figs


def _prevalence(cells: dict[int, Path]) -> float:
    cm = read_csv(next(iter(cells.values())) / 'confusion.csv').set_index('split').loc['validation']
    return float((cm['tp'] + cm['fn']) / (cm['tn'] + cm['fp'] + cm['fn'] + cm['tp']))


def write_figures(figs: dict[str, go.Figure], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, fig in figs.items():
        path = out_dir / f'{name}.html'
        fig.write_html(path, include_plotlyjs='cdn')
        paths.append(path)
    logger.info(f'Saved {len(paths)} figures to {out_dir}')
    return paths
