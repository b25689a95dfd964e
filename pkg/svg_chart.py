"""
Log-log chart rendering for SGD Lab
Draws risk curves as SVG polylines with decade ticks, a legend and an
optional vertical time-scale marker
"""

import logging
import math
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from errors import ConfigError
from runner import RiskCurve, Series

SVG_NS = "http://www.w3.org/2000/svg"

THEME = {
    'background': '#ffffff',
    'grid': '#d0d0d0',
    'axis': '#212121',
    'marker': '#616161',
}

SERIES_COLORS = {
    Series.LAST: '#2196F3',
    Series.AVERAGED: '#4CAF50',
    Series.RUNNING_MIN: '#9C27B0',
    Series.EXACT: '#212121',
    Series.BOUND_THM1: '#F44336',
    Series.BOUND_THM2: '#FF9800',
    Series.BOUND_THM3: '#FF5722',
}
REFERENCE_COLOR = '#FF9800'


class LogLogChart:
    def __init__(self, title: str = "", width: int = 640, height: int = 440):
        self.title = title
        self.width = width
        self.height = height
        self.margin = (70, 20, 40, 50)  # left, right, top, bottom
        self.lines: List[Tuple[str, np.ndarray, np.ndarray, str, bool]] = []
        self.markers: List[Tuple[float, str]] = []

    def add_curve(self, curve: RiskCurve, label: Optional[str] = None):
        dashed = curve.series.value.startswith('bound_')
        self.lines.append((label or curve.series.value, curve.checkpoints.astype(float),
                           curve.values, SERIES_COLORS[curve.series], dashed))

    def add_reference(self, ts: np.ndarray, values: np.ndarray, label: str):
        """Dashed guide line such as c / t^p"""
        self.lines.append((label, np.asarray(ts, dtype=float), np.asarray(values, dtype=float),
                           REFERENCE_COLOR, True))

    def add_marker(self, t: float, label: str):
        self.markers.append((t, label))

    def _bounds(self) -> Tuple[float, float, float, float]:
        xs = np.concatenate([x[y > 0] for _, x, y, _, _ in self.lines] or [np.array([])])
        ys = np.concatenate([y[y > 0] for _, _, y, _, _ in self.lines] or [np.array([])])
        xs = np.concatenate([xs, [t for t, _ in self.markers]])
        if xs.size == 0 or ys.size == 0:
            return 0.0, 1.0, 0.0, 1.0
        x_lo, x_hi = math.floor(math.log10(xs.min())), math.ceil(math.log10(xs.max()))
        y_lo, y_hi = math.floor(math.log10(ys.min())), math.ceil(math.log10(ys.max()))
        return x_lo, max(x_hi, x_lo + 1), y_lo, max(y_hi, y_lo + 1)

    def render(self) -> ET.Element:
        """Build the SVG element tree"""
        left, right, top, bottom = self.margin
        plot_w = self.width - left - right
        plot_h = self.height - top - bottom
        x_lo, x_hi, y_lo, y_hi = self._bounds()

        def px(t: float) -> float:
            return left + (math.log10(t) - x_lo) / (x_hi - x_lo) * plot_w

        def py(v: float) -> float:
            return top + (y_hi - math.log10(v)) / (y_hi - y_lo) * plot_h

        svg = ET.Element('svg', {'xmlns': SVG_NS, 'width': str(self.width), 'height': str(self.height),
                                 'viewBox': f"0 0 {self.width} {self.height}"})
        ET.SubElement(svg, 'rect', {'x': '0', 'y': '0', 'width': str(self.width),
                                    'height': str(self.height), 'fill': THEME['background']})
        if self.title:
            title = ET.SubElement(svg, 'text', {'x': str(self.width / 2), 'y': str(top / 2 + 5),
                                                'text-anchor': 'middle', 'font-size': '14'})
            title.text = self.title

        self._draw_grid(svg, x_lo, x_hi, y_lo, y_hi, px, py)

        for label, xs, ys, color, dashed in self.lines:
            keep = ys > 0
            points = ' '.join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs[keep], ys[keep]))
            attrs = {'points': points, 'fill': 'none', 'stroke': color, 'stroke-width': '1.5'}
            if dashed:
                attrs['stroke-dasharray'] = '6,4'
            line = ET.SubElement(svg, 'polyline', attrs)
            line.set('data-series', label)

        for t, label in self.markers:
            x = f"{px(t):.2f}"
            ET.SubElement(svg, 'line', {'x1': x, 'x2': x, 'y1': str(top), 'y2': str(top + plot_h),
                                        'stroke': THEME['marker'], 'stroke-dasharray': '3,3'})
            text = ET.SubElement(svg, 'text', {'x': x, 'y': str(top + 12), 'font-size': '10',
                                               'fill': THEME['marker']})
            text.text = label

        self._draw_legend(svg, left + plot_w - 150, top + 10)
        return svg

    def _draw_grid(self, svg: ET.Element, x_lo: int, x_hi: int, y_lo: int, y_hi: int, px, py):
        """Axes with one tick per decade"""
        left, right, top, bottom = self.margin
        x0, x1 = left, self.width - right
        y0, y1 = top, self.height - bottom
        for k in range(x_lo, x_hi + 1):
            x = f"{px(10.0 ** k):.2f}"
            ET.SubElement(svg, 'line', {'x1': x, 'x2': x, 'y1': str(y0), 'y2': str(y1), 'stroke': THEME['grid']})
            label = ET.SubElement(svg, 'text', {'x': x, 'y': str(y1 + 16), 'text-anchor': 'middle',
                                                'font-size': '10'})
            label.text = f"1e{k}"
        for k in range(y_lo, y_hi + 1):
            y = f"{py(10.0 ** k):.2f}"
            ET.SubElement(svg, 'line', {'x1': str(x0), 'x2': str(x1), 'y1': y, 'y2': y, 'stroke': THEME['grid']})
            label = ET.SubElement(svg, 'text', {'x': str(x0 - 6), 'y': y, 'text-anchor': 'end',
                                                'font-size': '10'})
            label.text = f"1e{k}"
        ET.SubElement(svg, 'rect', {'x': str(x0), 'y': str(y0), 'width': str(x1 - x0), 'height': str(y1 - y0),
                                    'fill': 'none', 'stroke': THEME['axis']})
        x_title = ET.SubElement(svg, 'text', {'x': str((x0 + x1) / 2), 'y': str(self.height - 8),
                                              'text-anchor': 'middle', 'font-size': '12'})
        x_title.text = 't'
        y_title = ET.SubElement(svg, 'text', {'x': '14', 'y': str((y0 + y1) / 2), 'font-size': '12',
                                              'transform': f"rotate(-90 14 {(y0 + y1) / 2})"})
        y_title.text = 'risk'

    def _draw_legend(self, svg: ET.Element, x: float, y: float):
        for i, (label, _, _, color, dashed) in enumerate(self.lines):
            row = y + 16 * i
            attrs = {'x1': str(x), 'x2': str(x + 24), 'y1': str(row), 'y2': str(row),
                     'stroke': color, 'stroke-width': '2'}
            if dashed:
                attrs['stroke-dasharray'] = '6,4'
            ET.SubElement(svg, 'line', attrs)
            text = ET.SubElement(svg, 'text', {'x': str(x + 30), 'y': str(row + 4), 'font-size': '11'})
            text.text = label

    def save(self, path: Union[str, Path]) -> Path:
        """Write the chart as an SVG file"""
        path = Path(path)
        tree = ET.ElementTree(self.render())
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tree.write(path, encoding='utf-8', xml_declaration=True)
        except OSError as e:
            raise ConfigError(f"Cannot write {path}: {e}")
        logging.info(f"Wrote chart with {len(self.lines)} lines to {path}")
        return path


def chart_for(curves: List[RiskCurve], title: str = "", tau: Optional[float] = None,
              reference: Optional[Dict] = None) -> LogLogChart:
    """Chart with one line per curve, plus an optional tau marker and reference rate"""
    chart = LogLogChart(title)
    for curve in curves:
        chart.add_curve(curve)
    if reference is not None:
        chart.add_reference(reference['t'], reference['value'], reference['label'])
    if tau is not None:
        chart.add_marker(tau, f"tau = {tau:.3g}")
    return chart
