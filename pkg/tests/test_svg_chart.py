import xml.etree.ElementTree as ET

from runner import RiskCurve, Series, log_checkpoints
from svg_chart import SVG_NS, chart_for


def curves():
    ck = log_checkpoints(10 ** 4)
    t = ck.astype(float)
    return [RiskCurve(ck, 1 / t, Series.LAST), RiskCurve(ck, 2 / t, Series.AVERAGED),
            RiskCurve(ck, 0.9 / t, Series.EXACT)]


class TestLogLogChart:
    def test_one_polyline_per_series(self, tmp_path):
        path = chart_for(curves(), "demo").save(tmp_path / 'chart.svg')
        root = ET.parse(path).getroot()
        lines = root.findall(f'{{{SVG_NS}}}polyline')
        assert [line.get('data-series') for line in lines] == ['last', 'averaged', 'exact']
        assert all(line.get('points') for line in lines)

    def test_reference_and_marker(self, tmp_path):
        ck = log_checkpoints(10 ** 4)
        reference = {'t': ck, 'value': 1 / ck.astype(float) ** 1.75, 'label': '1/T^1.75'}
        path = chart_for(curves(), tau=500.0, reference=reference).save(tmp_path / 'chart.svg')
        root = ET.parse(path).getroot()
        assert len(root.findall(f'{{{SVG_NS}}}polyline')) == 4
        texts = [t.text for t in root.iter(f'{{{SVG_NS}}}text')]
        assert 'tau = 500' in texts
        assert '1e4' in texts

    def test_zero_values_are_skipped(self, tmp_path):
        curve = RiskCurve([1, 10, 100], [1.0, 0.0, 0.01], Series.LAST)
        root = ET.parse(chart_for([curve]).save(tmp_path / 'c.svg')).getroot()
        (line,) = root.findall(f'{{{SVG_NS}}}polyline')
        assert len(line.get('points').split()) == 2

    def test_render_is_deterministic(self):
        first = ET.tostring(chart_for(curves()).render())
        second = ET.tostring(chart_for(curves()).render())
        assert first == second
