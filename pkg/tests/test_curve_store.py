import numpy as np
import pytest

from curve_store import CSV_COLUMNS, read_curves, write_curves, write_records
from errors import ConfigError
from runner import RiskCurve, Series


def sample_curves():
    last = RiskCurve([1, 10, 100], [0.5, 0.1, 0.01], Series.LAST, 10, [0.05, 0.01, 0.001], 'demo')
    exact = RiskCurve([1, 10, 100], [0.5, 0.1, 0.01], Series.EXACT, 1, None, 'demo')
    return [last, exact]


class TestCurveStore:
    def test_header_and_rows(self, tmp_path):
        path = write_curves(sample_curves(), tmp_path / 'curves.csv')
        lines = path.read_text().splitlines()
        assert lines[0] == ','.join(CSV_COLUMNS)
        assert len(lines) == 7
        assert lines[1] == 'demo,last,1,0.5,0.050000000000000003,10'

    def test_exact_rows_have_empty_stderr(self, tmp_path):
        path = write_curves(sample_curves(), tmp_path / 'curves.csv')
        exact_rows = [line for line in path.read_text().splitlines() if ',exact,' in line]
        assert exact_rows[1] == 'demo,exact,10,0.10000000000000001,,1'

    def test_read_back(self, tmp_path):
        path = write_curves(sample_curves(), tmp_path / 'curves.csv')
        last, exact = read_curves(path)
        assert last.series is Series.LAST and last.replicates == 10
        assert np.array_equal(last.values, sample_curves()[0].values)
        assert exact.stderrs is None

    def test_rewrite_is_byte_identical(self, tmp_path):
        a = write_curves(sample_curves(), tmp_path / 'a.csv')
        b = write_curves(sample_curves(), tmp_path / 'b.csv')
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_header(self, tmp_path):
        path = tmp_path / 'other.csv'
        path.write_text('a,b\n1,2\n')
        with pytest.raises(ConfigError):
            read_curves(path)

    def test_records(self, tmp_path):
        path = write_records([{'check': 'x', 'passed': True}], ['check', 'passed'], tmp_path / 'r.csv')
        assert path.read_text().splitlines() == ['check,passed', 'x,True']
