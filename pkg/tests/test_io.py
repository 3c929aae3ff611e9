import json
import logging
import math

import numpy as np
import pandas as pd
import pytest
from pytest import approx

from vb_hawkes.data_io import (TIE_INCREMENT, fit_cache_key, from_model_file, load_events, load_model, save_events,
                               save_model, to_model_file, write_table)
from vb_hawkes.engine import fit, predictive_mode
from vb_hawkes.errors import DataError, IncompatibleModelError, ModelFileError
from vb_hawkes.models import EventSequence, FitConfig, KernelConfig, ModelFile, Priors


@pytest.fixture
def fitted(exp_events):
    return fit(exp_events, kernel_cfg=KernelConfig(1.0, [0.1]), cfg=FitConfig(num_inducing=4, max_em_iterations=3))


class TestLoadEvents:
    def test_csv_is_sorted_and_scaled(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("0.5\n0.1\n0.9\n")
        events = load_events(str(path), scale_to=math.pi)
        assert len(events) == 3
        assert events.times[0] == 0.0
        assert np.all(np.diff(events.times) > 0)
        assert events.times[-1] < math.pi
        assert events.t_max == math.pi
        assert events.times[1] == approx(0.5 * events.times[2])

    def test_csv_comments_and_extra_columns(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("# header\n1.5,a\n\n0.5,b\n")
        events = load_events(str(path), t_max=2.0)
        np.testing.assert_array_equal(events.times, [0.5, 1.5])
        assert events.t_max == 2.0
        assert events.label == "events"

    def test_csv_window_header(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("# t_max=4.5\n0.5\n1.5\n")
        assert load_events(str(path)).t_max == 4.5
        assert load_events(str(path), t_max=6.0).t_max == 6.0

    def test_bad_window_header(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("# t_max=soon\n0.5\n")
        with pytest.raises(DataError, match=":1:"):
            load_events(str(path))

    def test_inferred_window_is_logged(self, tmp_path, caplog):
        path = tmp_path / "events.csv"
        path.write_text("0.5\n1.5\n")
        with caplog.at_level(logging.WARNING):
            events = load_events(str(path))
        assert events.t_max == 1.5
        assert "no observation window" in caplog.text

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        events = load_events(str(path))
        assert len(events) == 0
        assert events.t_max > 0

    def test_json_ties(self, tmp_path):
        path = tmp_path / "events.json"
        path.write_text(json.dumps({"t_max": 2.0, "events": [0, 0, 1]}))
        events = load_events(str(path))
        assert events.times[1] - events.times[0] == approx(TIE_INCREMENT)
        assert events.metadata['ties_perturbed'] == 1
        assert events.t_max == 2.0

    def test_json_array(self, tmp_path):
        path = tmp_path / "events.json"
        path.write_text("[0.25, 0.75]")
        events = load_events(str(path))
        np.testing.assert_array_equal(events.times, [0.25, 0.75])
        assert events.t_max == 0.75

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("0.1\n0.2\nabc\n")
        with pytest.raises(DataError, match=":3:"):
            load_events(str(path))

    @pytest.mark.parametrize("content", ['[0.1, "x"]', '{"t_max": 1.0}', '[0.1, true]', '{"events": 3}', '[0.1,'])
    def test_bad_json(self, tmp_path, content):
        path = tmp_path / "events.json"
        path.write_text(content)
        with pytest.raises(DataError):
            load_events(str(path))

    def test_negative_timestamp(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("-0.5\n0.5\n")
        with pytest.raises(DataError):
            load_events(str(path))

    def test_beyond_window(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("0.5\n3.0\n")
        with pytest.raises(DataError):
            load_events(str(path), t_max=2.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_events(str(tmp_path / "missing.csv"))

    def test_unknown_format(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("0.5\n")
        with pytest.raises(DataError):
            load_events(str(path))
        assert len(load_events(str(path), fmt='csv')) == 1


class TestSaveEvents:
    @pytest.mark.parametrize("suffix", ["csv", "json"])
    def test_round_trip(self, tmp_path, exp_events, suffix):
        path = tmp_path / f"events.{suffix}"
        save_events(exp_events, str(path))
        loaded = load_events(str(path), t_max=exp_events.t_max)
        np.testing.assert_array_equal(loaded.times, exp_events.times)

    @pytest.mark.parametrize("suffix", ["csv", "json"])
    def test_window_survives(self, tmp_path, suffix):
        sequence = EventSequence(np.array([0.1, 0.7, 2.9]), t_max=math.pi)
        path = tmp_path / f"events.{suffix}"
        save_events(sequence, str(path))
        assert load_events(str(path)).t_max == math.pi

    def test_csv_window_line(self, tmp_path):
        path = tmp_path / "events.csv"
        save_events(EventSequence(np.array([0.5]), t_max=2.0), str(path))
        assert path.read_text().splitlines()[0] == "# t_max=2"

    def test_unknown_format(self, tmp_path, exp_events):
        with pytest.raises(DataError):
            save_events(exp_events, str(tmp_path / "events.bin"))


class TestModelFile:
    def test_round_trip_is_exact(self, tmp_path, fitted):
        path = tmp_path / "model.json"
        save_model(to_model_file(fitted, metadata={'source': 'test'}), str(path))
        model = load_model(str(path))
        restored = from_model_file(model)
        np.testing.assert_array_equal(restored.state.m, fitted.state.m)
        np.testing.assert_array_equal(restored.state.s_factor, np.tril(fitted.state.s_factor))
        assert restored.state.k == fitted.state.k and restored.state.c == fitted.state.c
        np.testing.assert_array_equal(restored.gp.grid.points, fitted.gp.grid.points)
        assert restored.gp.support == fitted.gp.support
        assert restored.report.elbo_trace == fitted.report.elbo_trace
        assert model.metadata == {'source': 'test'}
        assert restored.cfg == fitted.cfg
        assert model.fit_config.num_inducing == 4

        lags = np.linspace(0.0, 1.0, 5)
        np.testing.assert_array_equal(predictive_mode(restored.state, restored.gp, lags),
                                      predictive_mode(fitted.state, fitted.gp, lags))

    def test_truncated(self, tmp_path, fitted):
        path = tmp_path / "model.json"
        save_model(to_model_file(fitted), str(path))
        text = path.read_text()
        path.write_text(text[:len(text) // 2])
        with pytest.raises(ModelFileError):
            load_model(str(path))

    def test_missing_field(self, tmp_path, fitted):
        data = to_model_file(fitted).to_dict()
        del data['m']
        path = tmp_path / "model.json"
        path.write_text(json.dumps(data))
        with pytest.raises(ModelFileError):
            load_model(str(path))

    def test_wrong_version(self, tmp_path, fitted):
        data = to_model_file(fitted).to_dict()
        data['version'] = 'vb_hawkes-model/0'
        path = tmp_path / "model.json"
        path.write_text(json.dumps(data))
        with pytest.raises(IncompatibleModelError):
            load_model(str(path))

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_model(str(tmp_path / "model.json"))

    def test_dict_round_trip(self, fitted):
        model = to_model_file(fitted)
        assert ModelFile.from_dict(model.to_dict()) == model


class TestHelpers:
    def test_write_table(self, tmp_path):
        table = pd.DataFrame({'lag': [0.0, 0.1], 'mode': [1.0 / 3.0, 2.0]})
        text = write_table(table)
        assert text.splitlines()[0] == 'lag,mode'
        assert '0.33333333333333331' in text
        path = tmp_path / "table.csv"
        assert write_table(table, str(path)) == str(path)
        assert path.read_text() == text

    def test_cache_key(self, exp_events):
        kernel_cfg, fit_cfg = KernelConfig(1.0, [0.1]), FitConfig()
        key = fit_cache_key(exp_events, kernel_cfg, Priors(1.0, 2.0), fit_cfg)
        assert key == fit_cache_key(exp_events, kernel_cfg, Priors(1.0, 2.0), fit_cfg)
        assert key != fit_cache_key(exp_events, kernel_cfg, Priors(1.0, 3.0), fit_cfg)
        assert key != fit_cache_key(exp_events, KernelConfig(1.0, [0.2]), Priors(1.0, 2.0), fit_cfg)
        shifted = EventSequence(exp_events.times, t_max=exp_events.t_max + 1.0)
        assert key != fit_cache_key(shifted, kernel_cfg, Priors(1.0, 2.0), fit_cfg)
