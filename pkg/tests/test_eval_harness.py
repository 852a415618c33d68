import logging
import os
import shutil

import numpy as np
import pytest

import cli
from config import Settings, load_settings
from services import eval_harness, serialization
from services.ggd_model import scatter_factor
from services.image_io import downsample, load_corpus, load_grayscale, write_heatmap
from utils.errors import ConfigurationError, ZeroVarianceCorpusError

from conftest import smooth_image, write_pgm


def _settings(train_dir: str, test_dir: str, out_dir: str, **overrides) -> Settings:
    values = dict(
        train_dir=train_dir,
        test_dir=test_dir,
        out_dir=out_dir,
        block_side=4,
        working_size=16,
        n_components=5,
        max_iterations=300,
        log_every=100,
        ranks=[2, 4],
        filters=[3],
        seed=7,
    )
    values.update(overrides)
    return load_settings(**values)


def _run_all(settings: Settings):
    eval_harness.cmd_fit(settings)
    eval_harness.cmd_design(settings)
    return eval_harness.cmd_evaluate(settings)


def _records_without_time(path: str):
    return [{k: v for k, v in row.items() if k != "estimate_time_s"} for row in serialization.read_csv(path)]


class TestImageIo:
    def test_area_downsample(self):
        image = np.arange(16, dtype=float).reshape(4, 4)
        np.testing.assert_allclose(downsample(image, 2, "area"), [[2.5, 4.5], [10.5, 12.5]])

    def test_center_square(self):
        assert downsample(np.ones((6, 4)), 4).shape == (4, 4)

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            downsample(np.ones((4, 4)), 2, "nearest-ish")

    def test_load_scales_to_unit(self, tmp_path):
        path = str(tmp_path / "img.pgm")
        write_pgm(path, np.full((4, 4), 1.0))
        assert np.all(load_grayscale(path) == 1.0)

    def test_corpus_is_sorted(self, image_corpora):
        train, _ = image_corpora
        corpus = load_corpus(train, "train", 4)
        assert corpus.ids == sorted(corpus.ids)
        assert corpus.split == "train"
        assert corpus.images[0].shape == (4, 4)

    def test_heatmap_side_file(self, tmp_path):
        path = str(tmp_path / "map.pgm")
        lo, hi = write_heatmap(path, np.array([[1.0, 3.0], [2.0, 5.0]]))
        assert (lo, hi) == (1.0, 5.0)
        assert open(path + ".txt").read() == "min=1.0\nmax=5.0\n"
        pixels = load_grayscale(path) * 255
        assert pixels[0, 0] == 0 and pixels[1, 1] == 255


class TestFit:
    def test_writes_model_and_report(self, image_corpora, tmp_path):
        train, test = image_corpora
        settings = _settings(train, test, str(tmp_path / "out"))
        model, report = eval_harness.cmd_fit(settings)
        assert model.dim == 15
        assert report.best in settings.beta_grid
        assert os.path.isfile(settings.resolved_model_path())
        assert len(serialization.read_csv(os.path.join(settings.out_dir, "beta_fit.csv"))) == len(settings.beta_grid)

    def test_forced_beta(self, image_corpora, tmp_path):
        train, test = image_corpora
        settings = _settings(train, test, str(tmp_path / "out"), beta_grid=[0.68])
        model, _ = eval_harness.cmd_fit(settings)
        assert model.beta == 0.68

    def test_identical_images(self, tmp_path):
        train = tmp_path / "same"
        train.mkdir()
        image = smooth_image(np.random.default_rng(0), 16)
        for i in range(20):
            write_pgm(str(train / f"{i:02d}.pgm"), image)
        settings = _settings(str(train), str(tmp_path), str(tmp_path / "out"))
        with pytest.raises(ZeroVarianceCorpusError):
            eval_harness.cmd_fit(settings)

    def test_calibrated_scatter_factor(self, image_corpora, tmp_path, monkeypatch):
        train, test = image_corpora
        baseline, _ = eval_harness.cmd_fit(_settings(train, test, str(tmp_path / "a")))

        def off_by_ten_percent(dim, beta, count, seed):
            analytic = scatter_factor(dim, beta)
            return analytic, 1.1 * analytic

        monkeypatch.setattr(eval_harness, "verify_scatter_factor", off_by_ten_percent)
        settings = _settings(train, test, str(tmp_path / "b"), verify_samples=10)
        model, _ = eval_harness.cmd_fit(settings)
        assert model.factor == pytest.approx(1.1 * baseline.factor)
        np.testing.assert_allclose(model.scatter, 1.1 * baseline.scatter, rtol=1e-12)
        np.testing.assert_allclose(model.covariance(), baseline.covariance(), rtol=1e-12)
        loaded = serialization.read_model(settings.resolved_model_path())
        np.testing.assert_allclose(loaded.covariance(), baseline.covariance(), rtol=1e-12)

    def test_small_corpus_warns(self, image_corpora, tmp_path, caplog):
        train, test = image_corpora
        with caplog.at_level(logging.WARNING, logger="services.eval_harness"):
            eval_harness.cmd_fit(_settings(train, test, str(tmp_path / "out")))
        assert any("fewer than 100" in record.getMessage() for record in caplog.records)

    def test_same_train_and_test(self, image_corpora, tmp_path):
        train, _ = image_corpora
        settings = _settings(train, train, str(tmp_path / "out"))
        with pytest.raises(ConfigurationError):
            eval_harness.load_test_corpus(settings)


class TestDesignAndEvaluate:
    def test_design_outputs(self, image_corpora, tmp_path, capsys):
        train, test = image_corpora
        settings = _settings(train, test, str(tmp_path / "out"))
        eval_harness.cmd_fit(settings)
        design, result = eval_harness.cmd_design(settings)
        assert design.block_side == 4
        assert result.iterations <= 300
        for name in ("design_summary.csv", "svt_history.csv", "design_info.csv", "delta_targets.csv"):
            assert os.path.isfile(os.path.join(settings.out_dir, name))
        assert "rank(Q*) = " in capsys.readouterr().out
        loaded = serialization.read_design(settings.resolved_design_path())
        assert np.array_equal(loaded.q, design.q)

    def test_identity_rows_are_exact(self, image_corpora, tmp_path):
        train, test = image_corpora
        settings = _settings(train, test, str(tmp_path / "out"))
        records, summary = _run_all(settings)
        identity = [r for r in records if r.method == "identity"]
        assert len(identity) == 3
        assert all(r.rsnr_integral == 300.0 and r.rsnr_box[3] == 300.0 for r in identity)
        assert all(r.measurement_rate == 1.0 for r in identity)
        assert any(row.method == "identity" and row.images == 3 for row in summary)

    def test_deterministic(self, image_corpora, tmp_path):
        train, test = image_corpora
        first = _settings(train, test, str(tmp_path / "a"))
        second = _settings(train, test, str(tmp_path / "b"))
        _run_all(first)
        _run_all(second)
        for name in ("model.bin", "design.bin"):
            with open(os.path.join(first.out_dir, name), "rb") as a, open(os.path.join(second.out_dir, name), "rb") as b:
                assert a.read() == b.read()
        assert (_records_without_time(os.path.join(first.out_dir, "eval_records.csv"))
                == _records_without_time(os.path.join(second.out_dir, "eval_records.csv")))

    def test_block_side_mismatch(self, image_corpora, tmp_path):
        train, test = image_corpora
        settings = _settings(train, test, str(tmp_path / "out"))
        eval_harness.cmd_fit(settings)
        design, _ = eval_harness.cmd_design(settings)
        with pytest.raises(ConfigurationError):
            eval_harness.cmd_evaluate(_settings(train, test, str(tmp_path / "out"), block_side=8), design=design)

    def test_heatmap_identity_is_byte_identical(self, image_corpora, tmp_path):
        _, test = image_corpora
        settings = _settings(None, test, str(tmp_path / "out"))
        image_path = os.path.join(test, sorted(os.listdir(test))[0])
        result = eval_harness.cmd_heatmap(settings, image_path, k=3, identity=True)
        with open(result["exact"], "rb") as a, open(result["estimate"], "rb") as b:
            assert a.read() == b.read()
        assert result["correlation"] == pytest.approx(1.0)


    @pytest.mark.slow
    def test_heatmap_correlation(self, design8, desk_images, heatmap_correlation_floor, tmp_path):
        test_dir = tmp_path / "desk"
        test_dir.mkdir()
        image_path = str(test_dir / "desk_000.pgm")
        write_pgm(image_path, desk_images[0])
        settings = _settings(None, str(test_dir), str(tmp_path / "out"), block_side=8, working_size=32)
        design = design8["design"]
        result = eval_harness.cmd_heatmap(settings, image_path, k=7, design=design)
        assert result["m_rank"] == max(1, design.rank_q // 2)
        assert result["correlation"] >= heatmap_correlation_floor


class TestCli:
    def _config(self, tmp_path, train, test, **extra) -> str:
        values = {
            "TRAIN_DIR": train,
            "TEST_DIR": test,
            "OUT_DIR": str(tmp_path / "out"),
            "BLOCK_SIDE": "4",
            "WORKING_SIZE": "16",
            "N_COMPONENTS": "5",
            "MAX_ITERATIONS": "300",
            "RANKS": "2,4",
            "FILTERS": "3",
        }
        values.update(extra)
        path = tmp_path / "refine.env"
        path.write_text("".join(f"{k}={v}\n" for k, v in values.items()))
        return str(path)

    def test_fit_then_design(self, image_corpora, tmp_path):
        train, test = image_corpora
        config_path = self._config(tmp_path, train, test)
        assert cli.main(["fit", "--config", config_path]) == 0
        assert cli.main(["design", "--config", config_path, "--seed", "3"]) in (0, cli.EXIT_NOT_CONVERGED)
        assert os.path.isfile(tmp_path / "out" / "design.bin")
        assert cli.main(["evaluate", "--config", config_path]) == 0
        assert os.path.isfile(tmp_path / "out" / "eval_summary.csv")

    def test_not_converged_exit_code(self, image_corpora, tmp_path):
        train, test = image_corpora
        config_path = self._config(tmp_path, train, test, MAX_ITERATIONS="1")
        assert cli.main(["fit", "--config", config_path]) == 0
        assert cli.main(["design", "--config", config_path]) == cli.EXIT_NOT_CONVERGED
        assert os.path.isfile(tmp_path / "out" / "design.bin")

    def test_configuration_error_exit_code(self, image_corpora, tmp_path):
        train, test = image_corpora
        config_path = self._config(tmp_path, train, test, BLOCK_SIDE="6")
        assert cli.main(["fit", "--config", config_path]) == cli.EXIT_REFINE_ERROR

    def test_missing_design(self, image_corpora, tmp_path):
        train, test = image_corpora
        config_path = self._config(tmp_path, train, test)
        shutil.rmtree(tmp_path / "out", ignore_errors=True)
        assert cli.main(["evaluate", "--config", config_path]) == cli.EXIT_REFINE_ERROR

    def test_selftest(self):
        assert cli.main(["selftest", "--seed", "1"]) == 0
