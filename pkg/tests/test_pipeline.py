"""End-to-end runs of the CLI commands on a small synthetic corpus."""

import csv
import json

import pytest

from qbv_engine.barkgram import read_barkgram_binary
from qbv_engine.config import load_run_config
from qbv_engine.lmer import write_results_csv
from qbv_engine.main import main
from qbv_engine.models import FeatureSetResult
from qbv_engine.pipeline import PipelineError, QbvPipeline


BASELINES = "pk08,temp,mfcc"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic corpus plus baseline features and an evaluation, shared by the module."""
    out = tmp_path_factory.mktemp("run")
    code = main(["synth", "--out", str(out), "--features", BASELINES, "--seed", "3",
                 "--sounds-per-class", "3", "--imitations-per-sound", "2", "--listeners", "12", "--pages", "8"])
    assert code == 0
    config = out / "synthetic" / "qbv.ini"
    assert main(["extract", "--config", str(config)]) == 0
    assert main(["evaluate", "--config", str(config)]) == 0
    return out, config


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_synth_writes_a_runnable_configuration(workspace):
    out, config = workspace
    assert (out / "synthetic" / "manifest.csv").exists()
    assert (out / "synthetic" / "ratings.csv").exists()
    assert len(list((out / "synthetic" / "audio").glob("*.wav"))) == 45

    run = load_run_config(config)
    assert run.output_dir.resolve() == out.resolve()
    assert run.feature_sets == ["pk08", "temp", "mfcc"]


def test_evaluate_gives_the_rating_oracle_the_lowest_aic(workspace):
    out, _ = workspace
    results = read_rows(out / "results.csv")
    assert [r["extractor_id"] for r in results] == ["pk08", "temp", "mfcc"]

    aic = {r["extractor_id"]: float(r["aic"]) for r in results}
    assert aic["pk08"] < min(aic["temp"], aic["mfcc"])

    for name in ("pk08", "temp", "mfcc"):
        assert (out / "slopes" / f"{name}.csv").exists()
        assert (out / "distances" / f"{name}.csv").exists()


def test_feature_files_follow_manifest_order(workspace):
    out, config = workspace
    manifest_ids = [r["id"] for r in read_rows(out / "synthetic" / "manifest.csv")]
    rows = read_rows(out / "features" / "mfcc.csv")
    assert [r["id"] for r in rows] == manifest_ids
    assert {r["dim"] for r in rows} == {"78"}
    assert {r["dim"] for r in read_rows(out / "features" / "temp.csv")} == {"5"}


def test_extraction_is_deterministic(workspace, tmp_path):
    out, config = workspace
    assert main(["extract", "--config", str(config), "--out", str(tmp_path), "--features", "mfcc,temp"]) == 0
    for name in ("mfcc", "temp"):
        assert (tmp_path / "features" / f"{name}.csv").read_bytes() == (out / "features" / f"{name}.csv").read_bytes()


def test_query_ranks_a_library_sound_against_itself_first(workspace, capsys):
    out, config = workspace
    audio = out / "synthetic" / "audio" / "kick-00.wav"
    capsys.readouterr()
    assert main(["query", str(audio), "--extractor", "mfcc", "--config", str(config)]) == 0

    lines = [line for line in capsys.readouterr().out.splitlines() if line[:1].isdigit()]
    assert len(lines) == 15
    assert lines[0] == "1,kick-00,0.0"
    distances = [float(line.split(",")[2]) for line in lines]
    assert distances == sorted(distances)


def test_report_summarises_every_stage(workspace):
    out, config = workspace
    assert main(["report", "--config", str(config)]) == 0

    report = json.loads((out / "report.json").read_text())
    assert report["screening"]["retained_listeners"] >= 1
    assert 0.0 <= report["identification"]["top1"] <= 1.0
    assert set(report["retrieval"]) == {"pk08", "temp", "mfcc"}
    assert [r["extractor_id"] for r in report["results"]] == ["pk08", "temp", "mfcc"]


def test_report_writes_non_finite_values_as_null(workspace, tmp_path):
    _, config = workspace
    run = load_run_config(config, output_dir=tmp_path, feature_sets="temp")
    write_results_csv([FeatureSetResult(extractor_id="temp", aic=float("nan"), accuracy=0.0,
                                        n_significant=0, n_sounds=15)], tmp_path / "results.csv")

    QbvPipeline(run).report()

    text = (tmp_path / "report.json").read_text()
    report = json.loads(text, parse_constant=lambda c: pytest.fail(f"report.json contains {c}"))
    assert report["results"][0]["aic"] is None
    assert report["results"][0]["n_sounds"] == 15


def test_ingest_stores_both_barkgram_resolutions(workspace, tmp_path):
    _, config = workspace
    assert main(["ingest", "--config", str(config), "--out", str(tmp_path)]) == 0

    stored = read_barkgram_binary(tmp_path / "barkgrams" / "72" / "kick-00.bkg")
    assert stored.n_bands == 72
    assert read_barkgram_binary(tmp_path / "barkgrams" / "128" / "kick-00-imit1.bkg").n_bands == 128
    assert len(list((tmp_path / "barkgrams" / "128").glob("*.bkg"))) == 45


def test_evaluate_without_ratings_fails_cleanly(tmp_path):
    assert main(["evaluate", "--out", str(tmp_path), "--features", "mfcc"]) == 1
    assert not (tmp_path / "results.csv").exists()


def test_cae_features_need_a_checkpoint(workspace, tmp_path):
    _, config = workspace
    run = load_run_config(config, output_dir=tmp_path)
    with pytest.raises(PipelineError, match="missing checkpoint"):
        QbvPipeline(run).extract(["cae-1"])
    assert main(["extract", "--config", str(config), "--out", str(tmp_path), "--variant", "1"]) == 1


def test_distances_need_features_first(workspace, tmp_path):
    _, config = workspace
    pipeline = QbvPipeline(load_run_config(config, output_dir=tmp_path))
    with pytest.raises(PipelineError, match="run extract"):
        pipeline.distance_table("pk08")


@pytest.mark.slow
def test_oracle_beats_every_other_feature_set_including_a_trained_auto_encoder(tmp_path):
    # few ratings per sound and low noise: the oracle stays significant everywhere, the others cannot
    assert main(["synth", "--out", str(tmp_path), "--features", "pk08,mfcc,temp,cae-3", "--seed", "11",
                 "--sounds-per-class", "4", "--imitations-per-sound", "2", "--listeners", "10", "--pages", "8",
                 "--rating-noise", "0.02"]) == 0
    run = load_run_config(tmp_path / "synthetic" / "qbv.ini")
    run.training = run.training.model_copy(update={"batch_size": 8, "max_epochs": 3})
    pipeline = QbvPipeline(run)

    checkpoint = pipeline.train_cae(3)
    assert checkpoint == tmp_path / "checkpoints" / "cae-3.cae"
    assert (tmp_path / "checkpoints" / "cae-3-history.csv").exists()

    pipeline.extract()
    assert {r["dim"] for r in read_rows(tmp_path / "features" / "cae-3.csv")} == {"128"}

    results = {r.extractor_id: r for r in pipeline.evaluate()}
    assert set(results) == {"pk08", "mfcc", "temp", "cae-3"}
    oracle = results.pop("pk08")
    for name, other in results.items():
        assert oracle.aic < other.aic, name
        assert oracle.accuracy > other.accuracy, name


def test_synth_rejects_negative_rating_noise(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--rating-noise", "-0.1"]) == 1
    assert not (tmp_path / "synthetic").exists()
