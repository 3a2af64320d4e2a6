"""
Orchestration of the full workflow: ingest, train, extract, distances, evaluate, report.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar
import numpy as np
from rich.console import Console
from rich.table import Table
from .barkgram import CAE_BANDS, PK08_BANDS, BarkgramError, barkgram, cae_input, write_barkgram_binary
from .cae import CaeError, build_cae, init_model
from .checkpoint import CheckpointError, save_checkpoint
from .config import RunConfig
from .corpus import AudioClip, CorpusError, Manifest, load_manifest, load_wav, split_train_val
from .features import FeatureError, create_extractor, read_feature_csv, write_feature_csv
from .layers import LayerError
from .lmer import LmerError, fit_lmer, slope_report, summarize, wald_ci, write_results_csv, write_slope_report, read_results_csv
from .models import ClipKind, CorpusEntry, FeatureSetResult
from .query import DistanceTable, QueryError, normalize_distances, rank_query, read_distance_csv, retrieval_summary, within_class_table, write_distance_csv
from .random_streams import derive_seed
from .stats import StatsError, concordance_by_imitation, listener_identification, prepare_ratings, read_ratings_csv, screen_listeners, screening_summary, write_ratings_csv
from .synthetic import synthesize_ratings, write_synthetic_corpus
from .training import TrainingData, TrainingError, train
from .logging import get_logger
from .performance_monitor import performance_monitor


T = TypeVar("T")

# Every lower-level failure a command can surface
STAGE_ERRORS = (
    CorpusError, BarkgramError, FeatureError, LayerError, CaeError, TrainingError, CheckpointError,
    QueryError, StatsError, LmerError,
)


def _finite_or_none(value: Any) -> Any:
    """JSON has no NaN or infinity; non-finite numbers become null."""
    if isinstance(value, dict):
        return {k: _finite_or_none(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_none(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


class PipelineError(Exception):
    """Custom exception for pipeline errors."""
    pass


class QbvPipeline:
    """Runs the CLI commands against one output directory."""

    def __init__(self, config: RunConfig):
        self.logger = get_logger("pipeline")
        self.config = config
        self.out = Path(config.output_dir)
        self._manifest: Optional[Manifest] = None
        self._clips: Optional[Dict[str, AudioClip]] = None

    # Paths

    def checkpoint_path(self, variant: int) -> Path:
        return self.out / "checkpoints" / f"cae-{variant}.cae"

    def feature_path(self, name: str) -> Path:
        return self.out / "features" / f"{name}.csv"

    def distance_path(self, name: str) -> Path:
        return self.out / "distances" / f"{name}.csv"

    def slope_path(self, name: str) -> Path:
        return self.out / "slopes" / f"{name}.csv"

    @property
    def results_path(self) -> Path:
        return self.out / "results.csv"

    @property
    def report_path(self) -> Path:
        return self.out / "report.json"

    # Shared inputs

    @property
    def manifest(self) -> Manifest:
        if self._manifest is None:
            try:
                self._manifest = load_manifest(self.config.require_manifest())
            except CorpusError as e:
                raise PipelineError(str(e))
        return self._manifest

    def _map(self, fn: Callable[..., T], items: Sequence[Any]) -> List[T]:
        """Run fn over items on the worker pool; results keep input order."""
        if self.config.workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, items))

    def clips(self) -> Dict[str, AudioClip]:
        """Every manifest clip, loaded once."""
        if self._clips is None:
            manifest = self.manifest

            def load(entry: CorpusEntry) -> AudioClip:
                start = time.time()
                clip = manifest.load_clip(entry.id)
                performance_monitor.record_clip_processed(time.time() - start)
                return clip

            try:
                loaded = self._map(load, list(manifest))
            except CorpusError as e:
                raise PipelineError(f"corrupt audio: {e}")
            self._clips = dict(zip(manifest.ids(), loaded))
        return self._clips

    # Commands

    def ingest(self) -> int:
        """Load every clip and store its 72- and 128-band barkgrams."""
        with performance_monitor.stage("ingest"):
            clips = self.clips()

            def store(item: Tuple[str, AudioClip]) -> None:
                cid, clip = item
                for n_bands in (PK08_BANDS, CAE_BANDS):
                    write_barkgram_binary(barkgram(clip, n_bands), self.out / "barkgrams" / str(n_bands) / f"{cid}.bkg")

            self._map(store, list(clips.items()))
        self.logger.info(f"📥 Ingested {len(clips)} clips into {self.out / 'barkgrams'}")
        return len(clips)

    def _cae_inputs(self, entries: Sequence[CorpusEntry]) -> np.ndarray:
        clips = self.clips()
        return np.stack(self._map(lambda e: cae_input(clips[e.id]), list(entries)))

    def train_cae(self, variant: int, progress: bool = False) -> Path:
        """Train one registered variant on the manifest and write its checkpoint."""
        training = self.config.training
        with performance_monitor.stage(f"train cae-{variant}"):
            try:
                architecture = build_cae(variant)
                split_seed = derive_seed(training.seed, "split")
                train_entries, val_entries = split_train_val(list(self.manifest), training.train_fraction, split_seed)

                def partition(entries: List[CorpusEntry]) -> TrainingData:
                    imitations = [e for e in entries if e.kind == ClipKind.IMITATION]
                    samples = [e for e in entries if e.kind == ClipKind.SAMPLE]
                    return TrainingData(self._cae_inputs(imitations), self._cae_inputs(samples))

                model = init_model(architecture, seed=derive_seed(training.seed, f"cae-{variant}"))
                config = training.model_copy(update={"seed": derive_seed(training.seed, f"cae-{variant}-train")})
                model, history = train(model, partition(train_entries), partition(val_entries), config, progress)
                path = save_checkpoint(model, self.checkpoint_path(variant))
                history.write_csv(self.out / "checkpoints" / f"cae-{variant}-history.csv")
            except (CaeError, LayerError, TrainingError, CorpusError, CheckpointError) as e:
                raise PipelineError(f"training cae-{variant} failed: {e}")
        performance_monitor.record_training(history.epochs_run)
        self.logger.info(f"✅ cae-{variant}: best epoch {model.best_epoch}, checkpoint {path}")
        return path

    def _extractor(self, name: str):
        checkpoint = None
        if name.startswith("cae-"):
            checkpoint = self.checkpoint_path(int(name.split("-")[1]))
            if not checkpoint.exists():
                raise PipelineError(f"missing checkpoint for {name}: {checkpoint} (run train-cae --variant {name[4:]})")
        try:
            return create_extractor(name, checkpoint)
        except (FeatureError, CaeError, CheckpointError) as e:
            raise PipelineError(str(e))

    def extract(self, feature_sets: Optional[Sequence[str]] = None) -> List[Path]:
        """One feature file per requested set, rows in manifest order."""
        names = list(feature_sets or self.config.feature_sets)
        written = []
        for name in names:
            extractor = self._extractor(name)
            with performance_monitor.stage(f"extract {name}"):
                clips = self.clips()
                try:
                    features = self._map(extractor.extract, list(clips.values()))
                except STAGE_ERRORS as e:
                    raise PipelineError(f"{name} extraction failed: {e}")
                path = self.feature_path(name)
                write_feature_csv(dict(zip(clips.keys(), features)), name, path)
            self.logger.info(f"🎛️  {name}: {len(features)} feature rows → {path}")
            written.append(path)
        return written

    def distance_table(self, name: str) -> DistanceTable:
        """Normalised within-class table built from the set's feature file."""
        path = self.feature_path(name)
        if not path.exists():
            raise PipelineError(f"missing feature file {path} (run extract --features {name})")
        try:
            _, features = read_feature_csv(path)
            table = normalize_distances(within_class_table(features, self.manifest, name))
        except (FeatureError, QueryError) as e:
            raise PipelineError(f"{name} distances failed: {e}")
        write_distance_csv(table, self.distance_path(name))
        return table

    def distances(self, feature_sets: Optional[Sequence[str]] = None) -> Dict[str, DistanceTable]:
        names = list(feature_sets or self.config.feature_sets)
        with performance_monitor.stage("distances"):
            tables = {name: self.distance_table(name) for name in names}
        for name, table in tables.items():
            self.logger.info(f"📏 {name}: {len(table)} within-class distances")
        return tables

    def evaluate(self, feature_sets: Optional[Sequence[str]] = None) -> List[FeatureSetResult]:
        """Fit the mixed model per feature set; write slope reports, then results.csv."""
        names = list(feature_sets or self.config.feature_sets)
        try:
            records = read_ratings_csv(self.config.require_ratings())
        except StatsError as e:
            raise PipelineError(str(e))
        tables = self.distances(names)

        screening = screen_listeners(records)
        ratings = prepare_ratings(records, screening)
        manifest = self.manifest

        def fit(name: str):
            start = time.time()
            try:
                result = fit_lmer(ratings, tables[name], manifest)
            except LmerError as e:
                raise PipelineError(f"{name}: {e}")
            performance_monitor.record_fit(time.time() - start)
            return result

        with performance_monitor.stage("evaluate"):
            fits = self._map(fit, names)
            results = []
            for name, lmer_fit in zip(names, fits):
                cis = wald_ci(lmer_fit)
                write_slope_report(slope_report(lmer_fit, cis), self.slope_path(name))
                results.append(summarize(lmer_fit, cis))
            write_results_csv(results, self.results_path)

        for r in results:
            self.logger.info(f"📊 {r.extractor_id}: AIC {r.aic:.2f}, accuracy {r.accuracy:.1f}% ({r.n_significant}/{r.n_sounds})")
        return results

    def query(self, audio_path: Path, extractor_name: str) -> List[Tuple[str, float]]:
        """Rank the library samples against one audio file."""
        extractor = self._extractor(extractor_name.lower())
        path = self.feature_path(extractor.extractor_id)
        if not path.exists():
            raise PipelineError(f"missing library features {path} (run extract --features {extractor.extractor_id})")
        try:
            _, features = read_feature_csv(path)
            library = {e.id: features[e.id] for e in self.manifest.samples() if e.id in features}
            return rank_query(load_wav(audio_path), library, extractor)
        except STAGE_ERRORS as e:
            raise PipelineError(f"query failed: {e}")

    def report(self) -> Dict[str, Any]:
        """Summarise ratings, retrieval and results; print a table and write report.json."""
        report: Dict[str, Any] = {}
        if self.config.ratings is not None and self.config.ratings.exists():
            try:
                records = read_ratings_csv(self.config.ratings)
            except StatsError as e:
                raise PipelineError(str(e))
            screening = screen_listeners(records)
            retained = prepare_ratings(records, screening)
            report["screening"] = screening_summary(records, screening)
            report["excluded_listeners"] = screening.excluded
            concordance = concordance_by_imitation(retained)
            report["concordance"] = {k: v for k, v in concordance.items() if k != "per_imitation"}
            report["identification"] = listener_identification(retained, self.manifest)

        retrieval = {}
        for name in self.config.feature_sets:
            path = self.distance_path(name)
            if path.exists():
                try:
                    retrieval[name] = retrieval_summary(read_distance_csv(path), self.manifest).model_dump()
                except QueryError as e:
                    raise PipelineError(str(e))
        report["retrieval"] = retrieval

        results: List[FeatureSetResult] = []
        if self.results_path.exists():
            try:
                results = read_results_csv(self.results_path)
            except LmerError as e:
                raise PipelineError(str(e))
        report["results"] = [r.model_dump() for r in results]

        self._print_report(report, results)
        tmp = self.report_path.with_suffix(".json.tmp")
        self.out.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(_finite_or_none(report), indent=2, sort_keys=True, allow_nan=False, default=float), encoding="utf-8")
        tmp.replace(self.report_path)
        self.logger.info(f"📝 Report written to {self.report_path}")
        return report

    def _print_report(self, report: Dict[str, Any], results: List[FeatureSetResult]) -> None:
        console = Console()
        if "screening" in report:
            s = report["screening"]
            console.print(
                f"Listeners retained: {s['retained_listeners']}/{s['listeners']} "
                f"(ρ = {s['rho_mean']:.3f} ± {s['rho_se']:.3f}), responses {s['responses']}"
            )
            ident = report["identification"]
            console.print(
                f"Imitated sound rated most similar in {100 * ident['top1']:.1f}% of tests, "
                f"top two in {100 * ident['top2']:.1f}% (chance {100 * ident['chance']:.1f}%)"
            )
        table = Table(title="Feature sets")
        for column in ("Feature set", "AIC", "Accuracy %", "Significant", "Top-1", "MRR"):
            table.add_column(column, justify="right" if column != "Feature set" else "left")
        by_name = {r.extractor_id: r for r in results}
        for name in self.config.feature_sets:
            r = by_name.get(name)
            ret = report["retrieval"].get(name)
            if r is None and ret is None:
                continue
            table.add_row(
                name,
                f"{r.aic:.1f}" if r else "-",
                f"{r.accuracy:.1f}" if r else "-",
                f"{r.n_significant}/{r.n_sounds}" if r else "-",
                f"{ret['top1_rate']:.2f}" if ret else "-",
                f"{ret['mean_reciprocal_rank']:.2f}" if ret else "-",
            )
        console.print(table)

    def synth(self, sounds_per_class: int = 6, imitations_per_sound: int = 2,
              n_listeners: int = 20, pages_per_listener: int = 10, rating_noise: float = 0.05) -> Path:
        """Write a synthetic corpus, PK08-derived ratings and a config file under the output directory."""
        if rating_noise < 0:
            raise PipelineError(f"rating noise must be non-negative, got {rating_noise}")
        seed = self.config.training.seed
        directory = self.out / "synthetic"
        with performance_monitor.stage("synth"):
            try:
                manifest = write_synthetic_corpus(directory, sounds_per_class, imitations_per_sound,
                                                  derive_seed(seed, "corpus"))
                self._manifest, self._clips = manifest, None
                pk08 = create_extractor("pk08")
                bgs = dict(zip(manifest.ids(), self._map(pk08.extract, list(self.clips().values()))))
                oracle = normalize_distances(within_class_table(bgs, manifest, "pk08"))
                records = synthesize_ratings(manifest, oracle, n_listeners, pages_per_listener,
                                             noise=rating_noise, seed=derive_seed(seed, "ratings"))
            except STAGE_ERRORS as e:
                raise PipelineError(f"synthetic corpus failed: {e}")
            write_ratings_csv(records, directory / "ratings.csv")

        config_path = directory / "qbv.ini"
        config_path.write_text(
            "[corpus]\nmanifest = manifest.csv\nratings = ratings.csv\n\n"
            f"[features]\nsets = {','.join(self.config.feature_sets)}\n\n"
            f"[training]\nseed = {seed}\n\n[output]\ndirectory = ..\n",
            encoding="utf-8",
        )
        self.logger.info(f"🥁 Synthetic corpus: {len(manifest)} clips, {len(records)} ratings, config {config_path}")
        return config_path
