"""
Main entry point for the QBV feature engine.
"""

import sys
import argparse
from pathlib import Path
from typing import List, Optional
from .pipeline import QbvPipeline, PipelineError
from .config import ConfigError, RunConfig, load_run_config
from .logging import setup_logging, get_logger
from .performance_monitor import performance_monitor


def build_parser() -> argparse.ArgumentParser:
    """Build the command line parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Run configuration file (INI sections)")
    common.add_argument("--seed", type=int, help="Override the run seed")
    common.add_argument("--out", type=Path, help="Override the output directory")
    common.add_argument("--features", type=str, help="Comma-separated feature sets, e.g. pk08,mfcc,cae-11")
    common.add_argument("--variant", type=int, help="CAE variant 1..11 (train-cae, or shorthand for --features cae-K)")
    common.add_argument("--log-level", default="INFO", help="Logging level (default: INFO)")

    parser = argparse.ArgumentParser(
        description="QBV feature engine - vocal-imitation features, retrieval and perceptual evaluation"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="Load the corpus and store barkgrams")
    sub.add_parser("extract", parents=[common], help="Write one feature file per feature set")
    train = sub.add_parser("train-cae", parents=[common], help="Train auto-encoder variants")
    train.add_argument("--progress", action="store_true", help="Show an epoch progress bar")
    sub.add_parser("distances", parents=[common], help="Write within-class distance tables")
    sub.add_parser("evaluate", parents=[common], help="Fit the mixed model per feature set")
    query = sub.add_parser("query", parents=[common], help="Rank library sounds against an audio file")
    query.add_argument("audio", type=Path, help="Query WAV file")
    query.add_argument("--extractor", required=True, help="Feature set used for ranking")
    sub.add_parser("report", parents=[common], help="Summarise ratings, retrieval and results")
    synth = sub.add_parser("synth", parents=[common], help="Write a synthetic corpus and ratings")
    synth.add_argument("--sounds-per-class", type=int, default=6)
    synth.add_argument("--imitations-per-sound", type=int, default=2)
    synth.add_argument("--listeners", type=int, default=20)
    synth.add_argument("--pages", type=int, default=10, help="Rating pages per listener")
    synth.add_argument("--rating-noise", type=float, default=0.05, help="Rating noise standard deviation")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    features = args.features
    if args.variant is not None and features is None and args.command != "train-cae":
        features = f"cae-{args.variant}"
    return load_run_config(args.config, seed=args.seed, output_dir=args.out, feature_sets=features)


def run_command(pipeline: QbvPipeline, args: argparse.Namespace) -> int:
    """Dispatch one subcommand."""
    logger = get_logger("main")
    command = args.command

    if command == "ingest":
        pipeline.ingest()
    elif command == "extract":
        pipeline.extract()
    elif command == "train-cae":
        variants = [args.variant] if args.variant is not None else pipeline.config.cae_variants()
        if not variants:
            raise ConfigError("no CAE variant requested (use --variant K or list cae-K feature sets)")
        for variant in variants:
            pipeline.train_cae(variant, progress=args.progress)
    elif command == "distances":
        pipeline.distances()
    elif command == "evaluate":
        pipeline.evaluate()
    elif command == "query":
        ranked = pipeline.query(args.audio, args.extractor)
        for rank, (cid, distance) in enumerate(ranked, start=1):
            print(f"{rank},{cid},{distance!r}")
    elif command == "report":
        pipeline.report()
    elif command == "synth":
        config_path = pipeline.synth(args.sounds_per_class, args.imitations_per_sound, args.listeners, args.pages,
                                     args.rating_noise)
        logger.info(f"➡️  Pass --config {config_path} to the following commands")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    logger = get_logger("main")
    performance_monitor.reset()

    try:
        config = resolve_config(args)
        logger.info(f"🚀 QBV engine {args.command} → {config.output_dir}")
        code = run_command(QbvPipeline(config), args)
        logger.info(f"✅ {args.command} completed successfully")
        return code
    except ConfigError as e:
        logger.error(f"❌ Configuration error: {str(e)}")
        return 1
    except PipelineError as e:
        logger.error(f"❌ Pipeline error: {str(e)}")
        return 1
    except KeyboardInterrupt:
        logger.info("⏹️  Interrupted by user")
        return 130
    except Exception as e:
        logger.error(f"❌ Unexpected error: {str(e)}")
        return 1
    finally:
        performance_monitor.log_performance_summary()


if __name__ == "__main__":
    sys.exit(main())
