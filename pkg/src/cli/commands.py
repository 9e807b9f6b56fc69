"""
Subcommand implementations
Every command reads and writes under the run directory and records its outputs in run_manifest.json
"""
import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from src.cli.config import RunConfig
from src.data_ingestion.dataset import EncodedDataset, encode_dataset, load_sample_reports
from src.data_ingestion.manifest import load_manifest, split_summary
from src.data_ingestion.synthetic import SynthResult, generate_corpus
from src.featurizers.apiseq_featurizer import coverage_table, emulation_stats
from src.featurizers.bundle import FeaturizerBundle
from src.featurizers.path_featurizer import load_env_map
from src.fusion.configs import (
    MODULE_ORDER,
    all_subsets,
    api_cnn_config,
    canonical_subset,
    ember_ffnn_config,
    meta_config,
    path_cnn_config,
    subset_label,
)
from src.fusion.model_store import ModelStore
from src.fusion.modules import EarlyFusionModule, build_module
from src.fusion.pipeline import FusionPipeline
from src.fusion.serialization import meta_checkpoint_name, module_checkpoint_name, save_meta_checkpoint, save_module_checkpoint
from src.training.experiment import FusionSet, build_fusion_set, meta_model_comparison, score_grid, train_subset_meta
from src.training.metrics import EvalReport, evaluate, fpr_at_threshold, threshold_for_fpr, write_eval_report
from src.training.trainer import TrainPlan, pretrain_module
from src.utils.errors import ConfigurationError, InputError
from src.utils.helpers import ensure_dir, update_run_manifest

logger = logging.getLogger(__name__)


def cmd_generate(config: RunConfig) -> SynthResult:
    """Write a synthetic corpus (reports, binaries, manifest, ground truth)"""
    result = generate_corpus(config.synth, config.synthetic_dir)
    update_run_manifest(config.run_dir, [result.manifest_path, result.root / 'ground_truth.csv'])
    return result


def cmd_featurize(config: RunConfig) -> EncodedDataset:
    """
    Fit the featurizers on the training split and encode every manifest record
    """
    manifest = config.require_manifest()
    records = load_manifest(manifest, valid_fraction=config.valid_fraction, seed=config.seed or 0)
    base_dir = Path(manifest).parent
    reports = load_sample_reports(records, base_dir, jobs=config.jobs)

    train_rows = [i for i, r in enumerate(records) if r.split == 'train']
    if not train_rows:
        raise InputError(f"{manifest}: no training records to fit featurizers on")
    env_map = load_env_map(config.env_map) if config.env_map else None
    bundle = FeaturizerBundle.fit(
        raw_paths=[records[i].filepath for i in train_rows],
        reports=[reports[i] for i in train_rows if reports[i] is not None],
        path_vocab_size=config.path_vocab_size,
        path_length=config.path_length,
        api_vocab_size=config.api_vocab_size,
        api_length=config.api_length,
        env_map=env_map,
    )
    bundle_dir = bundle.save(config.featurizers_dir)
    dataset = encode_dataset(records, bundle, base_dir, reports=reports, jobs=config.jobs)
    encoded_dir = dataset.save(config.encoded_dir)

    outputs = sorted(bundle_dir.iterdir()) + sorted(encoded_dir.iterdir())
    update_run_manifest(config.run_dir, outputs)
    logger.info(f"📊 Split summary:\n{split_summary(records).to_string()}")
    return dataset


def _load_bundle_and_data(config: RunConfig) -> Tuple[FeaturizerBundle, EncodedDataset]:
    bundle = FeaturizerBundle.load(config.featurizers_dir)
    data = EncodedDataset.load(config.encoded_dir, expected_hashes=bundle.hashes())
    return bundle, data


def module_config(module_id: str, config: RunConfig, bundle: FeaturizerBundle):
    """Architecture of one module, sized to the fitted featurizers"""
    if module_id == 'fp':
        return path_cnn_config(config.preset, vocab_size=bundle.path.vocab.capacity, seq_length=bundle.path.n)
    if module_id == 'api':
        return api_cnn_config(config.preset, vocab_size=bundle.api.vocab.capacity, seq_length=bundle.api.n)
    return ember_ffnn_config(config.preset, input_dim=bundle.static.dim)


def _plan(config: RunConfig, module_id: str, seed: int, epochs: int) -> TrainPlan:
    return TrainPlan(
        module_id=module_id,
        seed=seed,
        epochs=epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        patience=config.patience,
        show_progress=config.log_level.upper() in ('DEBUG', 'INFO'),
    )


def _fusion_set(modules: Dict[str, EarlyFusionModule], data: EncodedDataset, batch_size: int) -> FusionSet:
    return build_fusion_set(modules, data.inputs, data.available, data.labels, data.families, batch_size=batch_size)


def _selected_subsets(config: RunConfig) -> List[Tuple[str, ...]]:
    selected = set(config.modules)
    return [s for s in all_subsets() if set(s) <= selected]


def cmd_train(config: RunConfig) -> Dict[str, Path]:
    """
    Pre-train the selected modules, then one meta-model per subset of them

    Returns:
        Checkpoint paths keyed by module id or meta-model label
    """
    seed = config.require_seed()
    bundle, data = _load_bundle_and_data(config)
    hashes = bundle.hashes()
    train, valid = data.split('train'), data.split('valid')
    if len(train) == 0:
        raise InputError("encoded dataset has no training rows")
    model_dir = ensure_dir(config.model_dir)
    history_dir = ensure_dir(config.history_dir)
    checkpoints: Dict[str, Path] = {}
    histories: List[Path] = []

    modules: Dict[str, EarlyFusionModule] = {}
    for offset, module_id in enumerate(MODULE_ORDER):
        if module_id not in config.modules:
            continue
        module_seed = seed + offset
        module = build_module(module_id, module_config(module_id, config, bundle), seed=module_seed)
        valid_pair = valid.module_pair(module_id) if len(valid) else None
        module, history = pretrain_module(module, train.module_pair(module_id), valid_pair,
                                          _plan(config, module_id, module_seed, config.epochs))
        module.featurizer_hash = hashes[module_id]
        modules[module_id] = module
        checkpoints[module_id] = save_module_checkpoint(
            module, model_dir / module_checkpoint_name(module_id), featurizer_hash=hashes[module_id])
        history_path = history_dir / f"{module_id}.csv"
        history.to_csv(history_path, index=False)
        histories.append(history_path)

    fusion_train = _fusion_set(modules, train, config.batch_size)
    fusion_valid = _fusion_set(modules, valid, config.batch_size) if len(valid) else None
    meta_plan = _plan(config, 'meta', seed + len(MODULE_ORDER), config.meta_epochs)
    pipeline = FusionPipeline(modules, threshold=config.threshold, featurizer_hashes=hashes)
    for subset in _selected_subsets(config):
        label = subset_label(subset)
        meta, result = train_subset_meta(subset, fusion_train, fusion_valid, meta_config(config.meta_depth), meta_plan)
        if meta is None:
            continue
        pipeline.install_meta(meta)
        checkpoints[f"meta-{label}"] = save_meta_checkpoint(
            meta, model_dir / meta_checkpoint_name(subset),
            featurizer_hashes={m: hashes[m] for m in subset}, threshold=config.threshold)
        history_path = history_dir / f"meta-{label}.csv"
        result.history.to_csv(history_path, index=False)
        histories.append(history_path)

    store = ModelStore(model_dir)
    manifest_path = store.write_pipeline_manifest(pipeline)
    update_run_manifest(config.run_dir, list(checkpoints.values()) + histories + [manifest_path])
    logger.info(f"✅ Training complete: {sorted(checkpoints)}")
    return checkpoints


def load_pipeline(config: RunConfig, bundle: FeaturizerBundle, threshold=None) -> FusionPipeline:
    store = ModelStore(config.model_dir)
    store.load_all_models(expected_hashes=bundle.hashes())
    if not store.modules:
        raise InputError(f"{config.model_dir}: no module checkpoints found; run train first")
    return store.build_pipeline(threshold=threshold)


def _pipeline_input(data: EncodedDataset) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    return data.inputs, data.available


def cmd_eval(config: RunConfig) -> Dict[str, EvalReport]:
    """
    Evaluate the routed pipeline on the validation and test splits

    With calibrate_fpr set, the threshold is chosen on validation negatives and
    applied unchanged to the test split.
    """
    bundle, data = _load_bundle_and_data(config)
    pipeline = load_pipeline(config, bundle, threshold=config.threshold)
    valid, test = data.split('valid'), data.split('test')

    if config.calibrate_fpr is not None:
        if len(valid) == 0:
            raise InputError("threshold calibration needs validation rows")
        scores = pipeline.predict(*_pipeline_input(valid)).scores
        negatives = scores[valid.labels == 0]
        pipeline.threshold = threshold_for_fpr(negatives, config.calibrate_fpr)
        logger.info(f"📊 Calibrated threshold {pipeline.threshold:.6g} for FPR {config.calibrate_fpr:g} "
                    f"(validation FPR {fpr_at_threshold(negatives, pipeline.threshold):.6g})")

    reports: Dict[str, EvalReport] = {}
    written: List[Path] = []
    for name, split in (('valid', valid), ('test', test)):
        if len(split) == 0:
            continue
        report = evaluate(pipeline, _pipeline_input(split), split.labels, pipeline.threshold, split.families)
        reports[name] = report
        written += write_eval_report(report, config.eval_dir, prefix=name)
        logger.info(f"📊 {name}: auc={report.auc} f1={report.f1:.4f} recall={report.recall:.4f} "
                    f"fpr={report.false_positive_rate}")
    if not reports:
        raise InputError("no validation or test rows to evaluate")
    update_run_manifest(config.run_dir, written)
    return reports


def cmd_predict(config: RunConfig) -> pd.DataFrame:
    """Per-sample scores, subset used and verdict at the pipeline threshold"""
    bundle, data = _load_bundle_and_data(config)
    pipeline = load_pipeline(config, bundle, threshold=config.threshold)
    if config.predict_split:
        data = data.split(config.predict_split)
    if len(data) == 0:
        raise InputError(f"no samples to score (split {config.predict_split!r})")
    result = pipeline.predict(*_pipeline_input(data))

    frame = pd.DataFrame({'sample_id': data.sample_ids})
    for module_id in MODULE_ORDER:
        frame[f"score_{module_id}"] = result.module_scores.get(module_id, np.full(len(data), np.nan))
    frame['score'] = result.scores
    frame['subset'] = result.subsets
    frame['verdict'] = pipeline.verdicts(result.scores).astype(int)
    ensure_dir(config.predictions_path.parent)
    frame.to_csv(config.predictions_path, index=False, float_format='%.8f')
    update_run_manifest(config.run_dir, [config.predictions_path])
    logger.info(f"✅ Predictions for {len(frame)} samples: {config.predictions_path}")
    return frame


def cmd_report(config: RunConfig) -> Dict[str, Path]:
    """
    Detection-rate grid, meta-model comparison, emulation statistics and API vocabulary coverage
    """
    bundle, data = _load_bundle_and_data(config)
    pipeline = load_pipeline(config, bundle)
    report_dir = ensure_dir(config.report_dir)
    outputs: Dict[str, Path] = {}
    volatile: List[Path] = []

    train, valid, test = data.split('train'), data.split('valid'), data.split('test')
    if len(test) == 0:
        raise InputError("detection-rate grid needs test rows")
    fusion_test = _fusion_set(pipeline.modules, test, config.batch_size)
    grid = score_grid(pipeline.metas, fusion_test, config.fpr_grid, all_subsets())
    outputs['detection_grid'] = report_dir / 'detection_grid.csv'
    grid.to_csv(outputs['detection_grid'], index=False)

    full = canonical_subset(list(pipeline.modules))
    if config.compare_meta_models and len(train) and len(valid):
        seed = config.require_seed()
        comparison, timing = meta_model_comparison(
            _fusion_set(pipeline.modules, train, config.batch_size),
            _fusion_set(pipeline.modules, valid, config.batch_size),
            _plan(config, 'meta', seed + len(MODULE_ORDER), config.meta_epochs),
            subset=full,
        )
        outputs['meta_comparison'] = report_dir / 'meta_comparison.csv'
        outputs['meta_timing'] = report_dir / 'meta_timing.csv'
        comparison.to_csv(outputs['meta_comparison'], index=False)
        timing.to_csv(outputs['meta_timing'], index=False)
        volatile.append(outputs['meta_timing'])

    if config.manifest is not None:
        records = load_manifest(config.manifest, valid_fraction=config.valid_fraction, seed=config.seed or 0)
        reports = load_sample_reports(records, Path(config.manifest).parent, jobs=config.jobs)
        present = [r for r in reports if r is not None]
        train_reports = [rep for rec, rep in zip(records, reports) if rec.split == 'train' and rep is not None]
        stats = emulation_stats(present)
        outputs['emulation_stats'] = report_dir / 'emulation_stats.csv'
        outputs['emulation_errors'] = report_dir / 'emulation_errors.csv'
        outputs['api_coverage'] = report_dir / 'api_coverage.csv'
        stats.per_family.to_csv(outputs['emulation_stats'], index=False)
        stats.error_kinds.to_csv(outputs['emulation_errors'], index=False)
        coverage_table(train_reports).to_csv(outputs['api_coverage'], index=False)
    else:
        logger.warning("⚠️  No manifest configured, emulation statistics and coverage skipped")

    update_run_manifest(config.run_dir, list(outputs.values()), non_deterministic=volatile)
    logger.info(f"✅ Report written: {report_dir}")
    return outputs


COMMANDS = {
    'generate': cmd_generate,
    'featurize': cmd_featurize,
    'train': cmd_train,
    'eval': cmd_eval,
    'predict': cmd_predict,
    'report': cmd_report,
}


def run_command(name: str, config: RunConfig):
    if name not in COMMANDS:
        raise ConfigurationError(f"unknown command {name!r}; choose one of {sorted(COMMANDS)}")
    logger.info(f"🚀 {name}: run directory {config.run_dir}")
    return COMMANDS[name](config)
