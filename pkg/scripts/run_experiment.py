"""
End-to-end desk-scale experiment
generate -> featurize -> train -> eval -> predict -> report in one run directory,
with a per-stage event log
"""
import json
import logging
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import pandas as pd

from src.cli.commands import run_command
from src.cli.config import RunConfig, load_run_config
from src.utils.errors import ClassifierError
from src.utils.helpers import setup_logging, update_run_manifest

logger = logging.getLogger(__name__)

STAGES = ['generate', 'featurize', 'train', 'eval', 'predict', 'report']
EVENTS_FILE = 'experiment_events.json'


class ExperimentRunner:
    """
    Runs the subcommands in order against one RunConfig
    Records each stage outcome and duration
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.run_dir = Path(config.run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.events_file = self.run_dir / EVENTS_FILE
        logger.info(f"🤖 Experiment runner initialized in {self.run_dir}")

    def prepare_config(self, stage: str) -> RunConfig:
        """generate writes the corpus; later stages read its manifest unless one was configured"""
        if stage != 'generate' and self.config.manifest is None:
            manifest = self.config.synthetic_dir / 'manifest.tsv'
            return self.config.model_copy(update={'manifest': manifest})
        return self.config

    def run_stage(self, stage: str) -> bool:
        logger.info(f"\n🚀 Stage: {stage}")
        start = time.perf_counter()
        try:
            run_command(stage, self.prepare_config(stage))
            success = True
        except ClassifierError as e:
            logger.error(f"❌ Stage {stage} failed: {e}")
            success = False
        self.record_stage_event(stage, success, time.perf_counter() - start)
        return success

    def run(self, stages: Optional[List[str]] = None) -> bool:
        for stage in stages or STAGES:
            if not self.run_stage(stage):
                return False
        update_run_manifest(self.run_dir, [self.events_file], non_deterministic=[self.events_file])
        return True

    def record_stage_event(self, stage: str, success: bool, seconds: float):
        events = self._load_events()
        events.setdefault('stages', []).append({
            'timestamp': datetime.now().isoformat(),
            'stage': stage,
            'success': success,
            'seconds': round(seconds, 3),
        })
        with open(self.events_file, 'w') as f:
            json.dump(events, f, indent=2)
        logger.info(f"✅ Stage event recorded: {stage} ({'SUCCESS' if success else 'FAILED'}, {seconds:.1f}s)")

    def _load_events(self) -> Dict:
        if self.events_file.exists():
            with open(self.events_file, 'r') as f:
                return json.load(f)
        return {}

    def generate_experiment_report(self) -> str:
        """Summary of stage outcomes plus the detection-rate grid when present"""
        events = self._load_events().get('stages', [])
        report = f"""
╔════════════════════════════════════════════════════╗
║   EXPERIMENT REPORT                                ║
╚════════════════════════════════════════════════════╝

📁 Run directory: {self.run_dir}

📋 Stages:
"""
        for event in events:
            status = '✅' if event['success'] else '❌'
            report += f"   {status} {event['stage']:<10s} {event['seconds']:>9.1f}s\n"

        grid_path = self.config.report_dir / 'detection_grid.csv'
        if grid_path.exists():
            grid = pd.read_csv(grid_path)
            report += f"\n📊 Detection rate (%) at fixed FPR:\n{grid.to_string(index=False)}\n"
        return report


def main():
    import argparse

    parser = argparse.ArgumentParser(description='Desk-scale hybrid classifier experiment', allow_abbrev=False)
    parser.add_argument('--config', help='YAML run configuration file')
    parser.add_argument('--run-dir', dest='run_dir', help='Run directory')
    parser.add_argument('--preset', choices=['full', 'compact'], help='Architecture sizes')
    parser.add_argument('--seed', type=int, help='Random seed')
    parser.add_argument('--epochs', type=int, help='Module pre-training epochs')
    parser.add_argument('--stages', nargs='+', choices=STAGES, help='Run only these stages, in order')
    parser.add_argument('--report', action='store_true', help='Only show the report of an existing run')
    args = parser.parse_args()

    try:
        config = load_run_config(args.config, {
            'run_dir': args.run_dir,
            'preset': args.preset,
            'seed': args.seed,
            'epochs': args.epochs,
        })
    except ClassifierError as e:
        print(f"❌ {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    setup_logging(config.log_level)
    if config.seed is None:
        config = config.model_copy(update={'seed': 0})

    runner = ExperimentRunner(config)
    if args.report:
        print(runner.generate_experiment_report())
        return

    success = runner.run(args.stages)
    print(runner.generate_experiment_report())
    sys.exit(0 if success else 1)


if __name__ == '__main__':
    main()
