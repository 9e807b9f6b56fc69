"""
Create a synthetic labeled corpus for desk-scale experiments
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.data_ingestion.synthetic import SynthSpec, generate_corpus, marker_balance, pair_exclusivity
from src.utils.errors import ClassifierError
from src.utils.helpers import setup_logging


def create_synthetic_corpus(out_dir: Path, spec: SynthSpec):
    """
    Generate the corpus and print its marker bookkeeping
    """
    print("📊 Creating Synthetic Corpus")
    print("=" * 60)

    result = generate_corpus(spec, out_dir)
    truth = result.ground_truth

    print(f"✅ Corpus written to: {result.root}")
    print(f"   Manifest: {result.manifest_path}")
    print(f"   Samples: {len(truth)}")
    print(f"\n📈 Samples per split and kind:")
    print(truth.groupby(['split', 'kind']).size().unstack(fill_value=0))
    print(f"\n📈 Malicious share per path marker:")
    print(marker_balance(truth, 'path_marker'))
    print(f"\n📈 Malicious share per API marker:")
    print(marker_balance(truth, 'api_marker'))
    print(f"\n📈 Malicious share per planted (path, API) pair:")
    print(pair_exclusivity(truth))

    print("\n" + "=" * 60)
    print("✅ Synthetic corpus ready!")
    print("\n💡 Next steps:")
    print(f"   1. Featurize: python -m src.cli featurize --manifest {result.manifest_path}")
    print("   2. Train:     python -m src.cli train --seed 0")
    print("   3. Or run everything: python scripts/run_experiment.py")
    return result


def main():
    parser = argparse.ArgumentParser(description='Create a synthetic labeled corpus', allow_abbrev=False)
    parser.add_argument('--out-dir', default='data/synthetic', help='Output directory')
    parser.add_argument('--seed', type=int, default=0, help='Generator seed')
    parser.add_argument('--train-size', type=int, default=2000, help='Training samples per class')
    parser.add_argument('--valid-size', type=int, default=500, help='Validation samples per class')
    parser.add_argument('--test-size', type=int, default=500, help='Test samples per class')
    parser.add_argument('--cross-fraction', type=float, default=0.5,
                        help='Share of malicious samples that need both path and API markers')
    parser.add_argument('--cross-pairs', type=int, default=2, help='Number of planted marker pairs')
    args = parser.parse_args()

    setup_logging()
    spec = SynthSpec(
        train_benign=args.train_size, train_malicious=args.train_size,
        valid_benign=args.valid_size, valid_malicious=args.valid_size,
        test_benign=args.test_size, test_malicious=args.test_size,
        seed=args.seed, cross_fraction=args.cross_fraction, cross_pairs=args.cross_pairs,
    )
    try:
        create_synthetic_corpus(Path(args.out_dir), spec)
    except ClassifierError as e:
        print(f"❌ {e}", file=sys.stderr)
        sys.exit(e.exit_code)


if __name__ == "__main__":
    main()
