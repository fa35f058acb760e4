"""Run the five experiments on a real corpus laid out as <root>/<platform>/*.wav.

Platform directories: MusicCaps (human) and MusicGen_medium, audioldm2,
musicldm, mustango, stable_audio_open (deepfake). Classes are balanced to the
smaller class unless --per-class is given.

    python scripts/run_corpus_experiment.py /data/FakeMusicCaps --seed 1 --out runs/fmc
"""
import argparse
import logging

from deepfake_music import experiments, metrics
from deepfake_music.model import TrainConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("root")
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--per-class", type=int)
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--out", default="runs/corpus")
    parser.add_argument("--reset-optimizer", action="store_true",
                        help="fresh Adam moments at each continuous-learning stage")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = experiments.ExperimentConfig(seed=args.seed, out=args.out, corpus=args.root, per_class=args.per_class,
                                       reset_optimizer=args.reset_optimizer,
                                       train=TrainConfig(epochs=args.epochs))
    print(metrics.format_table(experiments.run_experiment(cfg)))


if __name__ == "__main__":
    main()
