"""Missing-modality inference with a modality-interchangeable model.

One single-channel network is trained on T1 and FLAIR patches alike. At
inference it segments from whichever modality is present; with both, the two
softmax maps are averaged before the argmax. A CONCAT model, by contrast,
refuses to run when one channel is missing.
"""

import argparse

from wmhseg import config as config_mod
from wmhseg.core import FLAIR, T1, TaskKind
from wmhseg.data import generate_phantoms
from wmhseg.errors import ConfigurationError
from wmhseg.evaluation import dice
from wmhseg.inference import ensemble_predict
from wmhseg.model import init_model
from wmhseg.training import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = config_mod.load_config(overrides={"scale": "desk", "seed": args.seed})
    spec, count, test_count = config_mod.phantom_spec(cfg)
    cohort = generate_phantoms(spec, count + test_count)
    train_s, test_s = cohort[:count], cohort[count:]
    window = tuple(cfg["inference"]["window"])

    tc = config_mod.train_config(cfg, "INTERCHANGEABLE", TaskKind.LESION)
    tc.epochs = args.epochs
    bundle, hist = train(train_s, tc, config_mod.model_config(cfg, "INTERCHANGEABLE", TaskKind.LESION))
    print(f"interchangeable model: {hist.meta['item_count']} items from {len(train_s)} subjects")

    for available in ((T1,), (FLAIR,), (T1, FLAIR)):
        scores = []
        for s in test_s:
            volumes = {m: s.modalities[m] for m in available}
            scores.append(dice(ensemble_predict("INTERCHANGEABLE", bundle, volumes, window=window), s.lesion))
        print(f"inputs {' + '.join(available):<10} held-out Dice {sum(scores) / len(scores):.3f}")

    concat = init_model(config_mod.model_config(cfg, "CONCAT", TaskKind.LESION), channel_tags=(T1, FLAIR))
    try:
        ensemble_predict("CONCAT", concat, {FLAIR: test_s[0].modalities[FLAIR]}, window=window)
    except ConfigurationError as exc:
        print(f"CONCAT with FLAIR only: refused ({exc})")


if __name__ == "__main__":
    main()
