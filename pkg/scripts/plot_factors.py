"""2-D scatter of exported user factors, colored by expert (needs matplotlib + scikit-learn).

    mblfe export-factors --config run.cfg
    python3 scripts/plot_factors.py out/factors.tsv -o factors.png
"""
import argparse

import numpy as np


def load(path):
    experts, vecs = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            k, values = line.rstrip("\n").split("\t")
            experts.append(int(k))
            vecs.append([float(v) for v in values.split(",")])
    return np.array(experts), np.array(vecs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("factors")
    ap.add_argument("-o", "--output", default="factors.png")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from sklearn.manifold import TSNE

    experts, vecs = load(args.factors)
    xy = TSNE(n_components=2, random_state=args.seed, init="pca").fit_transform(vecs)
    fig, ax = plt.subplots(figsize=(6, 6))
    for k in np.unique(experts):
        m = experts == k
        ax.scatter(xy[m, 0], xy[m, 1], s=4, label=f"expert {k}")
    ax.legend(markerscale=3, fontsize=7)
    ax.set_xticks([]); ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
