"""Regenerates fixtures/baselines.golden.json with scikit-learn predictions.

    python3 fixtures/generate_baseline_fixture.py

Three overlapping Gaussian classes in 20 dimensions; PCA to 5 components
before the RBF SVM, gamma='scale', C=1.
"""

import json
from pathlib import Path

import numpy as np
from sklearn.decomposition import PCA
from sklearn.naive_bayes import GaussianNB
from sklearn.neighbors import KNeighborsClassifier
from sklearn.svm import SVC


def main():
    rng = np.random.default_rng(5)
    centers = rng.normal(0, 1.5, (3, 20))
    def draw(n):
        y = np.arange(n) % 3
        return centers[y] + rng.normal(0, 1.0, (n, 20)), y
    xtr, ytr = draw(60)
    xte, yte = draw(30)
    pca = PCA(n_components=5).fit(xtr)
    ztr, zte = pca.transform(xtr), pca.transform(xte)
    out = {
        "train_x": xtr.tolist(),
        "train_y": ytr.tolist(),
        "test_x": xte.tolist(),
        "pca_components": 5,
        "pca_test": zte.tolist(),
        "gnb": GaussianNB().fit(xtr, ytr).predict(xte).tolist(),
        "knn": KNeighborsClassifier(n_neighbors=1).fit(xtr, ytr).predict(xte).tolist(),
        "svm": SVC(C=1.0, kernel="rbf", gamma="scale").fit(ztr, ytr).predict(zte).tolist(),
    }
    path = Path(__file__).parent / "baselines.golden.json"
    path.write_text(json.dumps(out) + "\n")


if __name__ == "__main__":
    main()
