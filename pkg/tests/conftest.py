"""Shared independent oracles for the test suite.

Everything here is written as a literal transcription of the defining
formulas, with explicit Python loops and no code shared with the package
implementation. Tests compare the fast vectorized implementations against
these references.
"""

import math

import numpy as np
import pytest


def oracle_infonce(z, tau):
    """Directed-pair mean of -log[exp(sim(zi,zj)/tau) / sum_{k!=i} exp(sim(zi,zk)/tau)]."""
    z = np.asarray(z, dtype=np.float64)
    n = len(z)

    def sim(a, b):
        return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

    total = 0.0
    for i in range(n):
        j = i + 1 if i % 2 == 0 else i - 1
        numer = math.exp(sim(z[i], z[j]) / tau)
        denom = 0.0
        for k in range(n):
            if k != i:
                denom += math.exp(sim(z[i], z[k]) / tau)
        total += -math.log(numer / denom)
    return total / n


def oracle_cauchy(z):
    """Directed-pair mean of -log(1/(1+d_ij^2)) + log sum_{k!=i} 1/(1+d_ik^2)."""
    z = np.asarray(z, dtype=np.float64)
    n = len(z)

    def kernel(a, b):
        return 1.0 / (1.0 + float(np.sum((a - b) ** 2)))

    total = 0.0
    for i in range(n):
        j = i + 1 if i % 2 == 0 else i - 1
        repulse = 0.0
        for k in range(n):
            if k != i:
                repulse += kernel(z[i], z[k])
        total += -math.log(kernel(z[i], z[j])) + math.log(repulse)
    return total / n


def oracle_knn_accuracy(coords, labels, k, train_idx, test_idx):
    """Brute-force kNN vote; distance ties to the smallest train position,
    vote ties to the smallest class index.

    Ties are compared on squared distances: taking the square root first can
    round two distinct squared distances to the same float and manufacture
    ties the exact comparison does not have.
    """
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    correct = 0
    for t in test_idx:
        candidates = []
        for pos, tr in enumerate(train_idx):
            d2 = sum((a - b) ** 2 for a, b in zip(coords[t], coords[tr]))
            candidates.append((d2, pos, labels[tr]))
        candidates.sort(key=lambda c: (c[0], c[1]))
        votes = {}
        for _, _, lab in candidates[:k]:
            votes[int(lab)] = votes.get(int(lab), 0) + 1
        best = max(votes.values())
        winner = min(c for c, v in votes.items() if v == best)
        if winner == labels[t]:
            correct += 1
    return 100.0 * correct / len(test_idx)


def oracle_silhouette_per_point(coords, labels):
    """Per-point (b - w) / max(w, b) with explicit loops; singleton classes
    and w = b = 0 contribute 0."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(int(v) for v in labels))
    n = len(coords)
    out = np.zeros(n)
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            out[i] = 0.0
            continue
        w = sum(math.dist(coords[i], coords[j]) for j in own) / len(own)
        b = math.inf
        for c in classes:
            if c == int(labels[i]):
                continue
            members = [j for j in range(n) if labels[j] == c]
            if members:
                mean_d = sum(math.dist(coords[i], coords[j]) for j in members) / len(members)
                b = min(b, mean_d)
        denom = max(w, b)
        out[i] = 0.0 if denom == 0.0 else (b - w) / denom
    return out


def random_metric_instance(rng, n_max=500, c_max=6):
    """A random labeled 2-D point set with every class populated."""
    n_classes = int(rng.integers(2, c_max + 1))
    n = int(rng.integers(n_classes * 2, n_max + 1))
    centers = rng.normal(scale=4.0, size=(n_classes, 2))
    labels = np.concatenate([np.arange(n_classes),
                             rng.integers(0, n_classes, size=n - n_classes)])
    rng.shuffle(labels)
    coords = centers[labels] + rng.normal(scale=rng.uniform(0.3, 2.0), size=(n, 2))
    return coords, labels


def smooth_random_image(rng, size=28, sigma=6.0):
    """Band-limited random image: bilinear resampling is near-invertible on it.

    Rotation round-trip properties cannot hold on white noise (interpolation
    legitimately removes frequencies near Nyquist; the error grows with image
    curvature), so property tests use these blurred fields instead.
    """
    from scipy.ndimage import gaussian_filter

    img = rng.random((size, size, 3)).astype(np.float32)
    img = gaussian_filter(img, sigma=(sigma, sigma, 0.0))
    lo, hi = img.min(), img.max()
    return ((img - lo) / (hi - lo)).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
