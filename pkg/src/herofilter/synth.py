"""Synthetic graphs with a target heterophily level, and the
heterophily-by-frequency-band accuracy sweep built on them.
"""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ParamError
from .graph import Graph, normalize_adjacency
from .spectral import PolyFilter, SpectralDecomposition, eigendecompose, filter_response

DEFAULT_BANDS = ((0.0, 0.4), (0.4, 0.8), (0.8, 1.2), (1.2, 1.6), (1.6, 2.0))
SPLIT_FRACTIONS = (0.48, 0.32, 0.20)
_MAX_REDRAWS = 200


@dataclass(frozen=True)
class SynthSpec:
    n: int = 1000
    num_classes: int = 5
    target_h: float = 0.5
    avg_degree: float = 10.0
    feature_dim: int = 16
    feature_noise: float = 1.0
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.target_h <= 1.0:
            raise ParamError(f"target_h must lie in [0, 1], got {self.target_h}")
        if self.avg_degree < 1:
            raise ParamError(f"avg_degree must be >= 1, got {self.avg_degree}")
        if self.num_classes < 2:
            raise ParamError("need at least two classes")
        if self.n < self.num_classes:
            raise ParamError("fewer nodes than classes")
        if self.feature_dim < self.num_classes:
            raise ParamError("orthogonal class means need feature_dim >= num_classes")
        if self.feature_noise < 0:
            raise ParamError("feature_noise must be non-negative")


def _draw_partners(rng, owners, labels, order, start, counts, h):
    """One candidate partner per stub owner (never the owner itself)."""
    n = labels.shape[0]
    cls = labels[owners]
    cross = rng.random(owners.size) < h
    r = rng.random(owners.size)
    partners = np.empty(owners.size, dtype=np.int64)

    # uniform over nodes of other classes: skip the owner's class block
    pool = n - counts[cls]
    k = np.minimum((r * pool).astype(np.int64), pool - 1)
    k = np.where(k < start[cls], k, k + counts[cls])
    partners[cross] = order[k[cross]]

    # uniform over same-class nodes other than the owner
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n) - start[labels[order]]
    pool = counts[cls] - 1
    k = np.minimum((r * pool).astype(np.int64), np.maximum(pool - 1, 0))
    k = np.where(k < pos[owners], k, k + 1)
    same = ~cross
    partners[same] = order[start[cls[same]] + k[same]]
    return partners


def synth_graph(spec: SynthSpec) -> Graph:
    """Stub-pairing generator with class-conditioned partner choice.

    Every stub's partner is a same-class node with probability
    ``1 - target_h`` and a uniformly chosen different-class node
    otherwise. Duplicate edges are redrawn.
    """
    spec.validate()
    n, C, h = spec.n, spec.num_classes, float(spec.target_h)
    m = int(round(n * spec.avg_degree / 2.0))
    if m > n * (n - 1) // 2:
        raise ParamError(f"{m} edges do not fit in a simple graph on {n} nodes")
    rng = np.random.default_rng(spec.seed)

    labels = rng.permutation(np.arange(n) % C)
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=C)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    if h < 1.0 and counts.min() < 2:
        raise ParamError("same-class edges need at least two nodes per class")
    intra = int(np.sum(counts * (counts - 1) // 2))
    if h == 0.0 and m > intra:
        raise ParamError(f"{m} intra-class edges requested, only {intra} possible")
    if h == 1.0 and m > n * (n - 1) // 2 - intra:
        raise ParamError(f"{m} cross-class edges requested, only {n * (n - 1) // 2 - intra} possible")

    base, extra = divmod(m, n)
    stubs = np.full(n, base, dtype=np.int64)
    stubs[rng.permutation(n)[:extra]] += 1
    owners = np.repeat(np.arange(n), stubs)

    partners = _draw_partners(rng, owners, labels, order, start, counts, h)
    for _ in range(_MAX_REDRAWS):
        keys = np.minimum(owners, partners) * n + np.maximum(owners, partners)
        _, first = np.unique(keys, return_index=True)
        dup = np.ones(m, dtype=bool)
        dup[first] = False
        if not dup.any():
            break
        partners[dup] = _draw_partners(rng, owners[dup], labels, order, start, counts, h)
    else:
        raise ParamError("could not place all edges without duplicates; lower avg_degree")

    edges = np.stack([owners, partners], axis=1)
    means = np.eye(spec.feature_dim)[labels]
    features = means + spec.feature_noise * rng.standard_normal((n, spec.feature_dim))

    perm = rng.permutation(n)
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    splits = {"train": np.sort(perm[:n_train]), "val": np.sort(perm[n_train:n_train + n_val]),
              "test": np.sort(perm[n_train + n_val:])}
    return Graph(n, edges, features, labels, splits, C)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def check_bands(bands) -> list[tuple[float, float]]:
    """Bands must be contiguous, ascending and cover [0, 2]."""
    bands = [(float(lo), float(hi)) for lo, hi in bands]
    if not bands:
        raise ParamError("no bands given")
    if bands[0][0] != 0.0 or bands[-1][1] != 2.0:
        raise ParamError("bands must start at 0 and end at 2")
    for (lo, hi), nxt in zip(bands, bands[1:] + [None]):
        if not lo < hi:
            raise ParamError(f"empty band [{lo}, {hi})")
        if nxt is not None and nxt[0] != hi:
            raise ParamError(f"bands leave a gap or overlap at {hi}")
    return bands


def _cell_seed(seed: int, hi: int, bi: int) -> int:
    return int(np.random.SeedSequence([int(seed), hi, bi]).generate_state(1)[0] % (2 ** 31))


def _sweep_group(args):
    """All bands for one (h, seed) pair; the graph and spectrum are shared."""
    from .training import train

    hi, h, seed, bands, base_spec, cfg = args
    gseed = int(np.random.SeedSequence([int(seed), hi]).generate_state(1)[0] % (2 ** 31))
    g = synth_graph(dataclasses.replace(base_spec, target_h=float(h), seed=gseed))
    dec = eigendecompose(normalize_adjacency(g, cfg.normalization), method=cfg.eigensolver)
    rows = []
    for bi, (lo, hi_band) in enumerate(bands):
        c = dataclasses.replace(cfg, mode="static", filter="band", band_lo=lo, band_hi=hi_band,
                                seed=_cell_seed(seed, hi, bi))
        _, report, _ = train(g, c, dec)
        rows.append({"h": float(h), "band_lo": lo, "band_hi": hi_band,
                     "test_acc": float(report.test_acc), "seed": int(seed)})
    return rows


def heterophily_sweep(h_values, bands, base_spec: SynthSpec, cfg, seeds=(0,), jobs: int = 1):
    """Test accuracy of band-filtered patching for every (h, band, seed).

    Rows come back ordered by h, then seed, then band, whatever ``jobs`` is.
    """
    bands = check_bands(bands)
    tasks = [(hi, h, s, bands, base_spec, cfg) for hi, h in enumerate(h_values) for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            groups = list(pool.map(_sweep_group, tasks))
    else:
        groups = [_sweep_group(t) for t in tasks]
    return [row for grp in groups for row in grp]


def sweep_matrix(rows, h_values, bands) -> np.ndarray:
    """Seed-averaged accuracy grid, one row per h and one column per band."""
    out = np.zeros((len(h_values), len(bands)))
    cnt = np.zeros_like(out)
    hs = [float(h) for h in h_values]
    bs = [(float(lo), float(hi)) for lo, hi in bands]
    for r in rows:
        i = hs.index(r["h"])
        j = bs.index((r["band_lo"], r["band_hi"]))
        out[i, j] += r["test_acc"]
        cnt[i, j] += 1
    return out / np.maximum(cnt, 1)


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "band_lo", "band_hi", "test_acc", "seed"])
        for r in rows:
            w.writerow([format(r["h"], ".17g"), format(r["band_lo"], ".17g"),
                        format(r["band_hi"], ".17g"), format(r["test_acc"], ".17g"), r["seed"]])


def frequency_response_export(f, dec: SpectralDecomposition, path) -> np.ndarray:
    """Write ``lambda_lap,g,log10_g`` rows sorted by Laplacian eigenvalue.

    ``f`` is a PolyFilter or a response vector aligned with
    ``dec.eigenvalues``. The log column uses ``|g| + 1e-12`` so negative
    responses stay finite. Returns the written (n, 3) table.
    """
    if isinstance(f, PolyFilter):
        g = filter_response(f, dec.eigenvalues)
    else:
        g = np.asarray(f, dtype=np.float64)
    lap = dec.laplacian_eigenvalues
    order = np.argsort(lap, kind="stable")
    table = np.column_stack([lap[order], g[order], np.log10(np.abs(g[order]) + 1e-12)])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("lambda_lap,g,log10_g\n")
        for row in table:
            fh.write(",".join(format(float(x), ".17g") for x in row) + "\n")
    return table
