"""MovieLens 100k ingestion, movie-similarity graph and per-user graph signals.

Each sample is one user who rated the target movie: the input signal holds
that user's ratings on every movie node with the target entry zeroed, and the
loss is evaluated only at the target node.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Gso, SignalBatch, gso_from_matrix


class DataError(ValueError):
    pass


class EmptyDataset(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, line_no: int, text: str):
        super().__init__(f"line {line_no}: cannot parse {text!r}")
        self.line_no = line_no


class RatingOutOfRange(DataError):
    pass


class DuplicatePair(DataError):
    pass


class DegenerateGraph(DataError):
    pass


class NoEligibleUsers(DataError):
    pass


class TooFewUsers(DataError):
    pass


@dataclass(frozen=True)
class RatingsTable:
    users: np.ndarray
    movies: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray

    def __len__(self) -> int:
        return self.users.size

    @property
    def n_users(self) -> int:
        return np.unique(self.users).size

    @property
    def n_movies(self) -> int:
        return np.unique(self.movies).size

    def select(self, keep: np.ndarray) -> "RatingsTable":
        return RatingsTable(self.users[keep], self.movies[keep], self.ratings[keep],
                            self.timestamps[keep])

    def for_users(self, users) -> "RatingsTable":
        return self.select(np.isin(self.users, np.asarray(users)))

    def rating_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.movies, return_counts=True)
        return dict(zip(ids.tolist(), counts.tolist()))

    @classmethod
    def from_records(cls, records) -> "RatingsTable":
        """Build from ``(user, movie, rating[, timestamp])`` tuples, validating like the loader."""
        rows = [tuple(r) + (0,) * (4 - len(r)) for r in records]
        if not rows:
            raise EmptyDataset("no ratings")
        arr = np.array(rows, dtype=np.float64)
        table = cls(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2],
                    arr[:, 3].astype(np.int64))
        _validate(table)
        return table


def _validate(table: RatingsTable) -> None:
    r = table.ratings
    bad = (r < 1) | (r > 5) | (r != np.round(r))
    if bad.any():
        i = int(np.argmax(bad))
        raise RatingOutOfRange(f"record {i + 1}: rating {r[i]} is not an integer in 1..5")
    key = table.users.astype(np.int64) * (int(table.movies.max()) + 1) + table.movies
    uniq, first, counts = np.unique(key, return_index=True, return_counts=True)
    if uniq.size != key.size:
        dup = np.sort(first[counts > 1])[0]
        raise DuplicatePair(
            f"user {table.users[dup]} rated movie {table.movies[dup]} more than once")


def load_ratings(path) -> RatingsTable:
    """Parse a tab-separated ``user movie rating timestamp`` file (MovieLens ``u.data``)."""
    users, movies, ratings, stamps = [], [], [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise MalformedLine(line_no, line.rstrip("\n"))
            try:
                u, m, t = int(parts[0]), int(parts[1]), int(parts[3])
                r = float(parts[2])
            except ValueError:
                raise MalformedLine(line_no, line.rstrip("\n")) from None
            if not (1 <= r <= 5) or r != int(r):
                raise RatingOutOfRange(f"line {line_no}: rating {parts[2]} not in 1..5")
            users.append(u)
            movies.append(m)
            ratings.append(r)
            stamps.append(t)
    if not users:
        raise EmptyDataset(f"{path}: no ratings")
    table = RatingsTable(np.array(users, dtype=np.int64), np.array(movies, dtype=np.int64),
                         np.array(ratings, dtype=np.float64), np.array(stamps, dtype=np.int64))
    _validate(table)
    return table


def rating_matrix(table: RatingsTable, movie_ids, users=None):
    """Dense ``(users, movies)`` rating matrix; 0 where unrated.  Unknown movies are dropped."""
    movie_ids = np.asarray(movie_ids)
    col = {m: j for j, m in enumerate(movie_ids.tolist())}
    users = np.unique(table.users) if users is None else np.asarray(users)
    row = {u: i for i, u in enumerate(users.tolist())}
    r = np.zeros((users.size, movie_ids.size))
    for u, m, v in zip(table.users.tolist(), table.movies.tolist(), table.ratings.tolist()):
        i, j = row.get(u), col.get(m)
        if i is not None and j is not None:
            r[i, j] = v
    return r


def pearson_similarity(r: np.ndarray, min_common: int = 2) -> np.ndarray:
    """Pairwise Pearson correlation of movie columns over users who rated both.

    ``r`` is a ``(users, movies)`` matrix with 0 for missing ratings.  Pairs with
    fewer than ``min_common`` co-raters, or zero variance on the common set,
    get 0.  The diagonal is left as computed.
    """
    m = (r != 0).astype(np.float64)
    n = m.T @ m
    sx = r.T @ m                  # sx[i, j]: sum of ratings of i over co-raters of (i, j)
    sxx = (r * r).T @ m
    sxy = r.T @ r
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = sxy - sx * sx.T / n
        vx = sxx - sx * sx / n
        vy = vx.T
        denom = np.sqrt(vx * vy)
        c = cov / denom
    scale = np.maximum(1.0, np.maximum(sxx, sxx.T))
    valid = (n >= max(min_common, 1)) & (vx > 1e-12 * scale) & (vy > 1e-12 * scale)
    c = np.where(valid, c, 0.0)
    return np.clip(c, -1.0, 1.0)


def similarity_matrix(table: RatingsTable, movie_ids, min_common: int = 2,
                      keep_negative: bool = False, top_k: int | None = None) -> np.ndarray:
    """Un-normalized movie-similarity weights (symmetric, zero diagonal)."""
    w = pearson_similarity(rating_matrix(table, movie_ids), min_common)
    if not keep_negative:
        w = np.maximum(w, 0.0)
    np.fill_diagonal(w, 0.0)
    if top_k is not None and top_k < w.shape[0]:
        order = np.argsort(-np.abs(w), axis=1, kind="stable")[:, :top_k]
        keep = np.zeros_like(w, dtype=bool)
        np.put_along_axis(keep, order, True, axis=1)
        keep |= keep.T
        w = np.where(keep, w, 0.0)
    return w


def build_similarity_graph(table: RatingsTable, movie_ids, min_common: int = 2,
                           keep_negative: bool = False, top_k: int | None = None) -> Gso:
    """Correlation graph over ``movie_ids`` normalized to unit spectral norm."""
    w = similarity_matrix(table, movie_ids, min_common, keep_negative, top_k)
    if not np.any(w):
        raise DegenerateGraph("similarity graph has no edges")
    g = gso_from_matrix(w)
    return gso_from_matrix(w / g.spectral_norm())


def make_samples(table: RatingsTable, target_movie: int, node_map: dict,
                 users=None) -> tuple[SignalBatch, np.ndarray]:
    """One sample per user (optionally restricted to ``users``) who rated the target.

    Returns the batch and the user ids in sample order.
    """
    if target_movie not in node_map:
        raise NoEligibleUsers(f"target movie {target_movie} is not a graph node")
    t = node_map[target_movie]
    raters = np.unique(table.users[table.movies == target_movie])
    if users is not None:
        raters = raters[np.isin(raters, np.asarray(users))]
    if raters.size == 0:
        raise NoEligibleUsers(f"no selected user rated movie {target_movie}")
    movie_ids = np.array(sorted(node_map, key=node_map.get))
    x = rating_matrix(table.for_users(raters), movie_ids, raters)
    y = np.zeros_like(x)
    y[:, t] = x[:, t]
    x[:, t] = 0.0
    mask = np.zeros(x.shape, dtype=bool)
    mask[:, t] = True
    return SignalBatch(x, y, mask), raters


def most_rated_movie(table: RatingsTable) -> int:
    ids, counts = np.unique(table.movies, return_counts=True)
    return int(ids[np.argmax(counts)])  # ties resolve to the smallest id


@dataclass(frozen=True)
class DatasetSplit:
    train: SignalBatch
    slack: SignalBatch
    test: SignalBatch
    graph: Gso
    target_node: int
    target_movie: int
    movie_index_map: dict
    train_users: np.ndarray
    test_users: np.ndarray
    slack_index: np.ndarray


def split_dataset(table: RatingsTable, fraction: float = 0.9, split_seed: int = 0,
                  target_movie="most_rated", top_movies: int | None = None,
                  min_common: int = 2, keep_negative: bool = False, top_k: int | None = None,
                  slack_fraction: float = 0.2) -> DatasetSplit:
    """Shuffle the users who rated the target into train/test and assemble everything.

    The graph only sees ratings from users outside the test set; users who never
    rated the target are not samples and always stay on the training side.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    if not 0 < slack_fraction <= 1:
        raise ValueError("slack_fraction must be in (0, 1]")
    target = most_rated_movie(table) if target_movie in (None, "most_rated") else int(target_movie)
    eligible = np.unique(table.users[table.movies == target])
    if eligible.size < 10:
        raise TooFewUsers(f"only {eligible.size} users rated movie {target}; need >= 10")
    rng = np.random.default_rng(split_seed)
    shuffled = eligible[rng.permutation(eligible.size)]
    n_train = int(np.floor(fraction * eligible.size))
    train_users, test_users = np.sort(shuffled[:n_train]), np.sort(shuffled[n_train:])

    graph_side = table.select(~np.isin(table.users, test_users))
    movie_ids = np.unique(table.movies)
    if top_movies:
        counts = graph_side.rating_counts()
        ranked = sorted(movie_ids.tolist(), key=lambda m: (-counts.get(m, 0), m))
        kept = set(ranked[:top_movies]) | {target}
        movie_ids = np.array(sorted(kept))
    node_map = {int(m): j for j, m in enumerate(movie_ids.tolist())}
    g = build_similarity_graph(graph_side, movie_ids, min_common, keep_negative, top_k)

    train, train_users = make_samples(table, target, node_map, train_users)
    test, test_users = make_samples(table, target, node_map, test_users)
    n_slack = max(1, int(round(slack_fraction * len(train))))
    slack_index = np.sort(rng.choice(len(train), size=n_slack, replace=False))
    return DatasetSplit(train, train.subset(slack_index), test, g, node_map[target], target,
                        node_map, train_users, test_users, slack_index)
