"""
movielens_download.py
-----------------------
Downloads the MovieLens-1M archive and assembles one sample per rating.

Label     : rating ≥ 4 → 1, else 0
User side : user_id, gender, age, occupation
Item side : movie_id, year, genres (sequence), optional title tokens

Output:
    data/raw/ml-1m/{ratings,users,movies}.dat
"""

from __future__ import annotations

import io
import logging
import re
import zipfile
from pathlib import Path

import numpy as np
import pandas as pd
import requests

from utils.embedding import ITEM_COL, LABEL_COL, TIME_COL, USER_COL, FeatureSchema, FeatureSpec

from .dataset import Dataset, join_sequence

logger = logging.getLogger(__name__)

URL = "https://files.grouplens.org/datasets/movielens/ml-1m.zip"
RAW = Path("data/raw/ml-1m")
FILES = {
    "ratings": ["user", "item", "rating", TIME_COL],
    "users": ["user", "gender", "age", "occupation", "zip"],
    "movies": ["item", "title", "genres"],
}
GENRES = (
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary", "Drama", "Fantasy",
    "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
AGES = (1, 18, 25, 35, 45, 50, 56)
POSITIVE_RATING = 4


def download_movielens(out_dir: str | Path = RAW) -> Path:
    out_dir = Path(out_dir)
    if all((out_dir / f"{name}.dat").exists() for name in FILES):
        logger.info("✅ MovieLens-1M already present in %s", out_dir)
        return out_dir
    logger.info("📥 Downloading MovieLens-1M from %s", URL)
    try:
        r = requests.get(URL, timeout=120)
        r.raise_for_status()
    except requests.RequestException as e:
        raise RuntimeError(f"❌ Failed to download MovieLens-1M: {e}") from e
    out_dir.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(io.BytesIO(r.content)) as zf:
        for name in FILES:
            (out_dir / f"{name}.dat").write_bytes(zf.read(f"ml-1m/{name}.dat"))
    logger.info("💾 Saved MovieLens-1M → %s", out_dir)
    return out_dir


def read_dat(path: Path, columns: list[str]) -> pd.DataFrame:
    if not path.exists():
        raise FileNotFoundError(f"❌ MovieLens file not found: {path}")
    try:
        df = pd.read_csv(path, sep="::", engine="python", header=None, names=columns, encoding="latin-1")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ValueError(f"❌ Corrupt MovieLens file {path.name}: {e}") from e
    if df.empty or df[columns].isna().any().any():
        raise ValueError(f"❌ Corrupt MovieLens file {path.name}: empty or missing fields")
    return df


def title_year(title: str) -> int:
    m = re.search(r"\((\d{4})\)\s*$", title)
    return int(m.group(1)) if m else 0


def title_tokens(title: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", re.sub(r"\(\d{4}\)\s*$", "", title).lower())


def movielens_schema(path: str | Path, use_titles: bool = False, dim: int | None = None) -> FeatureSchema:
    """Schema from YAML; the title feature is dropped unless requested."""
    schema = FeatureSchema.from_yaml(path)
    feats = tuple(f for f in schema.features if use_titles or f.name != "title")
    return FeatureSchema(feats, dim or schema.dim)


def load_movielens(path: str | Path, schema: FeatureSchema) -> Dataset:
    """Join ratings with user and movie attributes, binarise ratings."""
    path = Path(path)
    ratings = read_dat(path / "ratings.dat", FILES["ratings"])
    users = read_dat(path / "users.dat", FILES["users"])
    movies = read_dat(path / "movies.dat", FILES["movies"])
    logger.info("📥 Loaded %s ratings, %s users, %s movies", f"{len(ratings):,}", f"{len(users):,}", f"{len(movies):,}")

    if users["user"].duplicated().any():
        raise ValueError("❌ users.dat lists a user more than once")

    users["user_id"] = users["user"]
    users["gender"] = users["gender"].map({"F": 1, "M": 2}).fillna(0).astype(np.int64)
    users["age"] = users["age"].map({a: j + 1 for j, a in enumerate(AGES)}).fillna(0).astype(np.int64)
    users["occupation"] = users["occupation"].astype(np.int64) + 1

    genre_code = {g: j + 1 for j, g in enumerate(GENRES)}
    movies["movie_id"] = movies["item"]
    movies["year"] = movies["title"].map(title_year).sub(1900).clip(lower=0, upper=127)
    movies["genres"] = [join_sequence(genre_code[g] for g in s.split("|") if g in genre_code) for s in movies["genres"]]

    names = set(schema.names)
    if "title" in names:
        spec = schema.features[schema.index("title")]
        tokens = movies["title"].map(title_tokens)
        counts = pd.Series([t for toks in tokens for t in toks]).value_counts()
        vocab = {tok: j + 1 for j, tok in enumerate(counts.index[: spec.vocab - 1])}
        movies["title"] = [join_sequence(vocab[t] for t in toks if t in vocab) for toks in tokens]

    frame = ratings.merge(users, on="user", how="left", validate="many_to_one")
    frame = frame.merge(movies.drop(columns=[] if "title" in names else ["title"]), on="item", how="left", validate="many_to_one")
    if frame[["user_id", "movie_id"]].isna().any().any():
        raise ValueError("❌ ratings.dat references users or movies missing from users.dat / movies.dat")
    frame[LABEL_COL] = (frame["rating"] >= POSITIVE_RATING).astype(np.int64)
    frame = frame.rename(columns={"user": USER_COL, "item": ITEM_COL})

    logger.warning("⚠️ MovieLens has one interaction type: rating events stand in for impressions, likes and comments")
    keep = schema.names + [LABEL_COL, USER_COL, ITEM_COL, TIME_COL]
    return Dataset(frame[keep], schema, "all", "movielens")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    download_movielens()
