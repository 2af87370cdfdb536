from pathlib import Path

import numpy as np
import pytest

from adafm.movielens_download import load_movielens, movielens_schema, title_tokens, title_year

SCHEMA_PATH = Path(__file__).resolve().parents[1] / "configs" / "schemas" / "movielens.yaml"

RATINGS = "1::10::5::978300760\n1::20::3::978302109\n2::10::4::978301968\n2::30::1::978300275\n"
USERS = "1::F::1::10::48067\n2::M::56::16::70072\n"
MOVIES = (
    "10::Toy Story (1995)::Animation|Children's|Comedy\n"
    "20::Heat (1995)::Action|Crime|Thriller\n"
    "30::Sabrina (1995)::Comedy|Romance\n"
)


@pytest.fixture
def raw_dir(tmp_path):
    for name, text in (("ratings", RATINGS), ("users", USERS), ("movies", MOVIES)):
        (tmp_path / f"{name}.dat").write_text(text, encoding="latin-1")
    return tmp_path


def test_ratings_are_binarised_at_four(raw_dir, caplog):
    with caplog.at_level("WARNING"):
        data = load_movielens(raw_dir, movielens_schema(SCHEMA_PATH))
    frame = data.frame
    assert list(frame["label"]) == [1, 0, 1, 0]
    assert "one interaction type" in caplog.text
    assert "title" not in frame.columns


def test_user_and_movie_attributes_join(raw_dir):
    frame = load_movielens(raw_dir, movielens_schema(SCHEMA_PATH)).frame
    first = frame[frame["user"] == 2].iloc[0]
    assert (first["gender"], first["age"], first["occupation"]) == (2, 7, 17)
    assert first["year"] == 95
    batch = load_movielens(raw_dir, movielens_schema(SCHEMA_PATH)).encode()
    np.testing.assert_array_equal(batch.lengths["genres"], [3, 3, 3, 2])
    assert batch.values["genres"][0].tolist()[:3] == [3, 4, 5]


def test_titles_become_token_sequences(raw_dir):
    schema = movielens_schema(SCHEMA_PATH, use_titles=True)
    batch = load_movielens(raw_dir, schema).encode()
    assert "title" in schema.names
    np.testing.assert_array_equal(batch.lengths["title"], [2, 1, 2, 1])
    assert title_tokens("Toy Story (1995)") == ["toy", "story"]
    assert title_year("Toy Story (1995)") == 1995 and title_year("Untitled") == 0


def test_missing_file_is_named(raw_dir):
    (raw_dir / "users.dat").unlink()
    with pytest.raises(FileNotFoundError, match="users.dat"):
        load_movielens(raw_dir, movielens_schema(SCHEMA_PATH))


def test_ratings_for_unknown_users_are_rejected(raw_dir):
    (raw_dir / "ratings.dat").write_text(RATINGS + "9::10::4::978300760\n", encoding="latin-1")
    with pytest.raises(ValueError):
        load_movielens(raw_dir, movielens_schema(SCHEMA_PATH))
