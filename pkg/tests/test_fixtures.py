"""The committed replay fixtures are exactly what the authoring scripts produce."""

from __future__ import annotations

import json

import pytest
from author import AUTHORS, BENCHMARK_ANNOTATIONS, benchmark_catalog, e2e_catalog, edge_case_catalog, image_name
from conftest import FIXTURES, IMAGES, REPLAY


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("name", sorted(AUTHORS))
def test_replay_fixtures_regenerate(tmp_path, name):
    AUTHORS[name](tmp_path / name)
    assert _tree(tmp_path / name) == _tree(REPLAY / name)


def test_images_and_annotations_regenerate():
    for script in {s.name: s for s in [*e2e_catalog(), *edge_case_catalog(), *benchmark_catalog(False)]}.values():
        assert (IMAGES / image_name(script)).read_bytes() == script.image_bytes()
    lines = (FIXTURES / "benchmark.jsonl").read_text().splitlines()
    assert [json.loads(line) for line in lines] == BENCHMARK_ANNOTATIONS
