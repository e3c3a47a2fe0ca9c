from __future__ import annotations

import json
import shutil
import subprocess

import pytest

from bufbench import codegen, oracle
from bufbench.codegen import (
    ConfigError,
    GenConfig,
    derive_seed,
    generate_program,
    render_c,
    serialize_ast,
    split_dataset,
)

CFG = GenConfig(seed=5)


def _programs(n, cfg=CFG, base=77):
    for i in range(n):
        yield generate_program(derive_seed(base, "prog", i), cfg)


def test_generation_is_deterministic():
    ast1 = generate_program(1234, CFG)
    ast2 = generate_program(1234, CFG)
    assert serialize_ast(ast1) == serialize_ast(ast2)
    assert render_c(ast1) == render_c(ast2)


def test_different_seeds_differ():
    texts = {render_c(generate_program(s, CFG)) for s in range(10)}
    assert len(texts) > 1


def test_literals_stay_in_range():
    for ast in _programs(200):
        for value in codegen.collect_literals(ast):
            assert 0 <= value <= 99


def test_cf_node_count_within_configured_maximum():
    counts = set()
    for ast in _programs(300):
        counts.add(len(ast.cf_nodes))
    assert counts <= {1, 2, 3}
    assert counts == {1, 2, 3}


def test_every_program_has_a_nontrivial_element():
    for ast in _programs(100):
        has_rand = bool(oracle.rand_entities(ast))
        assert ast.cf_nodes or has_rand


def test_nesting_depth_capped_at_two():
    depths = set()
    for ast in _programs(300):
        depths.update(n.depth for n in ast.cf_nodes)
    assert depths == {1, 2}


def test_empty_body_renders_minimal_skeleton():
    ast = codegen.ProgramAst([])
    assert render_c(ast) == "#include <stdlib.h>\nvoid main() {\n}\n"
    assert ast.line_count == 3


def test_render_line_numbers_match_ast():
    for ast in _programs(50):
        lines = render_c(ast).splitlines()
        assert len(lines) == ast.line_count
        for w in ast.writes:
            assert "] = '" in lines[w.line - 1]
        for node in ast.cf_nodes:
            header = lines[node.line - 1].lstrip()
            assert header.startswith(("if ", "while ", "for "))


def test_declarations_precede_use():
    for ast in _programs(100):
        decl_lines = ast.entities.values()
        last_decl = max(decl_lines)
        first_decl = min(decl_lines)
        assert first_decl == 3
        # declarations form a contiguous block at the top
        assert last_decl - first_decl + 1 == len(ast.entities)


@pytest.mark.skipif(shutil.which("gcc") is None, reason="gcc unavailable")
def test_generated_sources_compile_as_c99(tmp_path):
    for i, ast in enumerate(_programs(20)):
        path = tmp_path / f"p{i}.c"
        path.write_text(render_c(ast))
        res = subprocess.run(
            ["gcc", "-std=c99", "-fsyntax-only", str(path)],
            capture_output=True, text=True)
        assert res.returncode == 0, res.stderr


def test_invalid_configs_rejected():
    with pytest.raises(ConfigError):
        GenConfig(int_range=(5, 4)).validate()
    with pytest.raises(ConfigError):
        GenConfig(int_range=(0, 5)).validate()
    with pytest.raises(ConfigError):
        GenConfig(max_entities=2).validate()
    with pytest.raises(ConfigError):
        GenConfig(writes_per_file=(0, 3)).validate()
    with pytest.raises(ConfigError):
        generate_program(1, GenConfig(int_range=(10, 4)))


def test_generate_dataset_empty(tmp_path):
    manifest = codegen.generate_dataset(GenConfig(seed=1, file_count=0), tmp_path)
    assert manifest.entries == []
    assert (tmp_path / "manifest.json").exists()


def test_generate_dataset_deterministic(tmp_path):
    cfg = GenConfig(seed=42, file_count=40)
    codegen.generate_dataset(cfg, tmp_path / "a")
    codegen.generate_dataset(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    b = (tmp_path / "b" / "manifest.json").read_bytes()
    assert a == b


def test_generate_dataset_parallel_matches_serial(tmp_path):
    cfg = GenConfig(seed=43, file_count=30)
    codegen.generate_dataset(cfg, tmp_path / "serial", jobs=1)
    codegen.generate_dataset(cfg, tmp_path / "par", jobs=2)
    assert ((tmp_path / "serial" / "manifest.json").read_bytes()
            == (tmp_path / "par" / "manifest.json").read_bytes())


def test_manifest_files_named_by_hash_prefix(tmp_path):
    cfg = GenConfig(seed=7, file_count=10)
    manifest = codegen.generate_dataset(cfg, tmp_path)
    hashes = set()
    for entry in manifest.entries:
        assert entry.file == entry.content_hash[:10] + ".c"
        assert len(entry.labels) == entry.line_count
        text = (tmp_path / "src" / entry.file).read_text()
        assert codegen.content_hash(text) == entry.content_hash
        hashes.add(entry.content_hash)
    assert len(hashes) == len(manifest.entries)


def test_manifest_roundtrip(tmp_path):
    cfg = GenConfig(seed=8, file_count=5)
    manifest = codegen.generate_dataset(cfg, tmp_path)
    again = codegen.DatasetManifest.load(tmp_path / "manifest.json")
    assert again.to_json() == manifest.to_json()


def test_every_file_has_a_bufwrite_label(corpus_1000):
    _, manifest, _ = corpus_1000
    for entry in manifest.entries:
        assert any(label.startswith("BUFWRITE_") for label in entry.labels)


def test_label_coverage_over_corpus(corpus_1000):
    _, manifest, _ = corpus_1000
    seen = set()
    kinds = set()
    for entry in manifest.entries:
        seen.update(entry.labels)
        for w in entry.writes:
            kinds.add((w.structural_kind, w.safety))
    assert seen == set(oracle.ALL_LINE_LABELS)
    assert kinds == {("COND", "SAFE"), ("COND", "UNSAFE"),
                     ("TAUT", "SAFE"), ("TAUT", "UNSAFE")}


def test_split_all_train(corpus_1000):
    _, manifest, _ = corpus_1000
    train, val, test = split_dataset(manifest, (1.0, 0.0, 0.0), seed=1)
    assert len(train.entries) == len(manifest.entries)
    assert not val.entries and not test.entries


def test_split_largest_remainder_sizes(tmp_path):
    cfg = GenConfig(seed=9, file_count=10)
    manifest = codegen.generate_dataset(cfg, tmp_path)
    train, val, test = split_dataset(manifest, (0.8, 0.1, 0.1), seed=3)
    assert (len(train.entries), len(val.entries), len(test.entries)) == (8, 1, 1)


def test_split_deterministic_and_disjoint(corpus_1000):
    _, manifest, _ = corpus_1000
    parts1 = split_dataset(manifest, (0.7, 0.2, 0.1), seed=5)
    parts2 = split_dataset(manifest, (0.7, 0.2, 0.1), seed=5)
    names1 = [tuple(e.file for e in p.entries) for p in parts1]
    names2 = [tuple(e.file for e in p.entries) for p in parts2]
    assert names1 == names2
    flat = [f for names in names1 for f in names]
    assert len(flat) == len(set(flat)) == len(manifest.entries)


def test_split_invalid_fractions(corpus_1000):
    _, manifest, _ = corpus_1000
    with pytest.raises(ConfigError):
        split_dataset(manifest, (0.5, 0.2, 0.1), seed=1)


def test_manifest_json_is_valid(corpus_1000):
    _, manifest, out = corpus_1000
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["schema_version"] == 1
    assert doc["gen_config"]["max_entities"] == 10
    assert len(doc["entries"]) == 1000
