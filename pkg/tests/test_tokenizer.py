from __future__ import annotations

import numpy as np
import pytest

from bufbench import codegen, tokenizer
from bufbench.codegen import GenConfig, derive_seed, generate_program, render_c, split_dataset
from bufbench.fixtures import motivating_example
from bufbench.tokenizer import (
    LexError,
    TokenizeError,
    Vocab,
    build_vocab,
    decode_grid,
    encode_file,
    extract_queries,
    lex_line,
    lex_source,
    remap_integers,
)


class TestLexer:
    def test_increment_statement(self):
        assert lex_line("entity_4++;") == ["entity_4", "++", ";"]
        assert lex_line("    entity_4++;") == ["entity_4", "++", ";"]

    def test_array_declaration_has_six_tokens(self):
        assert lex_line("char entity_7[11];") == \
            ["char", "entity_7", "[", "11", "]", ";"]

    def test_buffer_write_golden(self):
        # golden token stream: the char literal is one token
        assert lex_line("entity_8[entity_4] = 'x';") == \
            ["entity_8", "[", "entity_4", "]", "=", "'x'", ";"]

    def test_include_line(self):
        assert lex_line("#include <stdlib.h>") == ["#include", "<stdlib.h>"]

    def test_compound_operators(self):
        assert lex_line("if (entity_1 <= 10) {") == \
            ["if", "(", "entity_1", "<=", "10", ")", "{"]
        assert lex_line("while (entity_1 != 10) {") == \
            ["while", "(", "entity_1", "!=", "10", ")", "{"]

    def test_rand_call(self):
        assert lex_line("entity_3 = rand();") == \
            ["entity_3", "=", "rand", "(", ")", ";"]

    def test_error_reports_column(self):
        with pytest.raises(LexError) as err:
            lex_line("entity_1 = @5;")
        assert err.value.column == 11

    def test_whole_corpus_lexes(self, corpus_1000):
        _, manifest, out = corpus_1000
        for entry in manifest.entries[:100]:
            text = (out / "src" / entry.file).read_text()
            lines = lex_source(text)
            assert len(lines) == entry.line_count


class TestVocab:
    def test_empty_corpus_has_only_line_tokens(self):
        vocab = build_vocab([], n_lines=2)
        assert vocab.tokens == ["<line 1>", "<line 2>"]
        assert vocab.size == 3

    def test_ids_start_at_one(self):
        vocab = build_vocab(["entity_1 = 5;\n"], n_lines=1)
        assert 0 not in vocab.id_of.values()
        assert sorted(vocab.id_of.values()) == list(range(1, vocab.size))

    def test_serialization_deterministic(self, tmp_path, corpus_1000):
        _, manifest, out = corpus_1000
        texts = [(out / "src" / e.file).read_text() for e in manifest.entries[:50]]
        v1 = build_vocab(texts, 40)
        v2 = build_vocab(list(reversed(texts)), 40)
        v1.save(tmp_path / "a.json")
        v2.save(tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert Vocab.load(tmp_path / "a.json").tokens == v1.tokens

    def test_corpus_covers_all_integers(self, corpus_1000):
        _, manifest, out = corpus_1000
        texts = [(out / "src" / e.file).read_text() for e in manifest.entries]
        vocab = build_vocab(texts, 10)
        for i in range(100):
            assert str(i) in vocab, f"integer literal {i} missing"


class TestEncode:
    def test_padding_rows_and_columns(self):
        vocab = build_vocab(["entity_1 = 5;\n"], n_lines=3)
        grid = encode_file("entity_1 = 5;\n", vocab, 3, 6)
        assert grid.shape == (3, 6)
        assert grid[0, 0] == vocab.id_of["<line 1>"]
        assert (grid[1:] == 0).all()
        assert grid[0, 5] == 0

    def test_round_trip(self, corpus_1000):
        _, manifest, out = corpus_1000
        texts = [(out / "src" / e.file).read_text() for e in manifest.entries[:30]]
        n, j = tokenizer.corpus_dims(texts)
        vocab = build_vocab(texts, n)
        for text in texts:
            grid = encode_file(text, vocab, n, j)
            assert decode_grid(grid, vocab) == lex_source(text)

    def test_line_marker_prefix(self, corpus_1000):
        _, manifest, out = corpus_1000
        text = (out / "src" / manifest.entries[0].file).read_text()
        n, j = tokenizer.corpus_dims([text])
        vocab = build_vocab([text], n)
        grid = encode_file(text, vocab, n, j)
        for i in range(manifest.entries[0].line_count):
            assert grid[i, 0] == vocab.id_of[f"<line {i + 1}>"]

    def test_unknown_token_named(self):
        vocab = build_vocab(["entity_1 = 5;\n"], n_lines=2)
        with pytest.raises(TokenizeError, match="'7'"):
            encode_file("entity_1 = 7;\n", vocab, 2, 6)

    def test_overflow_errors(self):
        text = "entity_1 = 5;\nentity_1++;\n"
        vocab = build_vocab([text], n_lines=4)
        with pytest.raises(TokenizeError, match="lines"):
            encode_file(text, vocab, 1, 6)
        with pytest.raises(TokenizeError, match="tokens"):
            encode_file(text, vocab, 4, 3)

    def test_vocabulary_closure_across_splits(self, corpus_1000):
        _, manifest, out = corpus_1000
        train, _, test = split_dataset(manifest, (0.8, 0.0, 0.2), seed=11)
        train_texts = [(out / "src" / e.file).read_text() for e in train.entries]
        test_texts = [(out / "src" / e.file).read_text() for e in test.entries]
        n1, j1 = tokenizer.corpus_dims(train_texts)
        n2, j2 = tokenizer.corpus_dims(test_texts)
        n, j = max(n1, n2), max(j1, j2)
        vocab = build_vocab(train_texts, n)
        for text in test_texts:  # must not raise
            encode_file(text, vocab, n, j)


class TestQueries:
    def test_motivating_example_queries(self):
        ast = motivating_example()
        text = render_c(ast)
        from bufbench import oracle
        labels = oracle.label_lines(ast)
        entry = codegen.ManifestEntry(
            file="x.c", content_hash=codegen.content_hash(text),
            line_count=ast.line_count, labels=tuple(labels), writes=())
        queries = extract_queries(entry)
        assert queries == [(19, 1), (21, 3)]  # rows for lines 20 and 22

    def test_no_writes_no_queries(self):
        entry = codegen.ManifestEntry(
            file="x.c", content_hash="0" * 64, line_count=3,
            labels=("OTHER", "BODY", "OTHER"), writes=())
        assert extract_queries(entry) == []

    def test_average_writes_per_file(self, corpus_1000):
        _, manifest, _ = corpus_1000
        writes = sum(len(e.writes) for e in manifest.entries)
        assert 1.0 <= writes / len(manifest.entries) <= 3.0


class TestTensorFile:
    def _dataset(self, corpus, n_entries=40):
        _, manifest, out = corpus
        sub = codegen.DatasetManifest(
            gen_config=manifest.gen_config,
            entries=manifest.entries[:n_entries])
        texts = [(out / "src" / e.file).read_text() for e in sub.entries]
        n, j = tokenizer.corpus_dims(texts)
        vocab = build_vocab(texts, n)
        ds = tokenizer.encode_dataset(sub, out / "src", vocab, n, j)
        return ds, vocab

    def test_round_trip(self, tmp_path, corpus_1000):
        ds, _ = self._dataset(corpus_1000)
        tokenizer.save_tensors(tmp_path / "t.bin", ds)
        again = tokenizer.load_tensors(tmp_path / "t.bin")
        assert np.array_equal(again.grids, ds.grids)
        assert np.array_equal(again.query_file, ds.query_file)
        assert np.array_equal(again.query_row, ds.query_row)
        assert np.array_equal(again.query_label, ds.query_label)
        assert again.vocab_size == ds.vocab_size

    def test_magic_checked(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"NOTATENSORFILE")
        with pytest.raises(TokenizeError, match="magic"):
            tokenizer.load_tensors(tmp_path / "bad.bin")

    def test_query_rows_hold_bufwrite_labels(self, corpus_1000):
        ds, vocab = self._dataset(corpus_1000)
        # every query row must be a real line whose grid row is non-pad
        for fi, row in zip(ds.query_file, ds.query_row):
            assert ds.grids[fi, row, 0] != 0


class TestRemapIntegers:
    def _small(self):
        texts = ["entity_1 = 11;\nentity_1 = 42;\nentity_2 = 69;\nentity_2 = 0;\n"]
        n, j = tokenizer.corpus_dims(texts)
        vocab = build_vocab(texts, n)
        grid = encode_file(texts[0], vocab, n, j)
        ds = tokenizer.TensorDataset(
            grids=grid[None], query_file=np.array([0], dtype=np.uint32),
            query_row=np.array([0], dtype=np.uint16),
            query_label=np.array([1], dtype=np.uint8), vocab_size=vocab.size)
        return ds, vocab

    def test_integer_ids_collapse_to_zero_token(self):
        ds, vocab = self._small()
        out = remap_integers(ds, vocab)
        zero = vocab.id_of["0"]
        for lit in ("11", "42", "69"):
            assert vocab.id_of[lit] in ds.grids
            assert vocab.id_of[lit] not in out.grids
        decoded = decode_grid(out.grids[0], vocab)
        assert decoded[0][-2] == "0"
        assert (out.grids == zero).sum() >= 4

    def test_non_integer_cells_unchanged(self):
        ds, vocab = self._small()
        out = remap_integers(ds, vocab)
        lits = set(vocab.integer_literal_ids())
        mask = ~np.isin(ds.grids, list(lits))
        assert np.array_equal(out.grids[mask], ds.grids[mask])
        assert out.grids.shape == ds.grids.shape
        assert np.array_equal(out.query_label, ds.query_label)

    def test_idempotent(self):
        ds, vocab = self._small()
        once = remap_integers(ds, vocab)
        twice = remap_integers(once, vocab)
        assert np.array_equal(once.grids, twice.grids)

    def test_line_tokens_survive(self):
        ds, vocab = self._small()
        out = remap_integers(ds, vocab)
        assert out.grids[0, 0, 0] == vocab.id_of["<line 1>"]

    def test_requires_zero_token(self):
        texts = ["entity_1 = 11;\n"]
        vocab = build_vocab(texts, 1)
        grid = encode_file(texts[0], vocab, 1, 6)
        ds = tokenizer.TensorDataset(
            grids=grid[None], query_file=np.zeros(0, np.uint32),
            query_row=np.zeros(0, np.uint16), query_label=np.zeros(0, np.uint8),
            vocab_size=vocab.size)
        with pytest.raises(TokenizeError):
            remap_integers(ds, vocab)
