"""Lexing, vocabulary construction, and padded token grids.

A source file becomes an N x J grid of integer token ids: one row per line,
each row starting with a ``<line i>`` marker token, zero-padded on the right
and bottom. Id 0 is reserved for padding; real tokens get ids 1..V-1 in
sorted token order. Query samples pair a grid with the row of one buffer
write and its four-way label.

The lexer covers exactly the generator's surface syntax (a tiny C subset),
which keeps token boundaries reproducible without a compiler frontend. The
include line is lexed as the two tokens ``#include`` and ``<stdlib.h>``.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codegen import DatasetManifest, ManifestEntry

TENSOR_MAGIC = b"SBABI1"

LABEL4_NAMES = ("COND_SAFE", "COND_UNSAFE", "TAUT_SAFE", "TAUT_UNSAFE")
LABEL4_FROM_LINE_LABEL = {
    "BUFWRITE_COND_SAFE": 0,
    "BUFWRITE_COND_UNSAFE": 1,
    "BUFWRITE_TAUT_SAFE": 2,
    "BUFWRITE_TAUT_UNSAFE": 3,
}

_TOKEN_RE = re.compile(
    r"""
    \s+
  | \#include
  | <stdlib\.h>
  | '[0-9A-Za-z]'
  | [0-9]+
  | [A-Za-z_][A-Za-z0-9_]*
  | \+\+ | <= | >= | == | != | [-+<>=;,(){}\[\]]
    """,
    re.VERBOSE,
)


class LexError(ValueError):
    """Input contains a character outside the grammar's alphabet."""

    def __init__(self, line: str, column: int):
        self.column = column
        super().__init__(f"cannot lex column {column}: {line!r}")


class TokenizeError(ValueError):
    """Encoding failed (unknown token or grid overflow)."""


def lex_line(text: str) -> list[str]:
    """Split one source line into tokens; whitespace is discarded."""
    tokens: list[str] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise LexError(text, pos)
        if not m.group().isspace():
            tokens.append(m.group())
        pos = m.end()
    return tokens


def lex_source(text: str) -> list[list[str]]:
    return [lex_line(line) for line in text.rstrip("\n").split("\n")]


def line_token(i: int) -> str:
    return f"<line {i}>"


_LINE_TOKEN_RE = re.compile(r"^<line (\d+)>$")


class Vocab:
    """Bidirectional token <-> id map; id 0 is the padding symbol."""

    def __init__(self, tokens: list[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.id_of = {tok: i + 1 for i, tok in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        """V, counting the padding id."""
        return len(self.tokens) + 1

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def token_of(self, idx: int) -> str:
        if idx == 0:
            raise KeyError("id 0 is padding")
        return self.tokens[idx - 1]

    def to_json(self) -> str:
        return json.dumps(self.tokens, indent=0) + "\n"

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @staticmethod
    def load(path: Path | str) -> "Vocab":
        return Vocab(json.loads(Path(path).read_text(encoding="utf-8")))

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def integer_literal_ids(self) -> list[int]:
        return [self.id_of[t] for t in self.tokens if t.isdigit()]


def build_vocab(sources: list[str], n_lines: int) -> Vocab:
    """Vocabulary over a corpus plus <line 1>..<line n_lines> markers.

    Ids are assigned in sorted token order, so the same corpus always
    yields byte-identical vocabulary files.
    """
    tokens: set[str] = set()
    for text in sources:
        for line_tokens in lex_source(text):
            tokens.update(line_tokens)
    tokens.update(line_token(i) for i in range(1, n_lines + 1))
    return Vocab(sorted(tokens))


def encode_file(text: str, vocab: Vocab, n_lines: int, n_tokens: int) -> np.ndarray:
    """Encode one source file into an (n_lines, n_tokens) uint16 grid.

    Row i holds [id(<line i+1>), token ids..., 0 padding]; rows past the
    true line count are all zero. Unknown tokens and dimension overflows
    raise TokenizeError (remapping is a separate, explicit operation).
    """
    lines = lex_source(text)
    if len(lines) > n_lines:
        raise TokenizeError(f"file has {len(lines)} lines, grid holds {n_lines}")
    grid = np.zeros((n_lines, n_tokens), dtype=np.uint16)
    for i, tokens in enumerate(lines):
        row = [line_token(i + 1)] + tokens
        if len(row) > n_tokens:
            raise TokenizeError(
                f"line {i + 1} has {len(row)} tokens (incl. marker), grid holds {n_tokens}")
        for j, tok in enumerate(row):
            if tok not in vocab:
                raise TokenizeError(f"unknown token {tok!r} on line {i + 1}")
            grid[i, j] = vocab.id_of[tok]
    return grid


def decode_grid(grid: np.ndarray, vocab: Vocab) -> list[list[str]]:
    """Token streams per non-pad line, line markers stripped."""
    out = []
    for row in grid:
        ids = [int(x) for x in row if x != 0]
        if not ids:
            continue
        tokens = [vocab.token_of(i) for i in ids]
        if _LINE_TOKEN_RE.match(tokens[0]):
            tokens = tokens[1:]
        out.append(tokens)
    return out


def extract_queries(entry: ManifestEntry) -> list[tuple[int, int]]:
    """(0-based grid row, 4-class label id) for each buffer-write line."""
    queries = []
    for lineno, label in enumerate(entry.labels, start=1):
        if label in LABEL4_FROM_LINE_LABEL:
            queries.append((lineno - 1, LABEL4_FROM_LINE_LABEL[label]))
    return queries


@dataclass
class TensorDataset:
    """Encoded corpus: grids plus the query table."""

    grids: np.ndarray        # (n_files, N, J) uint16
    query_file: np.ndarray   # (n_queries,) uint32, index into grids
    query_row: np.ndarray    # (n_queries,) uint16, 0-based grid row
    query_label: np.ndarray  # (n_queries,) uint8, 4-class id
    vocab_size: int

    @property
    def n_files(self) -> int:
        return self.grids.shape[0]

    @property
    def n_queries(self) -> int:
        return len(self.query_label)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.grids.shape)


def corpus_dims(sources: list[str]) -> tuple[int, int]:
    """(max lines per file, max tokens per line including the marker)."""
    n = 0
    j = 0
    for text in sources:
        lines = lex_source(text)
        n = max(n, len(lines))
        for tokens in lines:
            j = max(j, len(tokens) + 1)
    return n, j


def encode_dataset(manifest: DatasetManifest, src_dir: Path | str, vocab: Vocab,
                   n_lines: int, n_tokens: int) -> TensorDataset:
    """Encode every manifest file and collect its query samples.

    Query rows are checked against the manifest labels, so a misaligned
    grid surfaces as an integrity error instead of a silent shift.
    """
    src = Path(src_dir)
    grids = np.zeros((len(manifest.entries), n_lines, n_tokens), dtype=np.uint16)
    qf: list[int] = []
    qr: list[int] = []
    ql: list[int] = []
    for fi, entry in enumerate(manifest.entries):
        text = (src / entry.file).read_text(encoding="utf-8")
        grid = encode_file(text, vocab, n_lines, n_tokens)
        if int((grid[:, 0] != 0).sum()) != entry.line_count:
            raise TokenizeError(
                f"{entry.file}: grid has a different line count than the manifest")
        grids[fi] = grid
        for row, label in extract_queries(entry):
            qf.append(fi)
            qr.append(row)
            ql.append(label)
    return TensorDataset(
        grids=grids,
        query_file=np.asarray(qf, dtype=np.uint32),
        query_row=np.asarray(qr, dtype=np.uint16),
        query_label=np.asarray(ql, dtype=np.uint8),
        vocab_size=vocab.size,
    )


def remap_integers(dataset: TensorDataset, vocab: Vocab) -> TensorDataset:
    """Map every integer-literal token id to the id of token "0".

    Grid shape, non-literal cells, and labels are untouched. Idempotent.
    """
    if "0" not in vocab:
        raise TokenizeError('vocabulary does not contain the token "0"')
    zero_id = vocab.id_of["0"]
    literal_ids = np.asarray(vocab.integer_literal_ids(), dtype=np.uint16)
    lut = np.arange(vocab.size, dtype=np.uint16)
    lut[literal_ids] = zero_id
    return TensorDataset(
        grids=lut[dataset.grids],
        query_file=dataset.query_file.copy(),
        query_row=dataset.query_row.copy(),
        query_label=dataset.query_label.copy(),
        vocab_size=dataset.vocab_size,
    )


# ---------------------------------------------------------------------------
# Tensor file format (see docs/formats.md)
# ---------------------------------------------------------------------------


def save_tensors(path: Path | str, dataset: TensorDataset) -> None:
    """Write the flat binary tensor file.

    Layout: magic "SBABI1"; little-endian u32 N_F, N, J, V; N_F*N*J
    little-endian u16 token ids; u32 query count; then one record per query
    (u32 file index, u16 row, u8 label).
    """
    nf, n, j = dataset.shape
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<4I", nf, n, j, dataset.vocab_size))
        fh.write(dataset.grids.astype("<u2").tobytes())
        fh.write(struct.pack("<I", dataset.n_queries))
        for fi, row, label in zip(dataset.query_file, dataset.query_row,
                                  dataset.query_label):
            fh.write(struct.pack("<IHB", int(fi), int(row), int(label)))


def load_tensors(path: Path | str) -> TensorDataset:
    data = Path(path).read_bytes()
    if data[:len(TENSOR_MAGIC)] != TENSOR_MAGIC:
        raise TokenizeError(f"{path}: not a tensor file (bad magic)")
    off = len(TENSOR_MAGIC)
    nf, n, j, v = struct.unpack_from("<4I", data, off)
    off += 16
    count = nf * n * j
    grids = np.frombuffer(data, dtype="<u2", count=count, offset=off)
    grids = grids.reshape(nf, n, j).copy()
    off += 2 * count
    (nq,) = struct.unpack_from("<I", data, off)
    off += 4
    qf = np.zeros(nq, dtype=np.uint32)
    qr = np.zeros(nq, dtype=np.uint16)
    ql = np.zeros(nq, dtype=np.uint8)
    for i in range(nq):
        fi, row, label = struct.unpack_from("<IHB", data, off)
        off += 7
        qf[i], qr[i], ql[i] = fi, row, label
    return TensorDataset(grids=grids, query_file=qf, query_row=qr,
                         query_label=ql, vocab_size=v)
