"""Sequence representation, alphabets, Hamming distance, one-hot encoding, mutation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Canonical ordering of the 20 amino acids. Fixed so that one-hot encodings
# are reproducible across runs; prefixes of this string serve as the small
# synthetic alphabets (size 2, 4, ...).
PROTEIN_SYMBOLS = "ACDEFGHIKLMNPQRSTVWY"


@dataclass(frozen=True)
class Alphabet:
    """Ordered finite set of residue symbols."""

    symbols: str

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise ValueError(f"alphabet needs at least 2 symbols, got {len(self.symbols)}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError(f"alphabet symbols must be unique: {self.symbols!r}")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.symbols)})

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise ValueError(f"symbol {symbol!r} not in alphabet {self.symbols!r}") from None

    def symbol(self, ordinal: int) -> str:
        return self.symbols[ordinal]

    def encode(self, text: str) -> "Sequence":
        """Parse a text sequence into ordinals."""
        return Sequence(tuple(self.index(c) for c in text), self)


def protein_alphabet() -> Alphabet:
    return Alphabet(PROTEIN_SYMBOLS)


def small_alphabet(size: int) -> Alphabet:
    """Alphabet of the first `size` canonical symbols (binary, 4-letter, ...)."""
    if not 2 <= size <= len(PROTEIN_SYMBOLS):
        raise ValueError(f"alphabet size must be in [2, {len(PROTEIN_SYMBOLS)}], got {size}")
    return Alphabet(PROTEIN_SYMBOLS[:size])


@dataclass(frozen=True, eq=False)
class Sequence:
    """Fixed-length string over a finite alphabet, stored as integer ordinals.

    Equality and hashing use only the ordinals, so sequences from equal-sized
    alphabets compare by content.
    """

    residues: tuple[int, ...]
    alphabet: Alphabet = field(repr=False)

    def __post_init__(self):
        if not self.residues:
            raise ValueError("sequence must have at least one residue")
        v = self.alphabet.size
        for r in self.residues:
            if not 0 <= r < v:
                raise ValueError(f"residue ordinal {r} out of range for alphabet size {v}")

    def __len__(self) -> int:
        return len(self.residues)

    def __getitem__(self, i: int) -> int:
        return self.residues[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, Sequence) and self.residues == other.residues

    def __hash__(self) -> int:
        return hash(self.residues)

    def __repr__(self) -> str:
        return f"Sequence({self.text!r})"

    @property
    def text(self) -> str:
        return "".join(self.alphabet.symbols[r] for r in self.residues)


def hamming_distance(a: Sequence, b: Sequence) -> int:
    """Number of positions where `a` and `b` differ."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return sum(x != y for x, y in zip(a.residues, b.residues))


def encode_onehot(s: Sequence) -> np.ndarray:
    """One-hot encode to an L x V float matrix (row i hot at column s[i])."""
    mat = np.zeros((len(s), s.alphabet.size), dtype=np.float64)
    mat[np.arange(len(s)), s.residues] = 1.0
    return mat


def decode_onehot(mat: np.ndarray, alphabet: Alphabet) -> Sequence:
    """Inverse of encode_onehot via per-row argmax."""
    return Sequence(tuple(int(i) for i in np.argmax(mat, axis=1)), alphabet)


def encode_batch(seqs: list[Sequence]) -> np.ndarray:
    """Stack one-hot encodings into a (B, L, V) array."""
    if not seqs:
        raise ValueError("empty sequence batch")
    return np.stack([encode_onehot(s) for s in seqs])


def point_mutate(s: Sequence, position: int, symbol: int) -> Sequence:
    """Substitute one residue; the replacement must differ from the original."""
    if not 0 <= position < len(s):
        raise ValueError(f"position {position} out of range for length {len(s)}")
    if not 0 <= symbol < s.alphabet.size:
        raise ValueError(f"symbol ordinal {symbol} out of range for alphabet size {s.alphabet.size}")
    if s.residues[position] == symbol:
        raise ValueError(f"no-op substitution at position {position}")
    residues = list(s.residues)
    residues[position] = symbol
    return Sequence(tuple(residues), s.alphabet)


def random_mutant(s: Sequence, radius: int, rng: np.random.Generator) -> Sequence:
    """One mutant with 1..radius substitutions at distinct positions."""
    n_mut = int(rng.integers(1, radius + 1))
    positions = rng.choice(len(s), size=n_mut, replace=False)
    residues = list(s.residues)
    for pos in positions:
        # uniform over the V-1 alternatives to the current residue
        offset = int(rng.integers(1, s.alphabet.size))
        residues[pos] = (residues[pos] + offset) % s.alphabet.size
    return Sequence(tuple(residues), s.alphabet)


def sample_mutants(
    s: Sequence,
    radius: int,
    count: int,
    rng: np.random.Generator,
    max_attempts_per_mutant: int = 50,
) -> list[Sequence]:
    """Sample up to `count` distinct mutants within Hamming radius of `s`.

    The number of mutated positions is uniform on [1, radius], positions are
    drawn without replacement, and each replacement symbol is uniform over the
    alternatives. Duplicates are rejected and redrawn up to a bounded number
    of attempts, so fewer than `count` mutants may be returned when the
    neighborhood is nearly exhausted.
    """
    if not 1 <= radius <= len(s):
        raise ValueError(f"radius must be in [1, {len(s)}], got {radius}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    seen: set[Sequence] = set()
    out: list[Sequence] = []
    attempts = 0
    limit = count * max_attempts_per_mutant
    while len(out) < count and attempts < limit:
        attempts += 1
        m = random_mutant(s, radius, rng)
        if m not in seen:
            seen.add(m)
            out.append(m)
    return out
