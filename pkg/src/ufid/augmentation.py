"""Query augmentation: expand one query into a perturbed batch of size |M|+1.

Unconditional queries get |M| additive Gaussian perturbations with a small
weight alpha; conditional (text) queries get |M| distinct phrases appended.
Element 0 of the returned batch is always the original query, untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ModeMismatchError, PhrasePoolError, ValidationError
from .rng import RngSeed, derive_rng
from .types import Image, ImageKind, Query, QueryMode

DEFAULT_MAGNITUDE_SIZE = 4
DEFAULT_ALPHA = 0.01


@dataclass(frozen=True)
class MagnitudeSet:
    """Size and weight of the Gaussian perturbation set, plus the seed that
    makes the draws reproducible per query."""

    size: int = DEFAULT_MAGNITUDE_SIZE
    alpha: float = DEFAULT_ALPHA
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))

    def __post_init__(self):
        if self.size < 0:
            raise ValidationError(f"magnitude set size must be >= 0, got {self.size}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class PhrasePool:
    """Distinct phrases appended to conditional queries.

    The pool must be at least as large as the magnitude set so each query
    can draw its phrases without replacement.
    """

    phrases: tuple[str, ...]
    separator: str = " "

    def __post_init__(self):
        object.__setattr__(self, "phrases", tuple(self.phrases))
        if any(not p for p in self.phrases):
            raise ValidationError("phrase pool must not contain empty phrases")
        if len(set(self.phrases)) != len(self.phrases):
            raise ValidationError("phrase pool entries must be distinct")

    def __len__(self) -> int:
        return len(self.phrases)

    @classmethod
    def from_file(cls, path: str | Path, separator: str = " ") -> "PhrasePool":
        """Newline-delimited UTF-8, one phrase per line. Blank lines and
        lines starting with '#' are ignored."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        phrases = [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
        if not phrases:
            raise PhrasePoolError(f"phrase pool file {path} contains no phrases")
        return cls(phrases=tuple(phrases), separator=separator)

    @classmethod
    def bundled(cls) -> "PhrasePool":
        """The 50-phrase pool shipped with the package."""
        text = resources.files("ufid.data").joinpath("phrases.txt").read_text(encoding="utf-8")
        phrases = [ln.strip() for ln in text.splitlines()
                   if ln.strip() and not ln.lstrip().startswith("#")]
        return cls(phrases=tuple(phrases))


def augment_unconditional(q: Query, m: MagnitudeSet) -> list[Query]:
    """Batch [q, q + a*eps_1, ..., q + a*eps_|M|].

    Each eps_j is drawn i.i.d. standard normal per element from the stream
    labelled ``aug/<query id>/<j>``, so the batch is a pure function of
    (query, magnitude set).
    """
    if q.mode is not QueryMode.UNCONDITIONAL:
        raise ModeMismatchError("augment_unconditional requires an unconditional query")
    assert q.noise is not None
    batch = [q]
    base = q.noise.data.astype(np.float64)
    for j in range(1, m.size + 1):
        eps = derive_rng(m.seed, f"aug/{q.id}/{j}").standard_normal(q.noise.shape)
        perturbed = (base + m.alpha * eps).astype(np.float32)
        batch.append(Query(
            mode=QueryMode.UNCONDITIONAL,
            id=f"{q.id}#{j}",
            noise=Image(perturbed, ImageKind.NOISE),
        ))
    return batch


def augment_conditional(q: Query, pool: PhrasePool, m: MagnitudeSet) -> list[Query]:
    """Batch [q, q + sep + ph_1, ..., q + sep + ph_|M|] with |M| phrases
    sampled uniformly without replacement from the pool."""
    if q.mode is not QueryMode.CONDITIONAL:
        raise ModeMismatchError("augment_conditional requires a conditional query")
    assert q.prompt is not None
    if len(pool) < m.size:
        raise PhrasePoolError(
            f"phrase pool has {len(pool)} phrases, need at least {m.size} "
            "to sample without replacement"
        )
    batch = [q]
    if m.size == 0:
        return batch
    rng = derive_rng(m.seed, f"phrase/{q.id}")
    chosen = rng.choice(len(pool), size=m.size, replace=False)
    for j, idx in enumerate(chosen, start=1):
        batch.append(Query(
            mode=QueryMode.CONDITIONAL,
            id=f"{q.id}#{j}",
            prompt=q.prompt + pool.separator + pool.phrases[int(idx)],
        ))
    return batch


def augment(q: Query, m: MagnitudeSet, pool: PhrasePool | None = None) -> list[Query]:
    """Mode dispatch over the two augmentation schemes."""
    if q.mode is QueryMode.UNCONDITIONAL:
        return augment_unconditional(q, m)
    if pool is None:
        raise PhrasePoolError("conditional augmentation requires a phrase pool")
    return augment_conditional(q, pool, m)
