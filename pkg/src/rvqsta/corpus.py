"""Corpus manifests and the synthetic clustered-feature corpus.

A manifest is a JSON file::

    {"d_in": 8, "vocab": 8,
     "utterances": [{"features": "utt_0000.staf", "tokens": "utt_0000.stat"}, ...]}

Relative paths resolve against the manifest's directory; ``tokens`` may be
null before tokenization.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core.io import load_features, load_tokens, save_features, save_tokens
from .core.types import FeatureSequence, RvqStaError, TokenSequence
from .training.loop import Utterance


class ManifestError(RvqStaError, ValueError):
    pass


@dataclass
class CorpusManifest:
    entries: list            # (feature_path, token_path | None)
    d_in: int
    vocab: int | None
    root: Path

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.root / p

    def to_dict(self) -> dict:
        return {
            "d_in": self.d_in,
            "vocab": self.vocab,
            "utterances": [{"features": str(f), "tokens": None if t is None else str(t)}
                           for f, t in self.entries],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    try:
        entries = [(u["features"], u.get("tokens")) for u in data["utterances"]]
        return CorpusManifest(entries, int(data["d_in"]), data.get("vocab"), path.parent)
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from None


def load_corpus(manifest: CorpusManifest, require_tokens: bool = True) -> list[Utterance]:
    out = []
    for feat_path, tok_path in manifest.entries:
        feats = load_features(manifest.resolve(feat_path), expected_dim=manifest.d_in)
        toks = None
        if tok_path is not None:
            seq = load_tokens(manifest.resolve(tok_path))
            if manifest.vocab is not None and seq.vocab != manifest.vocab:
                raise ManifestError(f"{tok_path}: vocab {seq.vocab} != declared {manifest.vocab}")
            if len(seq) != feats.T:
                raise ManifestError(f"{tok_path}: {len(seq)} tokens for {feats.T} frames in {feat_path}")
            toks = seq.tokens
        elif require_tokens:
            raise ManifestError(f"{feat_path}: no token file listed")
        out.append(Utterance(feats.frames, toks))
    if not out:
        raise ManifestError("corpus is empty")
    return out


def write_corpus(out_dir, features, tokens=None, vocab: int | None = None) -> Path:
    """Write features (and optional tokens) plus ``manifest.json``; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    d_in = None
    for i, f in enumerate(features):
        seq = f if isinstance(f, FeatureSequence) else FeatureSequence(f)
        d_in = seq.D
        fname = f"utt_{i:05d}.staf"
        save_features(seq, out / fname)
        tname = None
        if tokens is not None:
            t = tokens[i]
            tseq = t if isinstance(t, TokenSequence) else TokenSequence(t, vocab)
            tname = f"utt_{i:05d}.stat"
            save_tokens(tseq, out / tname)
        entries.append((fname, tname))
    manifest = CorpusManifest(entries, d_in, vocab, out)
    path = out / "manifest.json"
    manifest.save(path)
    return path


def make_synthetic_corpus(num_utterances: int = 200, T: int = 150, d_in: int = 8,
                          n_clusters: int = 8, seed: int = 0, spread: float = 3.0,
                          noise: float = 0.5, min_run: int = 4, max_run: int = 16):
    """Utterances made of runs of frames drawn around ``n_clusters`` Gaussian means.

    Each run picks a cluster uniformly and lasts ``min_run..max_run`` frames.
    Values are rounded to float32 so files round-trip exactly.
    Returns (list of (T, d_in) arrays, list of per-frame cluster labels).
    """
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, spread, size=(n_clusters, d_in))
    feats, labels = [], []
    for _ in range(num_utterances):
        lab = np.empty(T, dtype=np.int64)
        t = 0
        while t < T:
            run = int(rng.integers(min_run, max_run + 1))
            lab[t:t + run] = rng.integers(n_clusters)
            t += run
        x = means[lab] + rng.normal(0.0, noise, size=(T, d_in))
        feats.append(x.astype(np.float32).astype(np.float64))
        labels.append(lab)
    return feats, labels
