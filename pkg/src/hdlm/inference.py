"""Greedy report generation.

Decoding mirrors the training layout exactly: each sentence state produces a
topic that primes a word decoder (step 0 consumes the topic and emits no
token; the first real token comes from feeding BOS).  Sentences end when the
decoder emits EOS or hits the word cap; the paragraph ends when the stop
probability strictly exceeds its threshold (the stopping sentence is still
emitted) or at the sentence cap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import BOS_ID, EOS_ID, ConfigError, CorpusFormatError
from .layers import embed
from .model import ModelConfig, ModelParams, encode_image, sentence_step, word_step
from .tensor import Tensor, zeros

BRANCH_VALUES = ("abnormal", "normal")


@dataclass
class GenerationLimits:
    max_sentences: int
    max_words: int
    stop_threshold: float = 0.5
    branch_threshold: float = 0.5

    def __post_init__(self):
        if self.max_sentences < 1 or self.max_words < 1:
            raise ConfigError("max_sentences and max_words must be >= 1")
        for name in ("stop_threshold", "branch_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")


@dataclass
class GeneratedReport:
    id: str
    sentences: list[list[int]]
    branches: list[str]
    stop_probs: list[float]
    abnormal_probs: list[float]


def _prob(logit) -> float:
    return float(1.0 / (1.0 + np.exp(-logit.data)))


def greedy_decode_sentence(params: ModelParams, topic: Tensor, branch: str, max_words: int) -> list[int]:
    """Argmax decoding of one sentence from a topic vector.

    Returns up to ``max_words`` token ids; the terminal EOS is included only
    when the decoder emitted it within the cap.
    """
    cell, _ = params.word_branch(branch)
    h = zeros((1, cell.hidden_size))
    c = zeros((1, cell.hidden_size))
    x = Tensor(topic.data.reshape(1, -1))
    _, h, c = word_step(params, branch, x, h, c)  # topic step, logits unused
    tokens: list[int] = []
    prev = BOS_ID
    for _ in range(max_words):
        logits, h, c = word_step(params, branch, embed(params.embedding, [prev]), h, c)
        token = int(np.argmax(logits.data[0]))
        tokens.append(token)
        if token == EOS_ID:
            break
        prev = token
    return tokens


def generate_report(
    params: ModelParams,
    config: ModelConfig,
    features,
    limits: GenerationLimits,
    record_id: str = "",
) -> GeneratedReport:
    """Decode one report from an [L, C] feature map."""
    feats = np.asarray(features, dtype=np.float64)
    v_e, _ = encode_image(params, Tensor(feats))
    h = zeros((config.hidden_dim,))
    c = zeros((config.hidden_dim,))
    sentences: list[list[int]] = []
    branches: list[str] = []
    stop_probs: list[float] = []
    abnormal_probs: list[float] = []
    for _ in range(limits.max_sentences):
        h, c, topic, stop_logit, abn_logit = sentence_step(params, v_e, h, c)
        p_stop = _prob(stop_logit)
        p_abn = _prob(abn_logit)
        branch = (
            "abnormal"
            if config.dual_enabled and p_abn > limits.branch_threshold
            else "normal"
        )
        sentences.append(greedy_decode_sentence(params, topic, branch, limits.max_words))
        branches.append(branch)
        stop_probs.append(p_stop)
        abnormal_probs.append(p_abn)
        if p_stop > limits.stop_threshold:
            break
    return GeneratedReport(record_id, sentences, branches, stop_probs, abnormal_probs)


def generate_corpus(params: ModelParams, config: ModelConfig, records, limits: GenerationLimits) -> list[GeneratedReport]:
    """One generated report per record, in record order."""
    return [
        generate_report(params, config, r.feature_map(), limits, record_id=r.id)
        for r in records
    ]


# ---------------------------------------------------------------------------
# generated-corpus files: JSON lines {id, sentences, branches, stop_probs,
# abnormal_probs}


def save_generated(path, reports) -> None:
    lines = []
    for r in reports:
        lines.append(
            json.dumps(
                {
                    "id": r.id,
                    "sentences": r.sentences,
                    "branches": r.branches,
                    "stop_probs": r.stop_probs,
                    "abnormal_probs": r.abnormal_probs,
                }
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_generated(path) -> list[GeneratedReport]:
    path = Path(path)
    reports = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            missing = {"id", "sentences", "branches", "stop_probs", "abnormal_probs"} - obj.keys()
            if missing:
                raise CorpusFormatError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            bad = [b for b in obj["branches"] if b not in BRANCH_VALUES]
            if bad:
                raise CorpusFormatError(f"{path}:{lineno}: unknown branch {bad[0]!r}")
            counts = {len(obj["sentences"]), len(obj["branches"]),
                      len(obj["stop_probs"]), len(obj["abnormal_probs"])}
            if len(counts) != 1:
                raise CorpusFormatError(f"{path}:{lineno}: per-sentence lists disagree in length")
            reports.append(
                GeneratedReport(
                    id=obj["id"],
                    sentences=[[int(t) for t in s] for s in obj["sentences"]],
                    branches=list(obj["branches"]),
                    stop_probs=[float(v) for v in obj["stop_probs"]],
                    abnormal_probs=[float(v) for v in obj["abnormal_probs"]],
                )
            )
    return reports
