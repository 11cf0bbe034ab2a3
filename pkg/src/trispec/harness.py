"""Experiment harness: configs, corpora, decode loops, sweeps, trace IO.

A run is fully described by an ExperimentConfig (a flat key=value file plus
command-line overrides) and is deterministic given its seed: prompts are
carved out of the held-out tail of the corpus, every prompt gets its own
labeled random streams, and all outputs (report JSON, trace CSV, sweep CSV)
serialize with stable ordering so reruns are byte-identical.

Decoding is single-sequence (batch 1). Continuation quality is not judged
by eye: the report carries perplexity of the generated continuations under
the target oracle as the built-in quality probe.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

from .baselines import RelaxPolicy, RoutingSignal, relaxed_sd_round
from .core import Context, Vocabulary, apply_temperature, sample
from .metrics import CostModel, RunReport, accumulate, lemma_check
from .models import (
    ModelOracle,
    NGramSpec,
    ProxyDerivation,
    derive_proxy,
    load_oracle,
    train_ngram,
)
from .router import MarginRule, TreeParams, trispec_round, trispec_tree_round
from .verification import DecodeStreams, sd_round, sd_tree_round

__all__ = [
    "ConfigError",
    "EmptyCorpusError",
    "ExperimentConfig",
    "ExperimentResult",
    "Family",
    "TraceRecord",
    "build_family",
    "derive_prompts",
    "load_corpus",
    "margin_eval_contexts",
    "read_trace_csv",
    "reference_corpus_path",
    "run_experiment",
    "sweep",
    "validate_trace_records",
    "write_report_json",
    "write_sweep_csv",
    "write_trace_csv",
]

TRACE_SCHEMA = "# trispec-trace v1"
SWEEP_SCHEMA = "# trispec-sweep v1"
HIST_SCHEMA = "# trispec-hist v1"

TRACE_COLUMNS = (
    "run_id",
    "round_index",
    "case",
    "tau_a",
    "tau_m",
    "tau_t",
    "emitted_count",
    "proxy_called",
    "target_called",
    "round_cost",
)

SWEEP_METRIC_COLUMNS = (
    "method",
    "seed",
    "temperature",
    "N",
    "rounds",
    "tau_mean",
    "tokens_per_round",
    "r_t",
    "L",
    "speedup",
    "lemma_residual",
    "proxy_only_rounds",
    "target_escalated_rounds",
    "continuation_ppl",
)


class ConfigError(ValueError):
    """Invalid or unparseable experiment configuration."""


class EmptyCorpusError(ValueError):
    """The corpus file exists but contains nothing."""


def reference_corpus_path() -> Path:
    """The bundled ~100 KB reference corpus (generated, public domain)."""
    return Path(__file__).resolve().parent / "fixtures" / "reference_corpus.txt"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs. Config-file keys mirror the field names
    (``lambda`` is accepted as an alias for ``lam``)."""

    corpus: str | None = None          # path; None means the bundled corpus
    tokenizer: str = "char"            # char | byte
    family: str = "ngram"              # ngram | perturbed
    orders: tuple[int, ...] = (2, 3, 4)  # drafter / proxy / target n-gram orders
    alpha: float = 0.1                 # additive smoothing
    epsilon: float = 0.3               # perturbed family: proxy noise share
    noise: str = "unigram"             # unigram | uniform
    method: str = "trispec"            # target_only | sd | trispec | relax
    sd_verifier: str = "target"        # verifier role for method=sd
    relax_policy: str = "chow"         # chow | token_specific | confidence_filter | topk
    relax_alpha: float = 0.05
    relax_threshold: float = 0.95
    relax_k: int = 5
    signal: str = "margin"             # margin | top1_prob | composite_entropy
    lam: float = 0.5                   # trust threshold for the signal
    k: int = 6                         # draft chain length
    use_tree: bool = False
    tree_depth: int = 6
    tree_topk: int = 10
    tree_budget: int = 60
    temperature: float = 0.0           # 0 (greedy) or 1 (sampling)
    c_d: float = 1.0
    c_p: float = 5.0
    c_t: float = 90.0
    t_o: float = 0.0
    t_o_base: float = 0.0
    seed: int = 0
    max_new_tokens: int = 48
    num_prompts: int = 12
    prompt_fraction: float = 0.5
    train_fraction: float = 0.9
    raw_bonus: bool = False
    margin_on_raw: bool = False
    model_dir: str | None = None
    run_id: str = ""

    def validate(self) -> None:
        ok = True
        problems: list[str] = []
        if self.tokenizer not in ("char", "byte"):
            problems.append(f"tokenizer must be char or byte, got {self.tokenizer!r}")
        if self.family not in ("ngram", "perturbed"):
            problems.append(f"family must be ngram or perturbed, got {self.family!r}")
        if self.method not in ("target_only", "sd", "trispec", "relax"):
            problems.append(f"unknown method {self.method!r}")
        if self.sd_verifier not in ("target", "proxy"):
            problems.append(f"sd_verifier must be target or proxy, got {self.sd_verifier!r}")
        if len(self.orders) != 3 or any(o < 1 for o in self.orders):
            problems.append(f"orders must be three n-gram orders >= 1, got {self.orders!r}")
        if self.alpha < 0:
            problems.append("alpha must be >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            problems.append("epsilon must lie in [0, 1]")
        if self.noise not in ("unigram", "uniform"):
            problems.append(f"noise must be unigram or uniform, got {self.noise!r}")
        if self.signal not in ("margin", "top1_prob", "composite_entropy"):
            problems.append(f"unknown signal {self.signal!r}")
        if self.relax_policy not in ("chow", "token_specific", "confidence_filter", "topk"):
            problems.append(f"unknown relax policy {self.relax_policy!r}")
        if self.temperature not in (0.0, 1.0):
            problems.append("temperature must be 0 (greedy) or 1 (sampling)")
        if self.use_tree and self.temperature != 0.0:
            problems.append("tree drafting verifies greedily; use temperature=0")
        if self.k < 1 or self.tree_depth < 1 or self.tree_topk < 1 or self.tree_budget < 1:
            problems.append("k, tree_depth, tree_topk, tree_budget must all be >= 1")
        if min(self.c_d, self.c_p, self.c_t, self.t_o, self.t_o_base) < 0:
            problems.append("cost constants must be >= 0")
        if self.seed < 0:
            problems.append("seed must be >= 0")
        if self.max_new_tokens < 1 or self.num_prompts < 1:
            problems.append("max_new_tokens and num_prompts must be >= 1")
        if not 0.0 < self.prompt_fraction < 1.0:
            problems.append("prompt_fraction must lie in (0, 1)")
        if not 0.0 < self.train_fraction < 1.0:
            problems.append("train_fraction must lie in (0, 1)")
        if problems:
            ok = False
        if not ok:
            raise ConfigError("; ".join(problems))

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            key = "lambda" if f.name == "lam" else f.name
            out[key] = list(value) if isinstance(value, tuple) else value
        return out


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_orders(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(" ", "").split(",") if part)


_KEY_ALIASES = {"lambda": "lam"}

_FIELD_PARSERS = {
    "corpus": lambda s: s or None,
    "tokenizer": str,
    "family": str,
    "orders": _parse_orders,
    "alpha": float,
    "epsilon": float,
    "noise": str,
    "method": str,
    "sd_verifier": str,
    "relax_policy": str,
    "relax_alpha": float,
    "relax_threshold": float,
    "relax_k": int,
    "signal": str,
    "lam": float,
    "k": int,
    "use_tree": _parse_bool,
    "tree_depth": int,
    "tree_topk": int,
    "tree_budget": int,
    "temperature": float,
    "c_d": float,
    "c_p": float,
    "c_t": float,
    "t_o": float,
    "t_o_base": float,
    "seed": int,
    "max_new_tokens": int,
    "num_prompts": int,
    "prompt_fraction": float,
    "train_fraction": float,
    "raw_bonus": _parse_bool,
    "margin_on_raw": _parse_bool,
    "model_dir": lambda s: s or None,
    "run_id": str,
}


def config_overrides(items: dict[str, str]) -> dict:
    """Coerce raw key=value strings into config field values."""
    parsed = {}
    for raw_key, raw_value in items.items():
        key = _KEY_ALIASES.get(raw_key.strip(), raw_key.strip())
        parser = _FIELD_PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"unknown config key {raw_key!r}")
        try:
            parsed[key] = parser(raw_value.strip())
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {raw_key!r}: {raw_value!r} ({exc})") from exc
    return parsed


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Read a flat key=value config file and apply overrides on top."""
    items: dict[str, str] = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = body.split("=", 1)
            items[key.strip()] = value.strip()
    cfg = replace(ExperimentConfig(), **config_overrides(items))
    if overrides:
        cfg = replace(cfg, **config_overrides(overrides))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Corpus and model family
# ---------------------------------------------------------------------------


def load_corpus(path: str | Path, tokenizer: str) -> tuple[list[int], Vocabulary]:
    """Tokenize a text file: bytes (fixed V=256) or sorted distinct chars."""
    data = Path(path).read_bytes()
    if not data:
        raise EmptyCorpusError(f"corpus file {path} is empty")
    if tokenizer == "byte":
        return list(data), Vocabulary(256)
    if tokenizer == "char":
        text = data.decode("utf-8")
        symbols = tuple(sorted(set(text)))
        vocab = Vocabulary(len(symbols), symbols)
        index = {ch: i for i, ch in enumerate(symbols)}
        return [index[ch] for ch in text], vocab
    raise ConfigError(f"unknown tokenizer {tokenizer!r}")


@dataclass
class Family:
    """The three decoding oracles plus the data they came from."""

    drafter: ModelOracle
    proxy: ModelOracle
    target: ModelOracle
    vocab: Vocabulary
    train_tokens: list[int]
    held_tokens: list[int]

    def fork(self) -> "Family":
        return Family(
            drafter=self.drafter.fork(),
            proxy=self.proxy.fork(),
            target=self.target.fork(),
            vocab=self.vocab,
            train_tokens=self.train_tokens,
            held_tokens=self.held_tokens,
        )


def family_signature(cfg: ExperimentConfig) -> tuple:
    """The config projection that determines the trained family."""
    return (
        cfg.corpus,
        cfg.tokenizer,
        cfg.family,
        cfg.orders,
        cfg.alpha,
        cfg.epsilon,
        cfg.noise,
        cfg.train_fraction,
        cfg.model_dir,
    )


def build_family(cfg: ExperimentConfig) -> Family:
    """Load the corpus, split train/held-out, and train (or load) oracles."""
    corpus_path = Path(cfg.corpus) if cfg.corpus else reference_corpus_path()
    tokens, vocab = load_corpus(corpus_path, cfg.tokenizer)
    split = int(len(tokens) * cfg.train_fraction)
    train, held = tokens[:split], tokens[split:]
    if not train or not held:
        raise ConfigError("train/held-out split left one side empty; adjust train_fraction")

    if cfg.model_dir is not None:
        base = Path(cfg.model_dir)
        drafter = load_oracle(base / "drafter.json")
        proxy = load_oracle(base / "proxy.json")
        target = load_oracle(base / "target.json")
        for oracle in (drafter, proxy, target):
            if oracle.vocab_size != vocab.size:
                raise ConfigError(
                    f"loaded oracle vocabulary ({oracle.vocab_size}) does not match "
                    f"the corpus vocabulary ({vocab.size})"
                )
        return Family(drafter, proxy, target, vocab, train, held)

    d_order, p_order, t_order = cfg.orders
    drafter = train_ngram(train, NGramSpec(d_order, cfg.alpha), vocab)
    target = train_ngram(train, NGramSpec(t_order, cfg.alpha), vocab)
    if cfg.family == "ngram":
        proxy: ModelOracle = train_ngram(train, NGramSpec(p_order, cfg.alpha), vocab)
    else:
        proxy = derive_proxy(target, ProxyDerivation(cfg.epsilon, cfg.noise))
    return Family(drafter, proxy, target, vocab, train, held)


def derive_prompts(
    held: Sequence[int],
    vocab: Vocabulary,
    tokenizer: str,
    num_prompts: int,
    prompt_fraction: float,
    min_len: int = 8,
) -> list[tuple[int, ...]]:
    """Prompt prefixes from held-out lines, split at ``prompt_fraction``.

    Falls back to fixed-stride chunks when the held-out stream has no
    usable line structure.
    """
    newline_id: int | None = None
    if tokenizer == "byte":
        newline_id = 0x0A
    elif vocab.symbols and "\n" in vocab.symbols:
        newline_id = vocab.symbols.index("\n")

    lines: list[list[int]] = []
    if newline_id is not None:
        cur: list[int] = []
        for tok in held:
            if tok == newline_id:
                lines.append(cur)
                cur = []
            else:
                cur.append(tok)
        lines.append(cur)
    lines = [line for line in lines if len(line) >= min_len]

    if len(lines) < num_prompts:
        chunk = max(min_len, len(held) // (num_prompts + 1))
        lines = [list(held[i : i + chunk]) for i in range(0, len(held) - chunk, chunk)]
        lines = [line for line in lines if len(line) >= min_len]
    if len(lines) < num_prompts:
        raise ConfigError("held-out corpus too small to derive the requested prompts")

    prompts = []
    for line in lines[:num_prompts]:
        cut = max(1, int(len(line) * prompt_fraction))
        prompts.append(tuple(line[:cut]))
    return prompts


def margin_eval_contexts(
    tokens: Sequence[int], positions: int, window: int = 8
) -> list[tuple[int, ...]]:
    """Evenly spaced fixed-width contexts over a token stream."""
    if len(tokens) <= window:
        raise ConfigError("token stream too short for margin evaluation")
    span = len(tokens) - window
    stride = max(1, span // positions)
    out = []
    for start in range(0, span, stride):
        out.append(tuple(tokens[start : start + window]))
        if len(out) == positions:
            break
    return out


# ---------------------------------------------------------------------------
# Trace records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    """One verification round, flattened for the trace CSV."""

    run_id: str
    round_index: int
    case: str
    tau_a: int | None
    tau_m: int | None
    tau_t: int | None
    emitted_count: int
    proxy_called: bool
    target_called: bool
    round_cost: float

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "round_index": self.round_index,
            "case": self.case,
            "tau_a": self.tau_a,
            "tau_m": self.tau_m,
            "tau_t": self.tau_t,
            "emitted_count": self.emitted_count,
            "proxy_called": self.proxy_called,
            "target_called": self.target_called,
            "round_cost": self.round_cost,
        }

    def to_csv_row(self) -> list[str]:
        def opt(v: int | None) -> str:
            return "" if v is None else str(v)

        return [
            self.run_id,
            str(self.round_index),
            self.case,
            opt(self.tau_a),
            opt(self.tau_m),
            opt(self.tau_t),
            str(self.emitted_count),
            "1" if self.proxy_called else "0",
            "1" if self.target_called else "0",
            repr(self.round_cost),
        ]

    @classmethod
    def from_csv_row(cls, row: list[str]) -> "TraceRecord":
        def opt(v: str) -> int | None:
            return None if v == "" else int(v)

        return cls(
            run_id=row[0],
            round_index=int(row[1]),
            case=row[2],
            tau_a=opt(row[3]),
            tau_m=opt(row[4]),
            tau_t=opt(row[5]),
            emitted_count=int(row[6]),
            proxy_called=row[7] == "1",
            target_called=row[8] == "1",
            round_cost=float(row[9]),
        )


def validate_trace_records(records: Sequence[TraceRecord]) -> None:
    """Re-check the routing arithmetic a trace must satisfy."""
    for rec in records:
        if rec.case == "ProxyOnly":
            if rec.target_called or rec.tau_a is None or rec.tau_m is None:
                raise ValueError(f"round {rec.round_index}: malformed proxy-only row")
            if not rec.tau_a < rec.tau_m:
                raise ValueError(f"round {rec.round_index}: proxy-only needs tau_a < tau_m")
            if rec.emitted_count != rec.tau_a + 1:
                raise ValueError(f"round {rec.round_index}: emitted != tau_a + 1")
        elif rec.case == "TargetEscalated":
            if not rec.target_called or None in (rec.tau_a, rec.tau_m, rec.tau_t):
                raise ValueError(f"round {rec.round_index}: malformed escalated row")
            if not rec.tau_a >= rec.tau_m:
                raise ValueError(f"round {rec.round_index}: escalation needs tau_a >= tau_m")
            if rec.emitted_count != rec.tau_m + rec.tau_t + 1:
                raise ValueError(f"round {rec.round_index}: emitted != tau_m + tau_t + 1")
        if rec.emitted_count < 1:
            raise ValueError(f"round {rec.round_index}: emitted_count must be >= 1")


def write_trace_csv(records: Sequence[TraceRecord], path: str | Path) -> None:
    lines = [TRACE_SCHEMA, ",".join(TRACE_COLUMNS)]
    lines.extend(",".join(rec.to_csv_row()) for rec in records)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace_csv(path: str | Path) -> list[TraceRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != TRACE_SCHEMA:
        raise ValueError(f"{path} is not a {TRACE_SCHEMA!r} file")
    if len(lines) < 2 or lines[1] != ",".join(TRACE_COLUMNS):
        raise ValueError(f"{path} has an unexpected column header")
    records = [TraceRecord.from_csv_row(line.split(",")) for line in lines[2:] if line]
    validate_trace_records(records)
    return records


# ---------------------------------------------------------------------------
# Running experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    run_id: str
    config: ExperimentConfig
    report: RunReport
    records: list[TraceRecord]
    continuations: list[tuple[tuple[int, ...], list[int]]]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config": self.config.as_dict(),
            "report": self.report.to_dict(),
        }


def default_run_id(cfg: ExperimentConfig) -> str:
    parts = [cfg.method]
    if cfg.method == "trispec":
        parts.append(f"{cfg.signal}{cfg.lam:g}")
    if cfg.method == "relax":
        parts.append(cfg.relax_policy)
    if cfg.use_tree:
        parts.append("tree")
    parts.append(f"T{cfg.temperature:g}")
    parts.append(f"seed{cfg.seed}")
    return "-".join(parts)


def _trust_rule(cfg: ExperimentConfig):
    if cfg.signal == "margin":
        return MarginRule(cfg.lam)
    return RoutingSignal(cfg.signal, cfg.lam)


def _ppl_under_target(
    target: ModelOracle, continuations: Sequence[tuple[tuple[int, ...], list[int]]]
) -> float | None:
    probe = target.fork()
    nll = 0.0
    count = 0
    for prompt, emitted in continuations:
        ctx = list(prompt)
        for tok in emitted:
            p = probe.next_dist(ctx).prob(tok)
            nll += -math.log(max(p, 1e-300))
            count += 1
            ctx.append(tok)
    return math.exp(nll / count) if count else None


def run_experiment(cfg: ExperimentConfig, family: Family | None = None) -> ExperimentResult:
    """Decode every prompt with the configured method and account each round.

    A prebuilt family may be injected (sweeps reuse one training pass); it
    is forked per run so invocation counters stay isolated.
    """
    cfg.validate()
    family = (family or build_family(cfg)).fork()
    drafter, proxy, target = family.drafter, family.proxy, family.target
    cost = CostModel(cfg.c_d, cfg.c_p, cfg.c_t, cfg.t_o)
    report = RunReport(cost=cost, t_o_base=cfg.t_o_base)
    run_id = cfg.run_id or default_run_id(cfg)
    rule = _trust_rule(cfg)
    policy = RelaxPolicy(
        cfg.relax_policy, alpha=cfg.relax_alpha, threshold=cfg.relax_threshold, k=cfg.relax_k
    )
    tree_params = TreeParams(cfg.tree_depth, cfg.tree_topk, cfg.tree_budget)
    prompts = derive_prompts(
        family.held_tokens, family.vocab, cfg.tokenizer, cfg.num_prompts, cfg.prompt_fraction
    )

    records: list[TraceRecord] = []
    continuations: list[tuple[tuple[int, ...], list[int]]] = []
    round_index = 0
    for prompt_idx, prompt in enumerate(prompts):
        streams = DecodeStreams.from_seed(cfg.seed, scope=f"prompt{prompt_idx}")
        ctx = Context(prompt)
        produced = 0
        emitted_all: list[int] = []
        while produced < cfg.max_new_tokens:
            base = ctx.as_tuple()
            if cfg.method == "target_only":
                before = target.invocation_count
                dist = apply_temperature(target.next_dist(base), cfg.temperature)
                token = dist.argmax() if cfg.temperature == 0.0 else sample(dist, streams.draft)
                emitted: tuple[int, ...] = (token,)
                round_cost = report.add_round(1, 0, 0, target.invocation_count - before, "TargetOnly")
                record = TraceRecord(
                    run_id, round_index, "TargetOnly", None, None, None, 1, False, True,
                    round_cost.total,
                )
            elif cfg.method == "sd":
                verifier = target if cfg.sd_verifier == "target" else proxy
                if cfg.use_tree:
                    emitted, result, d_passes, v_passes = sd_tree_round(
                        drafter, verifier, base, cfg.tree_depth, cfg.tree_topk, cfg.tree_budget
                    )
                    tau_a = result.accepted_len
                else:
                    sd_result = sd_round(
                        drafter, verifier, base, cfg.k, cfg.temperature, streams, cfg.sd_verifier
                    )
                    emitted = sd_result.emitted
                    d_passes, v_passes = sd_result.drafter_passes, sd_result.verifier_passes
                    tau_a = sd_result.trace.tau
                p_passes = v_passes if cfg.sd_verifier == "proxy" else 0
                t_passes = v_passes if cfg.sd_verifier == "target" else 0
                round_cost = report.add_round(len(emitted), d_passes, p_passes, t_passes, "SD")
                record = TraceRecord(
                    run_id, round_index, "SD", tau_a, None, None, len(emitted),
                    cfg.sd_verifier == "proxy", cfg.sd_verifier == "target", round_cost.total,
                )
            elif cfg.method == "relax":
                relax_result = relaxed_sd_round(
                    drafter, target, base, cfg.k, policy, cfg.temperature, streams
                )
                emitted = relax_result.emitted
                round_cost = report.add_round(
                    len(emitted), relax_result.drafter_passes, 0, relax_result.verifier_passes,
                    f"Relax:{policy.kind}",
                )
                record = TraceRecord(
                    run_id, round_index, f"Relax:{policy.kind}", relax_result.trace.tau, None,
                    None, len(emitted), False, True, round_cost.total,
                )
            else:  # trispec
                if cfg.use_tree:
                    outcome = trispec_tree_round(drafter, proxy, target, base, tree_params, rule)
                else:
                    outcome = trispec_round(
                        drafter, proxy, target, base, cfg.k, rule, cfg.temperature, streams,
                        raw_bonus=cfg.raw_bonus, margin_on_raw=cfg.margin_on_raw,
                    )
                accumulate(report, outcome, cost)
                emitted = outcome.emitted
                record = TraceRecord(
                    run_id, round_index, outcome.case.value, outcome.tau_a, outcome.tau_m,
                    outcome.tau_t, len(emitted), True, outcome.target_called,
                    outcome.costs.total,
                )
            records.append(record)
            report.records.append(record)
            ctx.extend(emitted)
            emitted_all.extend(emitted)
            produced += len(emitted)
            round_index += 1
        continuations.append((prompt, emitted_all))

    report.continuation_ppl = _ppl_under_target(target, continuations)
    residual = lemma_check(report)
    if residual > 1e-9 * max(report.L, 1.0):
        raise AssertionError(f"latency decomposition identity violated: residual {residual}")
    return ExperimentResult(run_id, cfg, report, records, continuations)


def write_report_json(result: ExperimentResult, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def sweep(
    cfg: ExperimentConfig, grid: dict[str, list[str]]
) -> tuple[list[str], list[dict[str, str]]]:
    """Run the full cartesian grid over a base config.

    Returns (column names, rows). Grid points are independent: each run
    forks a cached family (retrained only when a family-shaping key
    changes), so the row for a given point does not depend on sweep order.
    """
    if not grid:
        raise ConfigError("sweep needs at least one grid key")
    for key in grid:
        canonical = _KEY_ALIASES.get(key, key)
        if canonical not in _FIELD_PARSERS:
            raise ConfigError(f"unknown sweep key {key!r}")
        if not grid[key]:
            raise ConfigError(f"sweep key {key!r} has no values")

    grid_keys = list(grid)
    columns = grid_keys + list(SWEEP_METRIC_COLUMNS)
    families: dict[tuple, Family] = {}
    rows: list[dict[str, str]] = []
    for values in itertools.product(*(grid[k] for k in grid_keys)):
        overrides = dict(zip(grid_keys, values))
        point_cfg = replace(cfg, **config_overrides(overrides))
        point_cfg.validate()
        sig = family_signature(point_cfg)
        if sig not in families:
            families[sig] = build_family(point_cfg)
        result = run_experiment(point_cfg, families[sig])
        report = result.report
        row = {key: value for key, value in zip(grid_keys, values)}
        row.update(
            {
                "method": point_cfg.method,
                "seed": str(point_cfg.seed),
                "temperature": f"{point_cfg.temperature:g}",
                "N": str(report.N),
                "rounds": str(report.rounds),
                "tau_mean": repr(report.tau_mean),
                "tokens_per_round": repr(report.tokens_per_round),
                "r_t": repr(report.r_t),
                "L": repr(report.L),
                "speedup": repr(report.speedup),
                "lemma_residual": repr(lemma_check(report)),
                "proxy_only_rounds": str(report.case_counts.get("ProxyOnly", 0)),
                "target_escalated_rounds": str(report.case_counts.get("TargetEscalated", 0)),
                "continuation_ppl": repr(report.continuation_ppl),
            }
        )
        rows.append(row)
    return columns, rows


def write_sweep_csv(columns: list[str], rows: list[dict[str, str]], path: str | Path) -> None:
    lines = [SWEEP_SCHEMA, ",".join(columns)]
    for row in rows:
        lines.append(",".join(row[c] for c in columns))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
