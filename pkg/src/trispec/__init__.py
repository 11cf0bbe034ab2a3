"""Ternary speculative decoding at desk scale.

A drafter proposes token blocks, a cheap proxy pre-verifies them and
decides per position whether its own verdict can be trusted, and the
expensive target model is consulted only for the untrusted remainder.
Everything runs on small exact token-distribution oracles so decoding
laws, routing behavior, and the latency decomposition can be tested
exactly rather than benchmarked.
"""

from .baselines import (
    RelaxPolicy,
    RoutingSignal,
    chow_accept,
    confidence_filter_accept,
    relaxed_sd_round,
    routing_signal_eval,
    token_specific_accept,
    topk_verify_accept,
)
from .core import (
    AllZeroError,
    Context,
    Distribution,
    RandomStream,
    Vocabulary,
    apply_temperature,
    normalize,
    sample,
    top2_margin,
)
from .drafting import (
    DraftChain,
    DraftTree,
    PathNotInTreeError,
    TreeNode,
    draft_chain,
    draft_tree,
    prune_tree_prefix,
)
from .harness import (
    ConfigError,
    EmptyCorpusError,
    ExperimentConfig,
    ExperimentResult,
    Family,
    TraceRecord,
    build_family,
    derive_prompts,
    load_config,
    load_corpus,
    margin_eval_contexts,
    read_trace_csv,
    reference_corpus_path,
    run_experiment,
    sweep,
    validate_trace_records,
    write_report_json,
    write_sweep_csv,
    write_trace_csv,
)
from .metrics import (
    CostModel,
    MarginHistogram,
    RoundCost,
    RunReport,
    accumulate,
    lemma_check,
    margin_histogram,
    speedup_vs_target_only,
    target_invocation_ratio,
)
from .models import (
    CorpusTooShortError,
    MixtureProxy,
    ModelOracle,
    NGramSpec,
    NgramModel,
    ProxyDerivation,
    TableModel,
    derive_proxy,
    load_oracle,
    save_oracle,
    train_ngram,
)
from .router import (
    MarginRule,
    RoundCase,
    RoundOutcome,
    TreeParams,
    margin_predicate,
    pruned_target_verify,
    trispec_round,
    trispec_tree_round,
    trusted_prefix_len,
)
from .suites import CheckResult, first_token_law, verify_suite
from .verification import (
    AcceptanceTrace,
    DecodeStreams,
    DegenerateResidualError,
    SDRoundResult,
    TreeVerifyResult,
    acceptance_coins,
    draw_correction,
    residual_dist,
    sd_round,
    sd_tree_round,
    verify_chain,
    verify_tree_greedy,
)

__version__ = "0.1.0"

__all__ = [
    "AcceptanceTrace",
    "AllZeroError",
    "CheckResult",
    "ConfigError",
    "Context",
    "CorpusTooShortError",
    "CostModel",
    "DecodeStreams",
    "DegenerateResidualError",
    "Distribution",
    "DraftChain",
    "DraftTree",
    "EmptyCorpusError",
    "ExperimentConfig",
    "ExperimentResult",
    "Family",
    "MarginHistogram",
    "MarginRule",
    "MixtureProxy",
    "ModelOracle",
    "NGramSpec",
    "NgramModel",
    "PathNotInTreeError",
    "ProxyDerivation",
    "RandomStream",
    "RelaxPolicy",
    "RoundCase",
    "RoundCost",
    "RoundOutcome",
    "RoutingSignal",
    "RunReport",
    "SDRoundResult",
    "TableModel",
    "TraceRecord",
    "TreeNode",
    "TreeParams",
    "TreeVerifyResult",
    "Vocabulary",
    "accumulate",
    "acceptance_coins",
    "apply_temperature",
    "build_family",
    "chow_accept",
    "confidence_filter_accept",
    "derive_prompts",
    "derive_proxy",
    "draft_chain",
    "draft_tree",
    "draw_correction",
    "first_token_law",
    "lemma_check",
    "load_config",
    "load_corpus",
    "load_oracle",
    "margin_eval_contexts",
    "margin_histogram",
    "margin_predicate",
    "normalize",
    "prune_tree_prefix",
    "pruned_target_verify",
    "read_trace_csv",
    "reference_corpus_path",
    "relaxed_sd_round",
    "residual_dist",
    "routing_signal_eval",
    "run_experiment",
    "sample",
    "save_oracle",
    "sd_round",
    "sd_tree_round",
    "speedup_vs_target_only",
    "sweep",
    "target_invocation_ratio",
    "token_specific_accept",
    "top2_margin",
    "topk_verify_accept",
    "train_ngram",
    "trispec_round",
    "trispec_tree_round",
    "trusted_prefix_len",
    "validate_trace_records",
    "verify_chain",
    "verify_suite",
    "verify_tree_greedy",
    "write_report_json",
    "write_sweep_csv",
    "write_trace_csv",
]
