"""Config parsing, corpus handling, experiment runs, sweeps, trace IO."""

import math
from dataclasses import replace

import pytest

from trispec.harness import (
    ConfigError,
    EmptyCorpusError,
    ExperimentConfig,
    SWEEP_METRIC_COLUMNS,
    SWEEP_SCHEMA,
    TRACE_COLUMNS,
    TRACE_SCHEMA,
    TraceRecord,
    build_family,
    config_overrides,
    default_run_id,
    derive_prompts,
    load_config,
    load_corpus,
    margin_eval_contexts,
    read_trace_csv,
    run_experiment,
    sweep,
    validate_trace_records,
    write_report_json,
    write_sweep_csv,
    write_trace_csv,
)
from trispec.models import MixtureProxy, NgramModel, save_oracle


@pytest.fixture(scope="module")
def tri_result(ref_family):
    cfg = ExperimentConfig(method="trispec", lam=0.5, max_new_tokens=48, num_prompts=8)
    return run_experiment(cfg, ref_family)


# ---------------------------------------------------------------------------
# corpus loading
# ---------------------------------------------------------------------------


def test_char_tokenizer_builds_sorted_symbol_vocab(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("abca\n")
    tokens, vocab = load_corpus(p, "char")
    assert vocab.symbols == ("\n", "a", "b", "c")
    assert tokens == [1, 2, 3, 1, 0]


def test_byte_tokenizer_is_fixed_width(tmp_path):
    p = tmp_path / "b.txt"
    p.write_bytes(b"\x00ab\xff")
    tokens, vocab = load_corpus(p, "byte")
    assert vocab.size == 256
    assert tokens == [0, 97, 98, 255]


def test_corpus_error_cases(tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_bytes(b"")
    with pytest.raises(EmptyCorpusError):
        load_corpus(empty, "char")
    full = tmp_path / "full.txt"
    full.write_text("hello")
    with pytest.raises(ConfigError):
        load_corpus(full, "words")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_load_config_parses_comments_aliases_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "# a comment line\n"
        "\n"
        "method = trispec   # trailing comment\n"
        "lambda = 0.25\n"
        "k = 4\n"
        "orders = 2, 3, 4\n"
        "use_tree = false\n"
    )
    cfg = load_config(p)
    assert cfg.method == "trispec"
    assert cfg.lam == 0.25
    assert cfg.k == 4
    assert cfg.orders == (2, 3, 4)
    overridden = load_config(p, {"k": "8", "lambda": "0.75"})
    assert overridden.k == 8 and overridden.lam == 0.75


def test_load_config_rejects_malformed_lines(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("just a bare line\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_overrides_type_coercion():
    parsed = config_overrides(
        {"orders": "3,4,5", "use_tree": "yes", "raw_bonus": "0", "corpus": "", "seed": "7"}
    )
    assert parsed == {
        "orders": (3, 4, 5),
        "use_tree": True,
        "raw_bonus": False,
        "corpus": None,
        "seed": 7,
    }
    with pytest.raises(ConfigError):
        config_overrides({"beam_width": "4"})
    with pytest.raises(ConfigError):
        config_overrides({"k": "four"})
    with pytest.raises(ConfigError):
        config_overrides({"use_tree": "maybe"})


def test_config_validation_collects_problems():
    with pytest.raises(ConfigError):
        ExperimentConfig(temperature=0.5).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(orders=(2, 3)).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(use_tree=True, temperature=1.0).validate()
    with pytest.raises(ConfigError) as err:
        ExperimentConfig(method="beam", tokenizer="words").validate()
    assert "beam" in str(err.value) and "words" in str(err.value)
    ExperimentConfig().validate()


def test_as_dict_echoes_the_lambda_alias():
    d = ExperimentConfig(lam=0.75).as_dict()
    assert d["lambda"] == 0.75
    assert "lam" not in d
    assert d["orders"] == [2, 3, 4]


def test_default_run_ids_are_stable():
    assert default_run_id(ExperimentConfig()) == "trispec-margin0.5-T0-seed0"
    assert default_run_id(ExperimentConfig(method="sd", temperature=1.0, seed=3)) == "sd-T1-seed3"
    assert default_run_id(ExperimentConfig(method="relax")) == "relax-chow-T0-seed0"
    assert (
        default_run_id(ExperimentConfig(use_tree=True)) == "trispec-margin0.5-tree-T0-seed0"
    )


# ---------------------------------------------------------------------------
# family construction
# ---------------------------------------------------------------------------


def test_reference_family_shape(ref_family):
    assert isinstance(ref_family.drafter, NgramModel)
    assert ref_family.drafter.order == 2
    assert ref_family.proxy.order == 3
    assert ref_family.target.order == 4
    assert len(ref_family.train_tokens) + len(ref_family.held_tokens) > 90_000


def test_perturbed_family_mixes_the_target(perturbed_family):
    proxy = perturbed_family.proxy
    assert isinstance(proxy, MixtureProxy)
    assert proxy.deriv.epsilon == 0.3
    assert proxy.base is perturbed_family.target


def test_build_family_rejects_degenerate_split(tmp_path):
    p = tmp_path / "tiny.txt"
    p.write_text("ab\n")
    with pytest.raises(ConfigError):
        build_family(ExperimentConfig(corpus=str(p), train_fraction=0.1))


# ---------------------------------------------------------------------------
# prompts and evaluation contexts
# ---------------------------------------------------------------------------


def test_prompts_are_line_prefixes(ref_family):
    prompts = derive_prompts(ref_family.held_tokens, ref_family.vocab, "char", 6, 0.5)
    assert len(prompts) == 6
    assert all(isinstance(p, tuple) and len(p) >= 4 for p in prompts)
    newline = ref_family.vocab.symbols.index("\n")
    assert all(newline not in p for p in prompts)


def test_prompts_fall_back_to_stride_chunks():
    from trispec.core import Vocabulary

    # vocab without a newline symbol: the line splitter finds nothing
    prompts = derive_prompts([5] * 500, Vocabulary(10), "char", 3, 0.5)
    assert len(prompts) == 3
    assert all(len(p) >= 1 for p in prompts)


def test_prompts_error_when_corpus_is_too_small():
    from trispec.core import Vocabulary

    with pytest.raises(ConfigError):
        derive_prompts([1] * 10, Vocabulary(4), "char", 5, 0.5)


def test_margin_eval_contexts_spacing():
    tokens = list(range(100))
    ctxs = margin_eval_contexts(tokens, positions=10, window=8)
    assert len(ctxs) == 10
    assert ctxs[0] == tuple(range(8))
    assert all(len(c) == 8 for c in ctxs)
    assert len(margin_eval_contexts(tokens, positions=1000, window=8)) == 92
    with pytest.raises(ConfigError):
        margin_eval_contexts(list(range(8)), positions=4, window=8)


# ---------------------------------------------------------------------------
# running experiments
# ---------------------------------------------------------------------------


def test_target_only_run_is_the_sequential_baseline(ref_family):
    cfg = ExperimentConfig(method="target_only", max_new_tokens=8, num_prompts=3)
    result = run_experiment(cfg, ref_family)
    report = result.report
    assert report.N == 24  # one token per round, exactly
    assert report.rounds == 24
    assert report.r_t == 1.0
    assert report.speedup == 1.0
    assert report.case_counts == {"TargetOnly": 24}
    assert all(r.case == "TargetOnly" and r.target_called for r in result.records)


def test_run_rejects_invalid_config(ref_family):
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(temperature=0.5), ref_family)


def test_trispec_run_routes_both_ways(tri_result):
    report = tri_result.report
    assert report.N >= 8 * 48
    assert report.rounds == len(tri_result.records)
    assert report.case_counts.get("ProxyOnly", 0) > 0
    assert report.case_counts.get("TargetEscalated", 0) > 0
    validate_trace_records(tri_result.records)
    assert all(r.round_cost > 0 for r in tri_result.records)


def test_continuation_ppl_is_a_sane_quality_probe(tri_result):
    ppl = tri_result.report.continuation_ppl
    assert ppl is not None and math.isfinite(ppl)
    assert ppl > 1.0


def test_reruns_are_byte_identical(ref_family, tmp_path):
    cfg = ExperimentConfig(method="trispec", lam=0.5, max_new_tokens=16, num_prompts=3, seed=5)
    a = run_experiment(cfg, ref_family)
    b = run_experiment(cfg, ref_family)
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    write_report_json(a, pa)
    write_report_json(b, pb)
    assert pa.read_bytes() == pb.read_bytes()
    assert a.records == b.records


def test_model_dir_reproduces_the_trained_family(ref_family, tmp_path):
    save_oracle(ref_family.drafter, tmp_path / "drafter.json")
    save_oracle(ref_family.proxy, tmp_path / "proxy.json")
    save_oracle(ref_family.target, tmp_path / "target.json")
    cfg = ExperimentConfig(method="trispec", lam=0.5, max_new_tokens=16, num_prompts=3)
    trained = run_experiment(cfg, ref_family)
    loaded = run_experiment(replace(cfg, model_dir=str(tmp_path)))
    assert loaded.report.to_dict() == trained.report.to_dict()


def test_model_dir_vocab_mismatch_is_caught(tmp_path):
    from trispec.core import Vocabulary
    from trispec.models import NGramSpec, train_ngram

    tiny = train_ngram([0, 1, 0, 1, 0], NGramSpec(order=2), Vocabulary(2))
    for name in ("drafter", "proxy", "target"):
        save_oracle(tiny, tmp_path / f"{name}.json")
    with pytest.raises(ConfigError):
        build_family(ExperimentConfig(model_dir=str(tmp_path)))


# ---------------------------------------------------------------------------
# trace CSV
# ---------------------------------------------------------------------------


def test_trace_round_trip(tri_result, tmp_path):
    path = tmp_path / "trace.csv"
    write_trace_csv(tri_result.records, path)
    text = path.read_text().splitlines()
    assert text[0] == TRACE_SCHEMA
    assert text[1] == ",".join(TRACE_COLUMNS)
    assert read_trace_csv(path) == tri_result.records


def test_trace_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("not a trace\n")
    with pytest.raises(ValueError):
        read_trace_csv(bad)
    wrong_header = tmp_path / "header.csv"
    wrong_header.write_text(TRACE_SCHEMA + "\nrun_id,round\n")
    with pytest.raises(ValueError):
        read_trace_csv(wrong_header)


def test_trace_validation_catches_tampering(tmp_path):
    good = TraceRecord("r", 0, "ProxyOnly", 1, 3, None, 2, True, False, 9.0)
    validate_trace_records([good])
    bad = replace(good, emitted_count=5)
    with pytest.raises(ValueError):
        validate_trace_records([bad])
    path = tmp_path / "tampered.csv"
    write_trace_csv([bad], path)
    with pytest.raises(ValueError):
        read_trace_csv(path)
    with pytest.raises(ValueError):
        validate_trace_records([replace(good, case="TargetEscalated", target_called=True)])


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def test_sweep_runs_the_cartesian_grid(tmp_path):
    base = ExperimentConfig(method="trispec", max_new_tokens=8, num_prompts=2)
    columns, rows = sweep(base, {"lambda": ["0.0", "1.01"], "seed": ["0", "1"]})
    assert columns[:2] == ["lambda", "seed"]
    assert columns[2:] == list(SWEEP_METRIC_COLUMNS)
    assert [(r["lambda"], r["seed"]) for r in rows] == [
        ("0.0", "0"), ("0.0", "1"), ("1.01", "0"), ("1.01", "1"),
    ]
    # a sweep row is exactly the standalone run at that grid point
    point = run_experiment(replace(base, lam=1.01, seed=1))
    row = rows[3]
    assert row["r_t"] == repr(point.report.r_t)
    assert row["N"] == str(point.report.N)
    assert row["speedup"] == repr(point.report.speedup)

    path = tmp_path / "sweep.csv"
    write_sweep_csv(columns, rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == SWEEP_SCHEMA
    assert len(lines) == 2 + len(rows)


def test_sweep_rejects_bad_grids():
    base = ExperimentConfig()
    with pytest.raises(ConfigError):
        sweep(base, {})
    with pytest.raises(ConfigError):
        sweep(base, {"beam": ["1"]})
    with pytest.raises(ConfigError):
        sweep(base, {"k": []})
