"""`clada` command: model generation, threshold search, sparse generation and the analysis runs."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from clada.core.constants import CASE_STUDY_SAMPLES, DEFAULT_ALPHAS, GROUPS, METRICS
from clada.core.exceptions import CladaError, EmptyInputError
from clada.graph import run_validation
from clada.graph.utils.helpers import get_corpus, get_model
from clada.modules.activation.meter import Aggregation
from clada.modules.bench.latency import bench_grid, parse_grid
from clada.modules.bench.report import emit_report
from clada.modules.cogload.metrics import calibrate_thresholds, corpus_signals, dump_signals
from clada.modules.corpus.records import CorpusRecord, validation_slice
from clada.modules.model.tokenizer import detokenize, tokenize
from clada.modules.model.weight_file import load_model, save_model
from clada.modules.model.weights import ActivationFn, ModelDims, ModelWeights, gen_random_model, plant_dead_neurons
from clada.modules.regression.panel import fit_panel_grid
from clada.modules.regression.report import report_table
from clada.modules.runtime.ablation import ablation_run, write_ablation_report
from clada.modules.runtime.engine import CladaEngine
from clada.modules.similarity.extraction import extract_activation_matrix, pairwise_similarity
from clada.modules.similarity.flocking import default_layer, read_panel
from clada.modules.similarity.heatmap import export_heatmap
from clada.modules.similarity.sequences import make_hybrid, make_rts
from clada.modules.threshold.policy import SearchConfig, ThresholdPolicy, load_policy, save_policy
from clada.modules.threshold.search import search_all
from clada.settings import settings

logger = logging.getLogger(__name__)

# Synthetic corpus size used when a command is run without --corpus.
SYNTHETIC_COUNT = 64
SYNTHETIC_LENGTH = 256


def _csv_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _csv_strings(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _corpus(args: argparse.Namespace, length: int = SYNTHETIC_LENGTH) -> list[CorpusRecord]:
    return get_corpus(args.corpus, args.seed, SYNTHETIC_COUNT, length)


def _policy(args: argparse.Namespace, model: ModelWeights) -> ThresholdPolicy:
    if args.policy:
        return load_policy(args.policy)
    logger.warning("No policy given, using tau_base = 0 on every layer")
    return ThresholdPolicy.uniform(model.dims.n_layers, 0.0)


def cmd_gen_model(args: argparse.Namespace) -> int:
    dims = ModelDims(
        n_layers=args.layers,
        d_model=args.dmodel,
        d_h=args.dh,
        n_heads=args.heads,
        vocab_size=args.vocab,
        max_ctx=args.ctx,
    )
    model = gen_random_model(args.seed, dims, ActivationFn(args.activation))
    save_model(model, args.output)
    _emit({"path": str(args.output), "dims": dims.model_dump(), "parameters": dims.parameter_count()})
    return 0


def cmd_plant(args: argparse.Namespace) -> int:
    model, planted = plant_dead_neurons(load_model(args.model), args.layer, args.fraction, args.seed)
    save_model(model, args.output)
    _emit({"path": str(args.output), "layer": args.layer, "planted": [int(j) for j in planted]})
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    records = _corpus(args)
    sample, description = validation_slice(
        records, settings.VALIDATION_HOLDOUT_FRACTION, args.token_cap, model.dims.max_ctx
    )
    cfg = SearchConfig(
        cett_budget=args.budget,
        method=args.method,
        bisection_iters=args.iters,
        grid=args.grid,
        corpus_id=args.corpus or f"synthetic-seed{args.seed}",
        token_cap=args.token_cap,
    )
    policy = search_all(
        model,
        sample,
        cfg,
        lambdas=args.lambda_,
        gammas=args.gamma,
        tau_s=args.tau_s,
        tau_h=args.tau_h,
        signal_scale=args.signal_scale,
        modulation_sign=args.sign,
        aggregation=args.aggregation,
        dval=description,
    )
    save_policy(policy, args.output)
    _emit({"path": str(args.output), "tau_base": policy.tau_bases(), "tau_s": policy.tau_s, "tau_H": policy.tau_h})
    return 0


def _prompt_tokens(args: argparse.Namespace) -> list[int]:
    if args.prompt_file:
        return tokenize(Path(args.prompt_file).read_bytes())
    if args.prompt:
        return tokenize(args.prompt)
    raise EmptyInputError("give --prompt or --prompt-file")


def cmd_run(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    engine = CladaEngine(model, _policy(args, model), args.mode, args.magnitude_source)
    tokens, stats = engine.generate(_prompt_tokens(args), args.max_new)
    if args.stats_file:
        Path(args.stats_file).write_text(stats.model_dump_json(indent=2) + "\n", encoding="utf-8")
    # Timings vary between runs; stdout carries only reproducible fields.
    _emit(
        {
            "mode": stats.mode,
            "tokens": tokens,
            "text": detokenize(tokens, model.dims.vocab_size).decode("utf-8", errors="replace"),
            "mean_sparsity": stats.mean_sparsity,
            "layer_sparsity": stats.layer_sparsity,
            "fires_s": stats.fires_s,
            "fires_H": stats.fires_h,
        }
    )
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    records = _corpus(args, length=args.prompt_len)
    prompts = [np.asarray(r.tokens[: args.prompt_len], dtype=np.int64) for r in records[: args.prompts] if r.tokens]
    rows = ablation_run(
        model, prompts, _policy(args, model), args.modes, max_new=args.max_new, teacher_forced=not args.free_running
    )
    write_ablation_report(rows, args.output)
    for row in rows:
        _emit({"mode": row.mode, "agreement_rate": row.agreement_rate, "mean_sparsity": row.mean_sparsity})
    return 0


def cmd_cogload(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    records = [r for r in _corpus(args) if len(r.tokens) >= 2]
    signals = corpus_signals(model, [r.tokens[: model.dims.max_ctx] for r in records])
    dump_signals([(r.id, s) for r, s in zip(records, signals)], args.output)
    tau_s, tau_h = calibrate_thresholds(signals, args.q_s, args.q_h, scale=args.signal_scale)
    _emit({"path": str(args.output), "sequences": len(signals), "tau_s": tau_s, "tau_H": tau_h})
    return 0


def cmd_hybrid(args: argparse.Namespace) -> int:
    records = _corpus(args, length=args.length)
    if args.rts:
        a, b = make_rts(records, args.seed, args.length, 2)
    else:
        long_enough = [r for r in records if len(r.tokens) >= args.length]
        if len(long_enough) < 2:
            raise EmptyInputError(f"corpus needs two sequences of >= {args.length} tokens")
        a, b = (np.asarray(r.tokens[: args.length], dtype=np.int64) for r in long_enough[:2])
    hybrid = make_hybrid(a, b, args.alpha)
    _emit({"alpha": args.alpha, "a": a.tolist(), "b": b.tolist(), "hybrid": hybrid.tolist()})
    return 0


def cmd_flock(args: argparse.Namespace) -> int:
    options = {
        "alphas": args.alphas,
        "groups": args.groups,
        "n_pairs": args.pairs,
        "seq_len": args.seq_len,
        "layer": args.layer,
        "cluster": args.cluster,
    }
    state = run_validation(
        model_path=args.model or "",
        corpus_path=args.corpus or "",
        output_dir=str(args.output),
        seed=args.seed,
        options=options,
        regress=args.regress,
    )
    _emit({"artifacts": state["artifacts"], "rows": int(len(state["panel"]))})
    return 0


def cmd_sim(args: argparse.Namespace) -> int:
    model = get_model(args.model, args.seed)
    if args.case_study:
        samples = [tokenize(text) for text in CASE_STUDY_SAMPLES]
    elif args.samples:
        lines = Path(args.samples).read_text(encoding="utf-8").splitlines()
        samples = [tokenize(line) for line in lines if line.strip()]
    else:
        raise EmptyInputError("give --samples or --case-study")
    layer = default_layer(model) if args.layer is None else args.layer
    matrix = pairwise_similarity(model, samples, layer, args.position, args.metric)
    output = Path(args.output)
    output.mkdir(parents=True, exist_ok=True)
    written = [str(p) for p in export_heatmap(matrix, output / f"pairwise_{args.metric}.csv", pgm=args.pgm)]
    if args.heatmaps:
        for index, tokens in enumerate(samples):
            position = len(tokens) - 1 if args.position is None else args.position
            activation = extract_activation_matrix(model, tokens, layer, position)
            written += [str(p) for p in export_heatmap(activation, output / f"sample_{index:02d}.csv", pgm=args.pgm)]
    _emit({"layer": layer, "metric": args.metric, "matrix": np.round(matrix, 6).tolist(), "files": written})
    return 0


def cmd_regress(args: argparse.Namespace) -> int:
    fits = fit_panel_grid(read_panel(args.panel), cluster=args.cluster)
    sys.stdout.write(report_table(fits, args.output))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    model = get_model(args.model, args.seed)
    rows = bench_grid(model, _policy(args, model), args.modes, parse_grid(args.grid), args.repeats, args.seed)
    emit_report(rows, args.format, args.output)
    _emit({"path": str(args.output), "rows": len(rows)})
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    common.add_argument("--config", help="JSON object of flag defaults; explicit flags still win")

    parser = argparse.ArgumentParser(prog="clada", description="Cognitive-load-aware sparse MLP activation toolkit")
    commands = parser.add_subparsers(dest="command", required=True)
    sub: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        command = commands.add_parser(name, parents=[common], help=help_text)
        command.set_defaults(handler=handler)
        sub[name] = command
        return command

    p = add("gen-model", cmd_gen_model, "generate a seeded random model")
    p.add_argument("--layers", type=int, default=settings.MODEL_LAYERS)
    p.add_argument("--dmodel", type=int, default=settings.MODEL_D_MODEL)
    p.add_argument("--dh", type=int, default=settings.MODEL_D_H)
    p.add_argument("--heads", type=int, default=settings.MODEL_N_HEADS)
    p.add_argument("--vocab", type=int, default=settings.MODEL_VOCAB_SIZE)
    p.add_argument("--ctx", type=int, default=settings.MODEL_MAX_CTX)
    p.add_argument("--activation", choices=[a.value for a in ActivationFn], default=settings.MODEL_ACTIVATION)
    p.add_argument("-o", "--output", required=True)

    p = add("plant", cmd_plant, "zero a fraction of one layer's neurons")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("-o", "--output", required=True)

    p = add("search", cmd_search, "search per-layer base thresholds under a CETT budget")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus")
    p.add_argument("--budget", type=float, default=settings.CETT_BUDGET)
    p.add_argument("--method", choices=["bisection", "grid"], default=settings.SEARCH_METHOD)
    p.add_argument("--iters", type=int, default=settings.BISECTION_ITERS)
    p.add_argument("--grid", type=int, default=settings.GRID_QUANTILES)
    p.add_argument("--token-cap", type=int, default=settings.VALIDATION_TOKEN_CAP)
    p.add_argument("--lambda", dest="lambda_", type=float, default=settings.DEFAULT_LAMBDA)
    p.add_argument("--gamma", type=float, default=settings.DEFAULT_GAMMA)
    p.add_argument("--tau-s", type=float)
    p.add_argument("--tau-h", type=float)
    p.add_argument("--signal-scale", choices=["normalized", "raw"], default="normalized")
    p.add_argument("--sign", type=int, choices=[1, -1], default=1)
    p.add_argument("--aggregation", choices=[a.value for a in Aggregation], default=Aggregation.MEAN.value)
    p.add_argument("-o", "--output", required=True)

    p = add("run", cmd_run, "greedy generation under a runtime mode")
    p.add_argument("--model", required=True)
    p.add_argument("--policy")
    p.add_argument("--mode", default="clada_full")
    p.add_argument("--prompt")
    p.add_argument("--prompt-file")
    p.add_argument("--max-new", type=int, default=64)
    p.add_argument("--magnitude-source", choices=["prefill", "lagged"], default="prefill")
    p.add_argument("--stats-file")

    p = add("ablate", cmd_ablate, "compare runtime modes against dense decoding")
    p.add_argument("--model", required=True)
    p.add_argument("--policy")
    p.add_argument("--corpus")
    p.add_argument(
        "--modes",
        type=_csv_strings,
        default=["clada_full", "clada_no_semantic", "clada_no_statistical", "top_p(0.5)"],
    )
    p.add_argument("--prompts", type=int, default=8)
    p.add_argument("--prompt-len", type=int, default=64)
    p.add_argument("--max-new", type=int, default=32)
    p.add_argument("--free-running", action="store_true")
    p.add_argument("-o", "--output", required=True)

    p = add("cogload", cmd_cogload, "per-token surprisal and entropy over a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus")
    p.add_argument("--q-s", type=float)
    p.add_argument("--q-h", type=float)
    p.add_argument("--signal-scale", choices=["normalized", "raw"], default="normalized")
    p.add_argument("-o", "--output", required=True)

    p = add("hybrid", cmd_hybrid, "build one prefix-replaced hybrid sequence")
    p.add_argument("--corpus")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--length", type=int, default=settings.FLOCK_SEQ_LEN)
    p.add_argument("--rts", action="store_true", help="use frequency-matched random tokens")

    p = add("flock", cmd_flock, "run the prefix-replacement similarity experiment")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--alphas", type=_csv_floats, default=list(DEFAULT_ALPHAS))
    p.add_argument("--groups", type=_csv_strings, default=list(GROUPS))
    p.add_argument("--pairs", type=int, default=settings.FLOCK_PAIRS)
    p.add_argument("--seq-len", type=int, default=settings.FLOCK_SEQ_LEN)
    p.add_argument("--layer", type=int)
    p.add_argument("--regress", action="store_true")
    p.add_argument("--cluster", action="store_true")
    p.add_argument("-o", "--output", required=True, help="output directory")

    p = add("sim", cmd_sim, "pairwise activation similarity of a set of samples")
    p.add_argument("--model")
    p.add_argument("--samples", help="text file, one sample per line")
    p.add_argument("--case-study", action="store_true")
    p.add_argument("--layer", type=int)
    p.add_argument("--position", type=int)
    p.add_argument("--metric", choices=list(METRICS), default="cka")
    p.add_argument("--heatmaps", action="store_true", help="also export each sample's activation matrix")
    p.add_argument("--no-pgm", dest="pgm", action="store_false")
    p.add_argument("-o", "--output", required=True, help="output directory")

    p = add("regress", cmd_regress, "fixed-effects regression grid over a panel")
    p.add_argument("--panel", required=True)
    p.add_argument("--cluster", action="store_true")
    p.add_argument("-o", "--output")

    p = add("bench", cmd_bench, "generation latency against dense")
    p.add_argument("--model")
    p.add_argument("--policy")
    p.add_argument("--modes", type=_csv_strings, default=["clada_full"])
    p.add_argument("--grid", nargs="+", default=["prompt=256", "gen=256", "batch=1"])
    p.add_argument("--repeats", type=int, default=settings.BENCH_REPEATS)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("-o", "--output", required=True)

    return parser, sub


def _apply_config(argv: Sequence[str], parser: argparse.ArgumentParser, sub: dict) -> None:
    """Load --config JSON as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or known.command not in sub:
        return
    try:
        overrides = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        parser.error(f"cannot read config {known.config}: {e}")
    if not isinstance(overrides, dict):
        parser.error(f"config {known.config} must hold a JSON object")
    sub[known.command].set_defaults(**{key.replace("-", "_"): value for key, value in overrides.items()})


def cli_main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    parser, sub = build_parser()
    try:
        _apply_config(argv, parser, sub)
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return args.handler(args)
    except (CladaError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(cli_main())
