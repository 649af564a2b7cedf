"""Command-line entry points: ``ask``, ``eval``, ``noise`` and ``index build``.

Exit codes: 0 success, 1 bad input (files, config, dataset), 3 pipeline
or LLM failure. Argument errors exit with argparse's 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, EmbeddingSettings, PipelineConfig
from .entity_index import EmbeddingProvider, EntityIndex, HashingEmbedder, HttpEmbedder, build_index
from .evalkit import FORMATS, DatasetError, load_dataset, noise_dataset, run_eval
from .kg_store import GraphLoadError, load_graph
from .llm_gateway import ChatCompletionClient, LlmGateway, Mode, ReplayCache

EXIT_INPUT = 1
EXIT_PIPELINE = 3

log = logging.getLogger("anchorrag")


def make_provider(settings: EmbeddingSettings) -> EmbeddingProvider:
    if settings.provider == "hashing":
        return HashingEmbedder(settings.dimension)
    if settings.provider == "http":
        if not settings.base_url or not settings.model:
            raise ConfigError("http embeddings need base_url and model")
        return HttpEmbedder(settings.base_url, settings.model, settings.api_key_env, settings.dimension,
                            max_in_flight=settings.max_in_flight)
    raise ConfigError(f"unknown embedding provider {settings.provider!r}")


def make_gateway(config: PipelineConfig, base_dir: Path | None = None) -> LlmGateway:
    """Gateway for `config`; a relative cache path is taken relative to `base_dir`."""
    s = config.llm
    cache_path = None
    if s.cache_path:
        cache_path = Path(s.cache_path)
        if base_dir is not None and not cache_path.is_absolute():
            cache_path = base_dir / cache_path
    if config.mode is not Mode.LIVE and cache_path is None:
        raise ConfigError(f"mode {config.mode.value!r} needs llm.cache_path")
    backend = None
    if config.mode is not Mode.REPLAY:
        backend = ChatCompletionClient(s.base_url, s.model, s.api_key_env, s.max_in_flight, s.requests_per_minute)
    return LlmGateway(backend, ReplayCache(cache_path), config.mode, s.retries, s.temperature, s.max_tokens, retry_delay=1.0)


def _load_config(args) -> tuple[PipelineConfig, Path | None]:
    if not getattr(args, "config", None):
        config, base = PipelineConfig(), None
    else:
        config, base = PipelineConfig.load(args.config), Path(args.config).resolve().parent
    if getattr(args, "mode", None):
        config.mode = Mode(args.mode)
    return config, base


def _services(args):
    config, base = _load_config(args)
    store = load_graph(args.kg, args.labels)
    index = EntityIndex.load(args.index, make_provider(config.embedding))
    return config, store, index, make_gateway(config, base)


def cmd_ask(args) -> int:
    from .supervisor import answer_question

    config, store, index, gateway = _services(args)
    try:
        trace = answer_question(args.question, store, index, gateway, config)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    if args.trace_out:
        Path(args.trace_out).write_text(trace.to_json() + "\n", encoding="utf-8")
    if not trace.answer.ok:
        print(f"error: {trace.answer.error}", file=sys.stderr)
        return EXIT_PIPELINE
    print(trace.answer.text)
    return 0


def cmd_eval(args) -> int:
    config, store, index, gateway = _services(args)
    dataset = load_dataset(args.dataset, args.format)
    if dataset.skipped:
        log.warning("skipped %d malformed records", dataset.skipped)
    report = run_eval(dataset.items, store, index, gateway, config, args.out)
    print(json.dumps(report.summary(), sort_keys=True))
    return 0


def cmd_noise(args) -> int:
    dataset = load_dataset(args.dataset, args.format)
    records = noise_dataset(dataset.items, args.seed, args.edits)
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    flagged = sum("noise_flags" in r for r in records)
    print(f"wrote {len(records)} questions to {args.out} ({flagged} flagged)")
    return 0


def cmd_index_build(args) -> int:
    config, _ = _load_config(args)
    store = load_graph(args.kg, args.labels)
    index = build_index(store, make_provider(config.embedding))
    index.save(args.out)
    print(f"indexed {len(index.entity_ids)} entities ({len(index)} names) into {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchorrag", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def services(p, labels_required=False):
        p.add_argument("--kg", required=True, help="triples TSV")
        p.add_argument("--labels", required=labels_required, help="labels TSV: id, label, aliases")
        p.add_argument("--index", required=True, help="file written by `index build`")
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--mode", choices=[m.value for m in Mode], help="overrides the config's mode")

    ask = sub.add_parser("ask", help="answer one question")
    ask.add_argument("--question", required=True)
    services(ask)
    ask.add_argument("--trace-out", help="write the answer trace JSON here")
    ask.set_defaults(func=cmd_ask)

    ev = sub.add_parser("eval", help="score a dataset; resumes an existing --out")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--format", choices=FORMATS, default="jsonl")
    services(ev)
    ev.add_argument("--out", required=True, help="per-item JSON lines; summary goes to <out>.summary.json")
    ev.set_defaults(func=cmd_eval)

    nz = sub.add_parser("noise", help="inject typos into question keywords")
    nz.add_argument("--dataset", required=True)
    nz.add_argument("--format", choices=FORMATS, default="jsonl")
    nz.add_argument("--seed", type=int, required=True)
    nz.add_argument("--edits", type=int, default=1)
    nz.add_argument("--out", required=True)
    nz.set_defaults(func=cmd_noise)

    idx = sub.add_parser("index", help="entity name index")
    idx_sub = idx.add_subparsers(dest="index_command", required=True)
    b = idx_sub.add_parser("build", help="embed all labels and aliases")
    b.add_argument("--kg", required=True)
    b.add_argument("--labels", required=True)
    b.add_argument("--config", help="pipeline config JSON; only its embedding settings are used")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_index_build)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, GraphLoadError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
