"""Command-line entry point.

Precedence for settings: flags > environment > config file. The config
file is flat ``key=value`` text with dotted section prefixes, e.g.::

    mr.path=/var/lib/memloop/mr.log
    budget=8192
    backend.chat.base_url=http://localhost:11434
    backend.embed.dim=768
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import yaml

from . import __version__
from .backends import (
    BackendConfig,
    HashEmbedder,
    HttpChatBackend,
    HttpEmbeddingBackend,
    ScriptedChatBackend,
    ScriptRule,
)
from .context import PrecisionThresholds
from .engine import Backends, EngineConfig, EngineState, run_task
from .errors import MemloopError
from .executor import Workspace
from .harness import format_report_table, load_suite, run_experiment, write_report
from .repository import MemoryRepository


@dataclass
class CliConfig:
    mr_path: str = "memloop.mr.log"
    budget: int = 8192
    max_revisions: int = 3
    parallelism: int = 1
    success_only: bool = True
    threshold_original: float = 0.85
    threshold_concise: float = 0.60
    chat: BackendConfig = field(default_factory=BackendConfig)
    embed: BackendConfig = field(default_factory=BackendConfig)
    embed_dim: int = 768

    def validate(self):
        if self.budget < 1024:
            raise MemloopError(f"budget must be >= 1024, got {self.budget}")
        if self.max_revisions < 0:
            raise MemloopError("max_revisions must be >= 0")
        if self.parallelism < 1:
            raise MemloopError("parallelism must be >= 1")


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MemloopError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _as_bool(raw: str) -> bool:
    return raw.lower() in ("1", "true", "yes", "on")


def build_config(flags: dict) -> CliConfig:
    cfg = CliConfig()
    path = flags.get("config") or os.environ.get("MEMLOOP_CONFIG")
    file_values = _parse_config_file(path) if path else {}

    def pick(key: str, flag: str | None = None):
        if flag and flags.get(flag) is not None:
            return flags[flag]
        return file_values.get(key)

    mapping = [
        ("mr.path", "mr", str, "mr_path"),
        ("budget", "budget", int, "budget"),
        ("max_revisions", "max_revisions", int, "max_revisions"),
        ("parallelism", "parallelism", int, "parallelism"),
        ("success_only", "success_only", _as_bool, "success_only"),
        ("thresholds.original", None, float, "threshold_original"),
        ("thresholds.concise", None, float, "threshold_concise"),
        ("backend.embed.dim", None, int, "embed_dim"),
    ]
    try:
        for key, flag, conv, attr in mapping:
            raw = pick(key, flag)
            if raw is not None:
                setattr(cfg, attr, conv(raw) if isinstance(raw, str) else raw)
        for section, target in (("chat", cfg.chat), ("embed", cfg.embed)):
            for leaf, conv in (
                ("base_url", str), ("model", str), ("timeout", float), ("max_retries", int),
            ):
                raw = file_values.get(f"backend.{section}.{leaf}")
                if raw is not None:
                    setattr(target, leaf, conv(raw))
    except (TypeError, ValueError) as exc:
        raise MemloopError(f"bad config value: {exc}") from exc

    api_key = os.environ.get("MEMLOOP_API_KEY")
    if api_key:
        cfg.chat.api_key = api_key
        cfg.embed.api_key = api_key
    cfg.validate()
    return cfg


def _load_mock_llm(path: str) -> ScriptedChatBackend:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or not isinstance(doc.get("rules"), list):
        raise MemloopError(f"{path}: mock script needs a rules array")
    rules = [ScriptRule(match=str(r["match"]), reply=str(r["reply"])) for r in doc["rules"]]
    return ScriptedChatBackend(rules, default=doc.get("default"))


def _build_backends(cfg: CliConfig, mock_llm: str | None, mock_embed: bool) -> Backends:
    chat = _load_mock_llm(mock_llm) if mock_llm else HttpChatBackend(cfg.chat)
    embedder = (
        HashEmbedder(cfg.embed_dim)
        if mock_embed
        else HttpEmbeddingBackend(cfg.embed, dim=cfg.embed_dim)
    )
    return Backends(chat=chat, embedder=embedder)


def _engine_config(cfg: CliConfig) -> EngineConfig:
    return EngineConfig(
        budget=cfg.budget,
        max_revisions=cfg.max_revisions,
        thresholds=PrecisionThresholds(cfg.threshold_original, cfg.threshold_concise),
        success_only=cfg.success_only,
    )


_shared_options = [
    click.option("--config", type=click.Path(exists=True), default=None, help="Config file."),
    click.option("--mr", default=None, help="Memory repository log path."),
    click.option("--budget", type=int, default=None, help="Context token budget."),
    click.option("--max-revisions", "max_revisions", type=int, default=None),
    click.option("--success-only", "success_only", type=bool, default=None),
    click.option("--mock-llm", "mock_llm", type=click.Path(exists=True), default=None,
                 help="Scripted chat backend (YAML rule file)."),
    click.option("--mock-embed", "mock_embed", is_flag=True, default=False,
                 help="Use the deterministic hash embedder."),
]


def shared_options(fn):
    for opt in reversed(_shared_options):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main():
    """Memory-loop task orchestration engine."""


@main.command("run")
@click.argument("request")
@shared_options
@click.option("--transcript", type=click.Path(), default=None, help="Write the session transcript here.")
@click.option("--checker", default=None, help="JSON array of evaluation predicates.")
@click.option("--workspace", default=None, help="JSON mapping of cell address to value.")
def cmd_run(request, transcript, checker, workspace, **flags):
    """Run a single task REQUEST and print the session digest."""
    try:
        cfg = build_config(flags)
        backends = _build_backends(cfg, flags["mock_llm"], flags["mock_embed"])
        engine_cfg = _engine_config(cfg)
        # without an explicit checker, accept any plan that executes
        engine_cfg.checker = json.loads(checker) if checker else [
            {"kind": "cell_empty", "args": {"addr": "Z99"}}
        ]
        ws = Workspace.from_cells(json.loads(workspace) if workspace else {})
        mr = MemoryRepository(cfg.mr_path, dim=cfg.embed_dim)
    except (MemloopError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)

    result = run_task(request, mr, backends, ws, engine_cfg)
    digest = {
        "status": result.status.value,
        "executed": result.executed,
        "passed": result.passed,
        "op_ratio": result.op_ratio,
        "memory_ids": result.memory_ids,
    }
    click.echo(json.dumps(digest, indent=2))
    if transcript:
        with open(transcript, "w", encoding="utf-8") as fh:
            fh.write("states: " + " -> ".join(result.transcript.state_sequence) + "\n\n")
            for i, ctx in enumerate(result.transcript.contexts, 1):
                fh.write(f"--- context {i} ---\n{ctx}\n")
            for i, out in enumerate(result.transcript.llm_outputs, 1):
                fh.write(f"--- reply {i} ---\n{out}\n")
            for name, params, outcome in result.transcript.action_log:
                fh.write(f"action {name}({params}) -> {outcome}\n")
    sys.exit(0 if (result.status is EngineState.END and result.passed) else 1)


@main.command("suite")
@click.argument("suite_path", type=click.Path())
@shared_options
@click.option("--rounds", type=int, default=1, show_default=True)
@click.option("--parallelism", type=int, default=None)
@click.option("--report", type=click.Path(), default=None, help="Report file (JSON lines).")
def cmd_suite(suite_path, rounds, parallelism, report, **flags):
    """Run a task suite for one or more memory-recycling rounds."""
    try:
        cfg = build_config(flags | {"parallelism": parallelism})
        suite = load_suite(suite_path)
        backends = _build_backends(cfg, flags["mock_llm"], flags["mock_embed"])
        mr = MemoryRepository(cfg.mr_path, dim=cfg.embed_dim)
    except (MemloopError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)

    reports, summary = run_experiment(
        suite, rounds, mr, backends, _engine_config(cfg), parallelism=cfg.parallelism
    )
    click.echo(format_report_table(reports))
    click.echo(json.dumps({"summary": summary}))
    if report:
        write_report(reports, summary, report)
    sys.exit(0)


@main.group("mem")
def cmd_mem():
    """Inspect and manage the memory repository."""


def _open_mr(flags) -> MemoryRepository:
    cfg = build_config(flags)
    return MemoryRepository(cfg.mr_path, dim=cfg.embed_dim)


@cmd_mem.command("list")
@shared_options
def mem_list(**flags):
    try:
        mr = _open_mr(flags)
    except (MemloopError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    for item in mr.items():
        first_line = item.brief_text.splitlines()[0]
        click.echo(f"{item.id}  {item.kind.value:<10}  {'ok' if item.success else 'fail':<4}  {first_line}")
    sys.exit(0)


@cmd_mem.command("stats")
@shared_options
def mem_stats(**flags):
    try:
        mr = _open_mr(flags)
    except (MemloopError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    items = mr.items()
    stats = {
        "size": len(items),
        "task_memories": sum(1 for i in items if i.kind.value == "TaskMemory"),
        "knowledge": sum(1 for i in items if i.kind.value == "Knowledge"),
        "successes": sum(1 for i in items if i.success),
    }
    click.echo(json.dumps(stats, indent=2))
    sys.exit(0)


@cmd_mem.command("export")
@click.argument("path", type=click.Path())
@shared_options
def mem_export(path, **flags):
    try:
        mr = _open_mr(flags)
        count = mr.export(path)
    except (MemloopError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"exported {count} items to {path}")
    sys.exit(0)


@cmd_mem.command("import")
@click.argument("path", type=click.Path(exists=True))
@shared_options
@click.option("--policy", type=click.Choice(["skip_duplicates", "overwrite"]),
              default="skip_duplicates", show_default=True)
def mem_import(path, policy, **flags):
    try:
        mr = _open_mr(flags)
        count = mr.import_archive(path, policy=policy)
    except (MemloopError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"imported {count} items from {path}")
    sys.exit(0)


@cmd_mem.command("forget")
@click.argument("ids", nargs=-1, required=True)
@shared_options
def mem_forget(ids, **flags):
    try:
        mr = _open_mr(flags)
        count = mr.forget(list(ids))
    except (MemloopError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"forgot {count} items")
    sys.exit(0)


if __name__ == "__main__":
    main()
