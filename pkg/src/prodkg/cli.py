"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

Every command that talks to a model takes either ``--fixtures DIR`` (replay
recorded conversations, fully offline) or per-role HTTP endpoints
(``--vlm-endpoint``/``--llm-endpoint`` plus ``--vlm-model``/``--llm-model``).
API keys come only from the environment: ``PRODKG_VLM_API_KEY`` and
``PRODKG_LLM_API_KEY``. ``--record-to DIR`` stores every live exchange as a
replay fixture.

``--config FILE`` reads a YAML mapping of defaults per command, e.g.
``{enroll: {jobs: 4, llm_model: llama}, schema: {init: {output: s.yaml}}}``;
flags given on the command line win.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable

import click
import yaml

from prodkg import persist
from prodkg.errors import ConfigError, ProdKGError
from prodkg.evaluation import load_annotations, modes_from_names, run_benchmark
from prodkg.graph import InventoryGraph
from prodkg.model_client import (
    DirectoryFixtureStore,
    HttpBackend,
    ModelBackend,
    RecordingBackend,
    ReplayBackend,
)
from prodkg.pipeline import BatchItem, Backends, EnrollmentConfig, Mode, enroll_batch, read_manifest
from prodkg.schema import (
    default_schema,
    identify_properties,
    induce_schema,
    parse_schema,
    serialize_schema,
)

log = logging.getLogger("prodkg.cli")


class RuntimeFailure(click.ClickException):
    exit_code = 1


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        msg = record.getMessage()
        try:
            payload = json.loads(msg)
            if not isinstance(payload, dict):
                raise ValueError
        except ValueError:
            payload = {"event": "log", "message": msg}
        return json.dumps({"level": record.levelname.lower(), "logger": record.name, **payload}, ensure_ascii=False)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    root = logging.getLogger("prodkg")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False


def handle_errors(fn: Callable[..., Any]) -> Callable[..., Any]:
    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            raise click.UsageError(str(exc)) from exc
        except ProdKGError as exc:
            raise RuntimeFailure(f"{type(exc).__name__}: {exc}") from exc
        except OSError as exc:
            raise RuntimeFailure(str(exc)) from exc

    return wrapper


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


# --- backends --------------------------------------------------------------------


def backend_options(roles: tuple[str, ...]) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    def decorate(fn: Callable[..., Any]) -> Callable[..., Any]:
        opts = [
            click.option("--fixtures", type=click.Path(file_okay=False, path_type=Path), help="Replay fixture directory."),
            click.option("--record-to", type=click.Path(file_okay=False, path_type=Path), help="Record live exchanges here."),
        ]
        for role in roles:
            opts += [
                click.option(f"--{role}-endpoint", help=f"{role.upper()} chat-completions URL."),
                click.option(f"--{role}-model", help=f"{role.upper()} model id (also keys replay fixtures)."),
            ]
        for opt in reversed(opts):
            fn = opt(fn)
        return fn

    return decorate


def _backend(role: str, fixtures: Path | None, endpoint: str | None, model: str | None, record_to: Path | None) -> ModelBackend:
    if (fixtures is None) == (endpoint is None):
        raise click.UsageError(f"give exactly one of --fixtures or --{role}-endpoint")
    backend: ModelBackend
    if fixtures is not None:
        if record_to is not None:
            raise click.UsageError("--record-to needs live endpoints, not --fixtures")
        backend = ReplayBackend(DirectoryFixtureStore(fixtures), model=model or role)
    else:
        if not model:
            raise click.UsageError(f"--{role}-model is required with --{role}-endpoint")
        backend = HttpBackend(endpoint, model, api_key_env=f"PRODKG_{role.upper()}_API_KEY")
    if record_to is not None:
        backend = RecordingBackend(backend, DirectoryFixtureStore(record_to))
    return backend


def _backends(kw: dict[str, Any]) -> Backends:
    fixtures, record_to = kw["fixtures"], kw["record_to"]
    return Backends(
        vlm=_backend("vlm", fixtures, kw["vlm_endpoint"], kw["vlm_model"], record_to),
        llm=_backend("llm", fixtures, kw["llm_endpoint"], kw["llm_model"], record_to),
    )


def _load_schema(path: Path) -> Any:
    return parse_schema(path.read_text(encoding="utf-8"))


# --- commands --------------------------------------------------------------------


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, exists=True, path_type=Path))
@click.option("-v", "--verbose", is_flag=True, help="Log stage timings and retries to stderr.")
@click.pass_context
def cli(ctx: click.Context, config_path: Path | None, verbose: bool) -> None:
    """Build product knowledge graphs from product images."""
    _setup_logging(verbose)
    if config_path is not None:
        doc = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
        if not isinstance(doc, dict):
            raise click.UsageError(f"{config_path}: config must be a mapping")
        ctx.default_map = doc


@cli.group()
def schema() -> None:
    """Create property schemas."""


@schema.command("init")
@click.option("--default", "source", flag_value="default", help="Write the built-in eight-property schema.")
@click.option("--auto", "source", flag_value="auto", help="Ask the LLM for properties, types, units and choices.")
@click.option("--manual", "manual_file", type=click.Path(dir_okay=False, exists=True, path_type=Path),
              help="Type the property names listed in FILE (one per line) with the LLM.")
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@backend_options(("llm",))
@handle_errors
def schema_init(source: str | None, manual_file: Path | None, output: Path, **kw: Any) -> None:
    """Write a schema file."""
    if manual_file is not None:
        if source is not None:
            raise click.UsageError("--manual cannot be combined with --default/--auto")
        source = "manual"
    if source is None:
        raise click.UsageError("choose one of --default, --auto, --manual FILE")
    if source == "default":
        result = default_schema()
    else:
        if kw["fixtures"] is None and kw["llm_endpoint"] is None:
            raise click.UsageError(f"--{source} needs an LLM: pass --fixtures or --llm-endpoint")
        llm = _backend("llm", kw["fixtures"], kw["llm_endpoint"], kw["llm_model"], kw["record_to"])
        if source == "auto":
            names = identify_properties("auto", llm=llm)
        else:
            names = identify_properties("manual", manual_file.read_text(encoding="utf-8").splitlines())
        result = induce_schema(names, llm)
    _write_atomic(output, serialize_schema(result))
    click.echo(f"wrote {output} ({len(result.properties) + 1} properties)")


@cli.command()
@click.argument("images", nargs=-1, type=click.Path(path_type=Path))
@click.option("--schema", "schema_path", type=click.Path(dir_okay=False, exists=True, path_type=Path), required=True)
@click.option("--inventory", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="Inventory document; created if missing, updated in place.")
@click.option("--manifest", type=click.Path(dir_okay=False, exists=True, path_type=Path),
              help='JSON Lines file of {"image": path, "id": optional}.')
@click.option("--records", type=click.Path(file_okay=False, path_type=Path), help="Write one enrollment record per image here.")
@click.option("--mode", type=click.Choice([m.value for m in Mode if not m.is_baseline]), default=Mode.FULL.value, show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--expansion-depth", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--expansion-parallel", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--extract-temperature", type=click.FloatRange(min=0), default=0.2, show_default=True)
@click.option("--reason-temperature", type=click.FloatRange(min=0), default=0.2, show_default=True)
@click.option("--expansion-temperature", type=click.FloatRange(min=0), default=0.8, show_default=True)
@backend_options(("vlm", "llm"))
@handle_errors
def enroll(
    images: tuple[Path, ...],
    schema_path: Path,
    inventory: Path,
    manifest: Path | None,
    records: Path | None,
    mode: str,
    jobs: int,
    expansion_depth: int,
    expansion_parallel: int,
    extract_temperature: float,
    reason_temperature: float,
    expansion_temperature: float,
    **kw: Any,
) -> None:
    """Enroll product images into an inventory graph."""
    items = [BatchItem(p) for p in images]
    if manifest is not None:
        items += read_manifest(manifest)
    if not items:
        raise click.UsageError("no images given")
    schema_ = _load_schema(schema_path)
    graph = persist.load(inventory.read_text(encoding="utf-8")) if inventory.exists() else InventoryGraph()
    config = EnrollmentConfig(
        mode=Mode(mode),
        expansion_depth=expansion_depth,
        expansion_parallel=expansion_parallel,
        extract_temperature=extract_temperature,
        reason_temperature=reason_temperature,
        expansion_temperature=expansion_temperature,
    )
    results = enroll_batch(items, schema_, graph, _backends(kw), config, jobs=jobs)
    _write_atomic(inventory, persist.save(graph))
    if records is not None:
        for result in results:
            if result.record is not None:
                name = result.item.external_id or result.record.image_sha256[:16]
                _write_atomic(records / f"{name}.record.json", result.record.dumps())
    failed = [r for r in results if not r.ok]
    click.echo(
        f"enrolled {len(results) - len(failed)}/{len(results)} images; "
        f"inventory has {len(graph.nodes)} nodes, {len(graph.edges)} edges"
    )
    if failed:
        lines = [f"  {r.item.external_id or r.item.image}: {r.error}" for r in failed]
        raise RuntimeFailure("some images failed:\n" + "\n".join(lines))


@cli.command()
@click.option("--annotations", type=click.Path(dir_okay=False, exists=True, path_type=Path), required=True)
@click.option("--schema", "schema_path", type=click.Path(dir_okay=False, exists=True, path_type=Path),
              help="Defaults to the built-in schema.")
@click.option("--modes", default=",".join(m.value for m in Mode), show_default=True,
              help="Comma-separated modes, one table row each.")
@click.option("--out-json", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--out-text", type=click.Path(dir_okay=False, path_type=Path))
@backend_options(("vlm", "llm"))
@handle_errors
def benchmark(annotations: Path, schema_path: Path | None, modes: str, out_json: Path | None, out_text: Path | None, **kw: Any) -> None:
    """Score extracted properties against human annotations."""
    names = [m.strip() for m in modes.split(",") if m.strip()]
    configs = modes_from_names(names)
    schema_ = _load_schema(schema_path) if schema_path else default_schema()
    dataset = load_annotations(annotations, schema_)
    table = run_benchmark(dataset, configs, _backends(kw), schema_)
    if out_json is not None:
        _write_atomic(out_json, table.dumps())
    if out_text is not None:
        _write_atomic(out_text, table.render_text())
    click.echo(table.render_text(), nl=False)


@cli.command()
@click.option("--inventory", type=click.Path(dir_okay=False, exists=True, path_type=Path), required=True)
@click.option("--format", "fmt", type=click.Choice(sorted(persist.EXPORT_FORMATS)), default="graphml", show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@handle_errors
def export(inventory: Path, fmt: str, output: Path) -> None:
    """Export an inventory for a graph database."""
    graph = persist.load(inventory.read_text(encoding="utf-8"))
    _write_atomic(output, persist.export(graph, fmt))
    click.echo(f"wrote {output}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="prodkg", standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
