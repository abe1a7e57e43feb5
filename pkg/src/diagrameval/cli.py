"""Command-line interface.

Settings resolve as: command-line flag, then the config file, then the
environment, then built-in defaults. The config file is INI with a single
``[diagrameval]`` section::

    [diagrameval]
    registry = ./registry
    cache_dir = ./.judge-cache
    judge_endpoint = https://example.invalid/v1/chat/completions
    judge_model = some-vlm
    judge_runs = 3
    weights = default
    log_level = WARNING

Exit codes: 0 success, 1 input or usage error, 2 judge or network failure.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .document import extract_text_set, parse_document
from .errors import DiagramEvalError, DuplicateId, JudgeError, MalformedInput
from .judge import JudgeClient, JudgeConfig
from .pipeline import (
    EvalRequest,
    evaluate,
    read_records_jsonl,
    records_from_metrics,
    write_records_jsonl,
)
from .registry import CorpusItem, Registry
from .sampler import MAX_COHORT, MIN_COHORT, monte_carlo_validate, sample_cohort, synthetic_corpus
from .scoring import (
    MODES,
    RECORD_SCHEMA_VERSION,
    WEIGHT_PROFILES,
    SeasonParams,
    TraceLog,
    base_score,
    break_even_steps,
    dqs_delta_surface,
    fit_season_params,
    format_table,
    summarize,
    summary_to_csv,
    summary_to_json,
)

logger = logging.getLogger("diagrameval")

DEFAULT_CONFIG_PATH = Path("~/.config/diagrameval/config.ini")
CONFIG_SECTION = "diagrameval"

EXIT_OK, EXIT_INPUT, EXIT_EXTERNAL = 0, 1, 2


@dataclass(frozen=True)
class CliConfig:
    registry: str = "./registry"
    cache_dir: str = "./.judge-cache"
    judge_endpoint: str = ""
    judge_model: str = ""
    judge_api_key: str = ""
    judge_runs: int = 3
    weights: str = "default"
    log_level: str = "WARNING"

    def describe(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if d["judge_api_key"]:
            d["judge_api_key"] = "***"
        return d


ENV_VARS = {
    "registry": "DIAGRAMEVAL_REGISTRY",
    "cache_dir": "DIAGRAMEVAL_CACHE_DIR",
    "judge_endpoint": "JUDGE_ENDPOINT",
    "judge_model": "JUDGE_MODEL",
    "judge_api_key": "JUDGE_API_KEY",
    "judge_runs": "JUDGE_RUNS",
    "weights": "DIAGRAMEVAL_WEIGHTS",
    "log_level": "DIAGRAMEVAL_LOG_LEVEL",
}


def resolve_config(flags: dict, config_path: Path | None, env: dict | None = None) -> CliConfig:
    """Merge defaults < env < config file < flags."""
    env = os.environ if env is None else env
    values = {f.name: f.default for f in fields(CliConfig)}
    for key, var in ENV_VARS.items():
        if env.get(var):
            values[key] = env[var]
    path = config_path if config_path is not None else DEFAULT_CONFIG_PATH.expanduser()
    if path.exists():
        parser = configparser.ConfigParser()
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise MalformedInput(f"config file {path}: {exc}") from exc
        if parser.has_section(CONFIG_SECTION):
            for key, value in parser.items(CONFIG_SECTION):
                if key not in values:
                    raise MalformedInput(f"config file {path}: unknown key {key!r}")
                values[key] = value
    elif config_path is not None:
        raise MalformedInput(f"config file {path} does not exist")
    for key, value in flags.items():
        if value is not None:
            values[key] = value
    try:
        values["judge_runs"] = int(values["judge_runs"])
    except ValueError as exc:
        raise MalformedInput(f"judge_runs must be an integer, got {values['judge_runs']!r}") from exc
    if values["weights"] not in WEIGHT_PROFILES:
        raise MalformedInput(f"weights must be one of {sorted(WEIGHT_PROFILES)}")
    return CliConfig(**values)


class Ctx:
    def __init__(self, cfg: CliConfig, verbose: bool):
        self.cfg = cfg
        self.verbose = verbose

    @property
    def registry(self) -> Registry:
        reg = Registry(self.cfg.registry)
        if not reg.exists():
            raise MalformedInput(f"no registry at {reg.root}; run 'diagrameval init' first")
        return reg

    def judge(self) -> JudgeClient:
        return JudgeClient(
            JudgeConfig(
                endpoint=self.cfg.judge_endpoint,
                model_name=self.cfg.judge_model,
                runs=self.cfg.judge_runs,
                cache_dir=Path(self.cfg.cache_dir),
                api_key=self.cfg.judge_api_key or None,
            )
        )


pass_ctx = click.make_pass_decorator(Ctx)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=not text.endswith("\n"))


@click.group()
@click.version_option(__version__, prog_name="diagrameval")
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), help="INI config file.")
@click.option("--registry", help="Registry directory.")
@click.option("--cache-dir", help="Judge response cache directory.")
@click.option("--judge-endpoint", help="Chat-completion URL of the judge.")
@click.option("--judge-model", help="Judge model name.")
@click.option("--judge-runs", type=int, help="Judge queries per image.")
@click.option("--weights", type=click.Choice(sorted(WEIGHT_PROFILES)), help="Default weight profile.")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.option("-v", "--verbose", is_flag=True, help="Print the effective configuration.")
@click.pass_context
def cli(ctx, config_path, verbose, **flags):
    """Evaluate generated scientific diagrams."""
    cfg = resolve_config(flags, config_path)
    logging.basicConfig(level=cfg.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if verbose:
        click.echo("# effective config " + json.dumps(cfg.describe(), sort_keys=True), err=True)
    ctx.obj = Ctx(cfg, verbose)


# --------------------------------------------------------------------------
# registry commands


@cli.command()
@click.option("--season-id", default="S0", show_default=True)
@click.option("--seed", "master_seed", type=int, default=0, show_default=True, help="Master seed.")
@pass_ctx
def init(c: Ctx, season_id, master_seed):
    """Create an empty registry."""
    Registry.init(c.cfg.registry, season_id=season_id, master_seed=master_seed)
    click.echo(f"initialized registry at {c.cfg.registry} (season {season_id})")


def _items_from_path(path: Path, fmt: str, mode: str | None, reference: str | None) -> list[CorpusItem]:
    if fmt == "auto":
        suffix = path.suffix.lower()
        fmt = {".svg": "svg-subset", ".jsonl": "items-jsonl"}.get(suffix, "manifest-json")
    if fmt == "items-jsonl":
        items = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedInput(f"{path}:{lineno}: {exc}") from exc
            if mode and "mode" not in raw:
                raw["mode"] = mode
            items.append(CorpusItem.from_dict(raw))
        return items
    if mode is None:
        raise MalformedInput(f"{path}: --mode is required when ingesting documents")
    doc = parse_document(path.read_bytes(), fmt)
    ref = None
    if mode == "TI2I":
        ref = reference or str(path)
    return [
        CorpusItem(
            id=doc.source_id or path.stem,
            mode=mode,
            element_count=doc.element_count(),
            reference_image=ref,
            required_text=extract_text_set(doc),
        )
    ]


@cli.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--format", "fmt", type=click.Choice(["auto", "manifest-json", "svg-subset", "items-jsonl"]), default="auto", show_default=True)
@click.option("--mode", type=click.Choice(MODES), help="Mode for items that do not state one.")
@click.option("--reference", help="Reference image for TI2I documents (defaults to the document itself).")
@click.option("--strict", is_flag=True, help="Stage nothing if any item is rejected.")
@pass_ctx
def ingest(c: Ctx, paths, fmt, mode, reference, strict):
    """Validate items and add them to the staging pool.

    Rejected items are reported and skipped; the exit status is 1 if any
    item was rejected. With --strict a single rejection stages nothing.
    """
    reg = c.registry
    season = reg.load_season()
    taken = set(reg.items()) | set(season.active_pool) | set(season.staging_pool)
    accepted, rejected = [], 0
    for path in paths:
        try:
            items = _items_from_path(path, fmt, mode, reference)
        except (DiagramEvalError, ValueError, TypeError) as exc:
            click.echo(f"REJECT {path}: {exc}")
            rejected += 1
            continue
        for item in items:
            if item.id in taken:
                click.echo(f"REJECT {item.id}: {DuplicateId(item.id)}")
                rejected += 1
                continue
            taken.add(item.id)
            accepted.append(item)
            click.echo(f"OK     {item.id} ({item.mode}, {item.element_count} elements)")
    if strict and rejected:
        click.echo(f"{rejected} rejected; nothing staged (--strict)")
        sys.exit(EXIT_INPUT)
    if accepted:
        staged = reg.stage(accepted)
        click.echo(f"staged {len(accepted)}; staging pool now {len(staged.staging_pool)}")
    if rejected:
        sys.exit(EXIT_INPUT)


@cli.command()
@click.option("--season-id", help="Id of the new season (default: increment the current id).")
@click.option("--months", type=int, default=12, show_default=True)
@pass_ctx
def advance(c: Ctx, season_id, months):
    """Close the current season and open the next one with staged items merged."""
    new = c.registry.advance(season_id, months)
    click.echo(f"season {new.season_id}: active pool {len(new.active_pool)}")


@cli.command()
@click.option("--months", type=int, help="Months to commit (default: the season length).")
@click.option("--t2i", type=click.IntRange(MIN_COHORT, MAX_COHORT), default=15, show_default=True)
@click.option("--ti2i", type=click.IntRange(MIN_COHORT, MAX_COHORT), default=15, show_default=True)
@pass_ctx
def precommit(c: Ctx, months, t2i, ti2i):
    """Draw and store the monthly cohorts of the current season."""
    season = c.registry.precommit(months=months, n_per_month=t2i + ti2i, split={"T2I": t2i, "TI2I": ti2i})
    click.echo(f"season {season.season_id}: {len(season.committed_cohorts)} months committed")


# --------------------------------------------------------------------------
# scoring


def _season_params(c: Ctx, mode: str, K: float | None, r: float | None) -> SeasonParams:
    if K is not None and r is not None:
        return SeasonParams(K, r, "cli", mode).freeze()
    reg = Registry(c.cfg.registry)
    if reg.exists():
        season = reg.load_season()
        if mode in season.params:
            return season.params[mode]
    raise MalformedInput(f"no frozen season parameters for {mode}; pass --K and --r or run fit-season")


def _load_item(c: Ctx, item_id: str | None, item_file: Path | None) -> CorpusItem:
    if item_file is not None:
        try:
            return CorpusItem.from_dict(json.loads(item_file.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"{item_file}: {exc}") from exc
    if item_id is None:
        raise click.UsageError("give --item or --item-file")
    items = c.registry.items()
    if item_id not in items:
        raise MalformedInput(f"unknown item {item_id!r}")
    return items[item_id]


def _record_line(rec) -> str:
    m = rec.metrics
    dq = f"{rec.dqs:.4f}" if rec.dqs is not None else "-"
    return (
        f"{rec.task_id}\tP={m.precision:.4f}\tR={m.recall:.4f}\tDesign={m.design:.4f}\tBlank={m.blank:.4f}"
        f"\tRead={m.readability:.4f}\tAlign={m.align:.4f}\tSteps={rec.n:g}\ts={rec.s:.4f}\tDQS={dq}"
    )


@cli.command()
@click.option("--item", "item_id", help="Registry item id.")
@click.option("--item-file", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Item JSON instead of a registry lookup.")
@click.option("--doc", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Generated document.")
@click.option("--metrics", "metrics_file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="JSON with already measured metrics (and optional steps) instead of --doc.")
@click.option("--trace", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="Interaction trace JSONL.")
@click.option("--mode", "metric_mode", type=click.Choice(["deterministic", "judge"]), default="deterministic", show_default=True)
@click.option("--blank-mode", type=click.Choice(["deterministic", "judge"]), help="Defaults to --mode.")
@click.option("--weights", type=click.Choice(sorted(WEIGHT_PROFILES)), help="Weight profile (default from config).")
@click.option("--system", help="Name of the generating system.")
@click.option("--K", "K", type=float, help="Season mean step count.")
@click.option("--r", "r", type=float, help="Season tolerance.")
@click.option("--out", type=click.Path(dir_okay=False), help="Append the record to this JSONL file.")
@pass_ctx
def score(c: Ctx, item_id, item_file, doc, metrics_file, trace, metric_mode, blank_mode, weights, system, K, r, out):
    """Score one generated diagram."""
    weights = WEIGHT_PROFILES[weights or c.cfg.weights]
    if metrics_file is not None:
        raw = json.loads(metrics_file.read_text(encoding="utf-8"))
        raw.setdefault("system", system)
        raw.setdefault("task_id", item_id or metrics_file.stem)
        if "mode" not in raw:
            raise MalformedInput(f"{metrics_file}: metrics file needs a mode")
        try:
            season = _season_params(c, raw["mode"], K, r)
        except MalformedInput:
            season = None  # s only; DQS needs season parameters
        rec = records_from_metrics([raw], weights, season)[0]
    else:
        if doc is None:
            raise click.UsageError("give --doc or --metrics")
        item = _load_item(c, item_id, item_file)
        tlog = TraceLog.from_jsonl(trace.read_text(encoding="utf-8")) if trace else None
        if tlog is None:
            click.echo(f"warning: no trace for {item.id}; using n=0", err=True)
        fmt = "svg-subset" if doc.suffix.lower() == ".svg" else "manifest-json"
        req = EvalRequest(item, doc.read_bytes(), tlog, metric_mode, blank_mode or metric_mode, weights, system, fmt)
        judge = c.judge() if "judge" in (req.perceptual, req.blank) else None
        rec = evaluate(req, _season_params(c, item.mode, K, r), judge)
    click.echo(_record_line(rec))
    if out:
        write_records_jsonl([rec], out, append=True)


@cli.command("fit-season")
@click.argument("records", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--mode", type=click.Choice(MODES), help="Fit one mode only (default: each mode present).")
@click.option("--save/--no-save", default=False, help="Store the frozen parameters in the current season.")
@pass_ctx
def fit_season(c: Ctx, records, mode, save):
    """Freeze K and r from a reference run's records."""
    recs = read_records_jsonl(records)
    modes = [mode] if mode else sorted({rec.mode for rec in recs})
    season_id = c.registry.current_season_id() if save else ""
    params = {}
    for m in modes:
        params[m] = fit_season_params([rec for rec in recs if rec.mode == m], season_id, m)
        click.echo(json.dumps(params[m].to_dict(), sort_keys=True))
    if save:
        c.registry.set_params(params)


@cli.command()
@click.argument("records", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--format", "fmt", type=click.Choice(["table", "csv", "json"]), default="table", show_default=True)
@click.option("--reweight", type=click.Choice(sorted(WEIGHT_PROFILES)), help="Re-aggregate s under another profile.")
@click.option("--out", type=click.Path(dir_okay=False))
@pass_ctx
def report(c: Ctx, records, fmt, reweight, out):
    """Summarize records per system and mode, ranked by DQS."""
    recs = read_records_jsonl(records)
    if not recs:
        raise MalformedInput(f"{records}: no records")
    if reweight:
        w = WEIGHT_PROFILES[reweight]
        recs = [replace(rec, s=base_score(rec.metrics, w), dqs=None, weights_id=w.profile_id) for rec in recs]
    rows = summarize(recs)
    text = {"table": format_table, "csv": summary_to_csv, "json": summary_to_json}[fmt](rows)
    _emit(text if text.endswith("\n") else text + "\n", out)


# --------------------------------------------------------------------------
# sampling


def _load_corpus(c: Ctx, path: Path | None, mode: str) -> list[tuple[str, int]]:
    if path is None:
        return c.registry.corpus(mode)
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            if raw.get("mode", mode) != mode:
                continue
            out.append((str(raw["id"]), int(raw["element_count"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
            raise MalformedInput(f"{path}:{lineno}: {exc}") from exc
    return out


@cli.command()
@click.option("--mode", type=click.Choice(MODES), required=True)
@click.option("--n", type=click.IntRange(MIN_COHORT, MAX_COHORT), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="JSONL with id and element_count (default: registry active pool).")
@click.option("--out", type=click.Path(dir_okay=False))
@pass_ctx
def sample(c: Ctx, mode, n, seed, corpus, out):
    """Draw one difficulty-balanced cohort."""
    result = sample_cohort(_load_corpus(c, corpus, mode), n, mode, seed)
    payload = {"tool_version": __version__, "schema_version": 1, "mode": mode, "n": n, **result.to_dict()}
    _emit(json.dumps(payload, sort_keys=True, indent=1) + "\n", out)


def _int_list(ctx, param, value):
    try:
        values = [int(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from exc
    for v in values:
        if not MIN_COHORT <= v <= MAX_COHORT:
            raise click.BadParameter(f"cohort size {v} outside [{MIN_COHORT}, {MAX_COHORT}]")
    if not values:
        raise click.BadParameter("empty list")
    return values


@cli.command()
@click.option("--mode", type=click.Choice(MODES), default="T2I", show_default=True)
@click.option("--n-list", callback=_int_list, default="5,6,10,12,15,20", show_default=True)
@click.option("--R", "R", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--synthetic", help="SIZE,MU,SIGMA: use a synthetic corpus instead.")
@click.option("--out", type=click.Path(dir_okay=False))
@pass_ctx
def mc(c: Ctx, mode, n_list, R, seed, corpus, synthetic, out):
    """Monte-Carlo check of cohort-mean stability."""
    if synthetic:
        try:
            size, mu, sigma = synthetic.split(",")
            items = synthetic_corpus(int(size), float(mu), float(sigma), seed)
        except ValueError as exc:
            raise click.BadParameter(f"--synthetic expects SIZE,MU,SIGMA: {exc}") from exc
    else:
        items = _load_corpus(c, corpus, mode)
    _emit(monte_carlo_validate(items, n_list, R, seed, mode).to_csv(), out)


# --------------------------------------------------------------------------
# DQS surface


@cli.command("dqs-surface")
@click.option("--K", "K", type=click.FloatRange(min=0, min_open=True), required=True)
@click.option("--r", "r", type=click.FloatRange(0, 1), required=True)
@click.option("--s-steps", type=click.IntRange(min=2), default=101, show_default=True, help="Grid points over s in [0, 1].")
@click.option("--n-max", type=click.FloatRange(min=0, min_open=True), default=100.0, show_default=True)
@click.option("--n-steps", type=click.IntRange(min=2), default=101, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
@pass_ctx
def dqs_surface(c: Ctx, K, r, s_steps, n_max, n_steps, out):
    """Write the grid of DQS - s over (s, n) as CSV."""
    s_grid = np.linspace(0.0, 1.0, s_steps)
    n_grid = np.linspace(0.0, n_max, n_steps)
    surface = dqs_delta_surface(K, r, s_grid, n_grid)
    _emit(surface_to_csv(K, r, s_grid, n_grid, surface), out)


def surface_to_csv(K, r, s_grid, n_grid, surface) -> str:
    buf = io.StringIO()
    buf.write(f"# diagrameval {__version__} schema {RECORD_SCHEMA_VERSION} K={K!r} r={r!r}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["s", "n", "delta", "break_even_n"])
    for i, s in enumerate(s_grid):
        be = break_even_steps(float(s), K, r)
        for j, n in enumerate(n_grid):
            writer.writerow([repr(float(s)), repr(float(n)), repr(float(surface[i, j]) + 0.0), repr(be)])
    return buf.getvalue()


def surface_from_csv(text: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    s_vals = sorted({float(row["s"]) for row in rows})
    n_vals = sorted({float(row["n"]) for row in rows})
    si = {v: i for i, v in enumerate(s_vals)}
    ni = {v: j for j, v in enumerate(n_vals)}
    surface = np.full((len(s_vals), len(n_vals)), np.nan)
    for row in rows:
        surface[si[float(row["s"])], ni[float(row["n"])]] = float(row["delta"])
    return np.array(s_vals), np.array(n_vals), surface


# --------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    """Entry point with stable exit codes."""
    try:
        cli.main(args=argv, prog_name="diagrameval", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_INPUT
    except click.ClickException as exc:
        exc.show()
        return EXIT_INPUT
    except JudgeError as exc:
        click.echo(f"error: judge: {exc}", err=True)
        return EXIT_EXTERNAL
    except (DiagramEvalError, ValueError, KeyError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INPUT
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
