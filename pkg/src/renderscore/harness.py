"""End-to-end evaluation: manifests -> completions -> renders -> scores -> reports.

The harness consumes pre-collected instance manifests (JSON-lines), obtains
model responses through a completion provider (subprocess or HTTP), renders
and scores each response, persists append-only JSON-lines records, and
aggregates leaderboards.

Two conventions reconcile the reporting rules: success-conditioned metric
means never include failed renders, while win-rate inputs always include
them as zeros.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import re
import subprocess
import tempfile
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .basic_metrics import (ActivationVector, ScoreSet, cis, edit_similarity,
                            load_activation_vector, metric_correlations,
                            pixel_similarity, ssim_normalized)
from .emd import EmsConfig, ems
from .errors import (DuplicateInstance, EmptySet, MalformedManifest,
                     ProviderUnavailable, RefusalDetected, TooFewModels)
from .images import ImageGrid, content_hash, load_image, save_image, to_grayscale
from .rendering import RendererSpec, RenderOutcome, Structure, post_process, render

SUBDOMAINS = {
    "latex": {"equation", "table", "algorithm", "plot"},
    "webpage": {"html", "css", "js"},
    "lilypond": {"music"},
}

METRIC_COLUMNS = ("ems", "pixel_similarity", "ssim", "cis", "edit_similarity")


@dataclass(frozen=True)
class Instance:
    """One evaluation case: an input image plus optional ground truth."""

    id: str
    domain: str
    subdomain: str
    image: Path
    structure: str | None = None      # ground-truth source, when known
    activations: Path | None = None   # precomputed activation vector JSON


@dataclass
class EvaluationRecord:
    """Everything produced while scoring one (instance, model) pair."""

    instance_id: str
    model_id: str
    domain: str
    subdomain: str
    prompt: str
    raw_response: str
    extracted: str
    fix_log: list[str]
    render_success: bool
    renderer_log: str
    render_duration_s: float
    scores: ScoreSet
    artifact: str | None = None       # path of the rendered PNG, when kept
    started_at: str = ""
    finished_at: str = ""

    def to_json(self) -> str:
        doc = asdict(self)
        doc["scores"] = self.scores.as_dict()
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EvaluationRecord":
        doc = json.loads(line)
        doc["scores"] = ScoreSet(**doc["scores"])
        return cls(**doc)


def load_manifest(path) -> list[Instance]:
    """Parse a JSON-lines manifest, validating images and rejecting duplicates.

    Each line: {"id", "domain", "subdomain", "image", "structure"?,
    "activations"?}. Image paths are resolved relative to the manifest.
    """
    base = Path(path).parent
    instances: list[Instance] = []
    hashes: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedManifest(f"line {lineno}: {exc}") from exc
            missing = {"id", "domain", "subdomain", "image"} - set(doc)
            if missing:
                raise MalformedManifest(f"line {lineno}: missing {sorted(missing)}")
            domain = doc["domain"]
            if domain not in SUBDOMAINS:
                raise MalformedManifest(f"line {lineno}: unknown domain {domain!r}")
            if doc["subdomain"] not in SUBDOMAINS[domain]:
                raise MalformedManifest(
                    f"line {lineno}: subdomain {doc['subdomain']!r} "
                    f"inconsistent with domain {domain!r}")
            image = (base / doc["image"]).resolve()
            try:
                digest = content_hash(load_image(image))
            except Exception as exc:
                raise MalformedManifest(
                    f"line {lineno}: image {image} unreadable: {exc}") from exc
            if digest in hashes:
                raise DuplicateInstance(
                    f"instances {hashes[digest]!r} and {doc['id']!r} share "
                    f"an identical image")
            hashes[digest] = doc["id"]
            activations = doc.get("activations")
            instances.append(Instance(
                id=str(doc["id"]),
                domain=domain,
                subdomain=doc["subdomain"],
                image=image,
                structure=doc.get("structure"),
                activations=(base / activations).resolve() if activations else None,
            ))
    return instances


# ---------------------------------------------------------------------------
# completion providers
# ---------------------------------------------------------------------------

_REFUSAL_RE = re.compile(
    r"i('?| a)m sorry|i cannot|i can'?t\b|unable to (assist|help|comply)"
    r"|copyright", re.I)
_CODE_HINT_RE = re.compile(r"```|\\begin|\\documentclass|<html|\{\s*\"filename\"|\\version")


def looks_like_refusal(response: str) -> bool:
    """Heuristic: refusal phrasing with no recognizable code content."""
    if _CODE_HINT_RE.search(response):
        return False
    return bool(_REFUSAL_RE.search(response))


class SubprocessProvider:
    """Adapter contract: JSON {"image": path, "prompt": text} on stdin,
    response text on stdout, exit 0."""

    def __init__(self, argv: list[str], timeout_s: float = 300.0):
        self.argv = list(argv)
        self.timeout_s = timeout_s

    def complete(self, image_path, prompt: str) -> str:
        payload = json.dumps({"image": str(image_path), "prompt": prompt})
        try:
            proc = subprocess.run(self.argv, input=payload, text=True,
                                  capture_output=True, timeout=self.timeout_s)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ProviderUnavailable(str(exc)) from exc
        if proc.returncode != 0:
            raise ProviderUnavailable(
                f"provider exited {proc.returncode}: {proc.stderr[:300]}")
        return proc.stdout

    def describe(self) -> str:
        return " ".join(self.argv)


class HttpProvider:
    """Same payload as the subprocess contract, POSTed as JSON."""

    def __init__(self, url: str, timeout_s: float = 300.0):
        self.url = url
        self.timeout_s = timeout_s

    def complete(self, image_path, prompt: str) -> str:
        payload = json.dumps({"image": str(image_path), "prompt": prompt}).encode()
        req = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                return resp.read().decode("utf-8", errors="replace")
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            raise ProviderUnavailable(str(exc)) from exc

    def describe(self) -> str:
        return self.url


def make_provider(spec: str):
    """'http(s)://...' -> HttpProvider, anything else -> argv subprocess."""
    if spec.startswith(("http://", "https://")):
        return HttpProvider(spec)
    import shlex
    return SubprocessProvider(shlex.split(spec))


def fetch_completion(instance: Instance, provider, prompt: str,
                     model_id: str, cache_dir=None,
                     retries: int = 3, backoff_s: float = 0.5,
                     sleep=time.sleep) -> str:
    """Obtain a response, with an on-disk cache and transient-error retries.

    The cache key hashes (model, instance image bytes, prompt), so re-runs
    reproduce responses byte-for-byte without touching the provider.
    Refusal-looking responses raise RefusalDetected (cached all the same).
    """
    cache_file = None
    if cache_dir is not None:
        key = hashlib.sha256()
        key.update(model_id.encode())
        key.update(Path(instance.image).read_bytes())
        key.update(prompt.encode())
        cache_file = Path(cache_dir) / f"{key.hexdigest()}.txt"
        if cache_file.exists():
            response = cache_file.read_text(encoding="utf-8")
            if looks_like_refusal(response):
                raise RefusalDetected(response[:200])
            return response
    last_error = None
    for attempt in range(retries):
        try:
            response = provider.complete(instance.image, prompt)
            break
        except ProviderUnavailable as exc:
            last_error = exc
            if attempt + 1 < retries:
                sleep(backoff_s * (2 ** attempt))
    else:
        raise ProviderUnavailable(
            f"provider failed after {retries} attempts: {last_error}")
    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        cache_file.write_text(response, encoding="utf-8")
    if looks_like_refusal(response):
        raise RefusalDetected(response[:200])
    return response


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _embed_image(activation_cmd: list[str], image_path) -> ActivationVector | None:
    try:
        proc = subprocess.run([*activation_cmd, str(image_path)],
                              capture_output=True, text=True, timeout=300)
        if proc.returncode != 0:
            return None
        doc = json.loads(proc.stdout)
        return ActivationVector(dim=int(doc["dim"]),
                                values=np.asarray(doc["values"]))
    except Exception:
        return None


def score_instance(instance: Instance, response: str,
                   renderer: RendererSpec, cfg: EmsConfig | None = None,
                   model_id: str = "model", prompt: str = "",
                   workdir=None, artifact_dir=None,
                   activation_cmd: list[str] | None = None) -> EvaluationRecord:
    """Post-process, render and score one response against its instance.

    Every failure mode lands in the record as a zeroed ScoreSet with
    render_success=False; nothing is raised for model mistakes.
    """
    cfg = cfg or EmsConfig()
    started = _now()
    workdir = workdir or tempfile.mkdtemp(prefix="score-")
    has_truth = instance.structure is not None
    wants_cis = activation_cmd is not None or instance.activations is not None

    def failure(extracted: str, fix_log: list[str], log: str,
                duration: float = 0.0) -> EvaluationRecord:
        return EvaluationRecord(
            instance_id=instance.id, model_id=model_id,
            domain=instance.domain, subdomain=instance.subdomain,
            prompt=prompt, raw_response=response, extracted=extracted,
            fix_log=fix_log, render_success=False, renderer_log=log,
            render_duration_s=duration,
            scores=ScoreSet.failure(with_cis=wants_cis, with_edit=has_truth),
            started_at=started, finished_at=_now())

    try:
        structure = post_process(response, instance.domain, workdir=workdir)
    except Exception as exc:
        return failure(response, ["post-process-error"],
                       f"{type(exc).__name__}: {exc}")

    outcome = render(structure, renderer, workdir=workdir)
    if not outcome.success:
        rec = failure(structure.extracted, structure.fix_log,
                      outcome.renderer_log, outcome.duration)
        return rec

    reference = load_image(instance.image)
    rendered = outcome.image
    artifact = None
    if artifact_dir is not None:
        out = Path(artifact_dir) / instance.id / model_id
        out.mkdir(parents=True, exist_ok=True)
        artifact = str(out / "render.png")
        save_image(rendered, artifact)

    ref, cand = _normalized(reference, rendered)
    gray_ref = to_grayscale(ref)
    gray_cand = to_grayscale(cand)
    scores = ScoreSet(
        render_success=True,
        ems=ems(gray_ref, gray_cand, cfg).ems,
        pixel_similarity=pixel_similarity(ref, cand),
        ssim=ssim_normalized(gray_ref, gray_cand),
    )
    if has_truth:
        scores.edit_similarity = edit_similarity(
            structure.extracted,
            canonical_structure_text(instance.domain, instance.structure))
    if wants_cis:
        vec_ref = None
        if instance.activations is not None:
            try:
                vec_ref = load_activation_vector(instance.activations)
            except Exception:
                vec_ref = None
        if vec_ref is None and activation_cmd is not None:
            vec_ref = _embed_image(activation_cmd, instance.image)
        vec_cand = None
        if activation_cmd is not None:
            with tempfile.NamedTemporaryFile(suffix=".png", dir=workdir,
                                             delete=False) as tf:
                save_image(rendered, tf.name)
                vec_cand = _embed_image(activation_cmd, tf.name)
        if vec_ref is not None and vec_cand is not None:
            scores.cis = cis(vec_ref, vec_cand)

    return EvaluationRecord(
        instance_id=instance.id, model_id=model_id,
        domain=instance.domain, subdomain=instance.subdomain,
        prompt=prompt, raw_response=response,
        extracted=structure.extracted, fix_log=structure.fix_log,
        render_success=True, renderer_log=outcome.renderer_log,
        render_duration_s=outcome.duration, scores=scores,
        artifact=artifact, started_at=started, finished_at=_now())


def _normalized(reference: ImageGrid, candidate: ImageGrid):
    from .images import normalize_pair
    return normalize_pair(reference, candidate)


def canonical_structure_text(domain: str, text: str) -> str:
    """Normalize a structure for edit comparison.

    Webpage bundles are reduced to a canonical filename->content dump so
    formatting of the JSON wrapper does not count as an edit; other domains
    compare source text as-is.
    """
    if domain != "webpage":
        return text
    from .rendering import strip_headers
    try:
        doc = json.loads(strip_headers(text))
    except json.JSONDecodeError:
        return text
    if isinstance(doc, dict):
        files = {str(k): str(v) for k, v in doc.items()}
    elif isinstance(doc, list):
        try:
            files = {str(e["filename"]): str(e["content"]) for e in doc}
        except (TypeError, KeyError):
            return text
    else:
        return text
    return json.dumps(files, sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def rendering_success_rate(records: list[EvaluationRecord]) -> float:
    if not records:
        raise EmptySet("no records")
    return sum(r.render_success for r in records) / len(records)


def mean_win_rate(table: dict[str, list[float]]) -> dict[str, float]:
    """Per-model mean win rate over scenarios.

    ``table`` maps model id -> per-scenario scores (render failures already
    zero-filled). In each scenario a model's win fraction is the share of
    other models it strictly beats, with ties worth half; fractions are
    then averaged over scenarios. Rank-based, so any strictly monotone
    rescaling of a scenario's scores leaves the result unchanged.
    """
    models = sorted(table)
    if len(models) < 2:
        raise TooFewModels("win rates need at least two models")
    lengths = {len(table[m]) for m in models}
    if len(lengths) != 1:
        raise ValueError("all models need the same scenario count")
    n_scenarios = lengths.pop()
    if n_scenarios < 1:
        raise ValueError("need at least one scenario")
    scores = np.array([table[m] for m in models], dtype=np.float64)
    m = len(models)
    wins = np.zeros(m)
    for s in range(n_scenarios):
        col = scores[:, s]
        beats = (col[:, None] > col[None, :]).sum(axis=1)
        ties = (col[:, None] == col[None, :]).sum(axis=1) - 1  # exclude self
        wins += (beats + 0.5 * ties) / (m - 1)
    fractions = wins / n_scenarios
    return {model: float(fractions[i]) for i, model in enumerate(models)}


def _conditioned_mean(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def build_leaderboard(records: list[EvaluationRecord]) -> dict:
    """Aggregate records into per-domain tables plus overall win rates.

    Success-conditioned means exclude failed renders (rows with zero
    successes report 0.0 and carry a no_successes marker); the win-rate
    table zero-fills failures, so a model that never renders still ranks.
    """
    if not records:
        raise EmptySet("no records to aggregate")
    domains = sorted({r.domain for r in records})
    models = sorted({r.model_id for r in records})

    tables: dict[str, list[dict]] = {}
    for domain in domains:
        rows = []
        for model in models:
            recs = [r for r in records
                    if r.domain == domain and r.model_id == model]
            if not recs:
                continue
            ok = [r for r in recs if r.render_success]
            row = {
                "model": model,
                "instances": len(recs),
                "rendering_success": len(ok) / len(recs),
                "no_successes": not ok,
            }
            for metric in METRIC_COLUMNS:
                vals = [getattr(r.scores, metric) for r in ok]
                mean = _conditioned_mean(vals)
                row[metric] = (mean if mean is not None else
                               (0.0 if not ok else None))
            rows.append(row)
        tables[domain] = rows

    # win rates over zero-filled EMS, scenarios = instances seen by all models
    win_rates: dict[str, float] = {}
    per_model_scores: dict[str, dict[str, float]] = {m: {} for m in models}
    for r in records:
        score = r.scores.ems if r.render_success else 0.0
        per_model_scores[r.model_id][r.instance_id] = score
    common = None
    for m in models:
        ids = set(per_model_scores[m])
        common = ids if common is None else (common & ids)
    common = sorted(common or ())
    if len(models) >= 2 and common:
        table = {m: [per_model_scores[m][i] for i in common] for m in models}
        win_rates = mean_win_rate(table)

    # metric correlations over successful renders (columns fully present)
    correlations = None
    ok_records = [r for r in records if r.render_success]
    if len(ok_records) >= 2:
        columns: dict[str, np.ndarray] = {}
        for metric in METRIC_COLUMNS:
            vals = [getattr(r.scores, metric) for r in ok_records]
            if all(v is not None for v in vals):
                columns[metric] = np.asarray(vals, dtype=np.float64)
        if len(columns) >= 2:
            matrix, names = metric_correlations(columns)
            correlations = {"metrics": names,
                            "matrix": [[None if np.isnan(v) else round(float(v), 6)
                                        for v in row] for row in matrix]}

    ranking = sorted(models,
                     key=lambda m: (-win_rates.get(m, 0.0), m))
    return {
        "models": models,
        "domains": domains,
        "tables": tables,
        "mean_win_rate": win_rates,
        "ranking": ranking,
        "correlations": correlations,
        "record_count": len(records),
    }


# ---------------------------------------------------------------------------
# record store and reports
# ---------------------------------------------------------------------------

def append_records(records: list[EvaluationRecord], out_dir) -> list[Path]:
    """Append records to per-(model, domain) JSON-lines files."""
    store = Path(out_dir) / "records"
    store.mkdir(parents=True, exist_ok=True)
    written = set()
    for record in records:
        path = store / f"{record.model_id}__{record.domain}.jsonl"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(record.to_json() + "\n")
        written.add(path)
    return sorted(written)


def read_records(store_dir) -> list[EvaluationRecord]:
    records = []
    for path in sorted(Path(store_dir).glob("*.jsonl")):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(EvaluationRecord.from_json(line))
    return records


def emit_report(records: list[EvaluationRecord], out_dir,
                formats: tuple[str, ...] = ("json", "csv", "html")) -> list[Path]:
    """Write leaderboard reports; rows ordered by win rate desc, then model."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    board = build_leaderboard(records)
    written = []
    if "json" in formats:
        path = out / "report.json"
        path.write_text(json.dumps(board, indent=2, sort_keys=True),
                        encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        path = out / "leaderboard.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("domain,model,instances,rendering_success,"
                     + ",".join(METRIC_COLUMNS) + ",mean_win_rate\n")
            for domain in board["domains"]:
                rows = sorted(board["tables"][domain],
                              key=lambda r: (-board["mean_win_rate"].get(r["model"], 0.0),
                                             r["model"]))
                for row in rows:
                    cells = [domain, row["model"], str(row["instances"]),
                             f"{row['rendering_success']:.6f}"]
                    for metric in METRIC_COLUMNS:
                        v = row[metric]
                        cells.append("" if v is None else f"{v:.6f}")
                    wr = board["mean_win_rate"].get(row["model"])
                    cells.append("" if wr is None else f"{wr:.6f}")
                    fh.write(",".join(cells) + "\n")
        written.append(path)
    if "html" in formats:
        path = out / "report.html"
        path.write_text(_render_html(board), encoding="utf-8")
        written.append(path)
    return written


def _render_html(board: dict) -> str:
    def table(rows: list[dict]) -> str:
        if not rows:
            return "<p>(no records)</p>"
        head = ("<tr><th>model</th><th>n</th><th>render ok</th>"
                + "".join(f"<th>{m}</th>" for m in METRIC_COLUMNS) + "</tr>")
        body = []
        for row in sorted(rows, key=lambda r: (-board["mean_win_rate"].get(r["model"], 0.0),
                                               r["model"])):
            cells = [row["model"], str(row["instances"]),
                     f"{row['rendering_success']:.3f}"]
            for metric in METRIC_COLUMNS:
                v = row[metric]
                text = "-" if v is None else f"{v:.3f}"
                if row["no_successes"] and metric == "ems":
                    text += " (no successes)"
                cells.append(text)
            body.append("<tr>" + "".join(f"<td>{c}</td>" for c in cells) + "</tr>")
        return "<table border=1>" + head + "".join(body) + "</table>"

    parts = ["<html><head><meta charset='utf-8'>"
             "<title>Round-trip evaluation report</title></head><body>",
             "<h1>Round-trip evaluation report</h1>"]
    if board["mean_win_rate"]:
        parts.append("<h2>Mean win rate</h2><ol>")
        for model in board["ranking"]:
            wr = board["mean_win_rate"].get(model)
            label = f"{model}: {wr:.3f}" if wr is not None else model
            parts.append(f"<li>{label}</li>")
        parts.append("</ol>")
    for domain in board["domains"]:
        parts.append(f"<h2>{domain}</h2>")
        parts.append(table(board["tables"][domain]))
    if board["correlations"]:
        parts.append("<h2>Metric correlations (successful renders)</h2>")
        names = board["correlations"]["metrics"]
        parts.append("<table border=1><tr><th></th>"
                     + "".join(f"<th>{n}</th>" for n in names) + "</tr>")
        for name, row in zip(names, board["correlations"]["matrix"]):
            cells = "".join(
                f"<td>{'-' if v is None else f'{v:.3f}'}</td>" for v in row)
            parts.append(f"<tr><th>{name}</th>{cells}</tr>")
        parts.append("</table>")
    parts.append("</body></html>")
    return "".join(parts)


def evaluate_instances(instances: list[Instance], provider, model_id: str,
                       renderers: dict[str, RendererSpec],
                       out_dir, cfg: EmsConfig | None = None,
                       prompts: dict[str, str] | None = None,
                       activation_cmd: list[str] | None = None,
                       workers: int = 1,
                       progress=None) -> list[EvaluationRecord]:
    """Run the full loop over a manifest for one model.

    Provider outages raise; model-side failures (refusals, bad code) become
    zero-score records. ``workers`` bounds concurrent render/score tasks.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .rendering import load_prompt

    cfg = cfg or EmsConfig()
    out = Path(out_dir)
    cache_dir = out / "cache"
    artifact_dir = out / "artifacts"
    workdir = out / "tmp"
    workdir.mkdir(parents=True, exist_ok=True)

    def run_one(instance: Instance) -> EvaluationRecord:
        prompt = (prompts or {}).get(instance.domain) or load_prompt(instance.domain)
        try:
            response = fetch_completion(instance, provider, prompt,
                                        model_id=model_id, cache_dir=cache_dir)
        except RefusalDetected as exc:
            return EvaluationRecord(
                instance_id=instance.id, model_id=model_id,
                domain=instance.domain, subdomain=instance.subdomain,
                prompt=prompt, raw_response=str(exc), extracted="",
                fix_log=["refusal-detected"], render_success=False,
                renderer_log="refusal detected; scored as render failure",
                render_duration_s=0.0,
                scores=ScoreSet.failure(
                    with_cis=activation_cmd is not None or instance.activations is not None,
                    with_edit=instance.structure is not None),
                started_at=_now(), finished_at=_now())
        record = score_instance(
            instance, response, renderers[instance.domain], cfg,
            model_id=model_id, prompt=prompt, workdir=str(workdir),
            artifact_dir=artifact_dir, activation_cmd=activation_cmd)
        if progress is not None:
            progress(record)
        return record

    if workers <= 1:
        records = [run_one(i) for i in instances]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_one, instances))
    append_records(records, out)
    return records
