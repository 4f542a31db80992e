"""Turn raw model responses into rendered images via external renderers.

The pipeline is: extract code from the response (``strip_headers``), apply
domain post-processing (``fix_latex`` / ``fix_lilypond`` /
``parse_webpage_bundle``), then hand the cleaned structure to a renderer
subprocess described by a ``RendererSpec`` command template. Renderers are
fully external: the core never links TeX, LilyPond or a browser, so CI
environments can swap in the bundled offline fallbacks or real toolchains
without code changes.

A render failure of any kind (nonzero exit, timeout, blank output,
unfixable code) is an outcome, not an exception; callers score it as an
absolute failure.
"""

from __future__ import annotations

import importlib.resources as resources
import json
import os
import re
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BlankImage, MalformedJson, PathTraversal, Unfixable
from .images import ImageGrid, crop_to_content, load_image

_FENCE_RE = re.compile(r"```[ \t]*[\w+-]*[ \t]*\n?(.*?)```", re.S)
_MATH_MODE_RE = re.compile(r"missing \$|math mode missing|Missing \$", re.I)
_ENV_UNDEFINED_RE = re.compile(r"Environment (\w+) undefined")

DEFAULT_TIMEOUT_S = 60.0
BROWSER_VIEWPORT = (1920, 1080)


def asset_path(name: str) -> Path:
    return Path(resources.files("renderscore") / "assets" / name)


def load_prompt(domain: str) -> str:
    name = {"latex": "prompt_latex.txt", "webpage": "prompt_webpage.txt",
            "lilypond": "prompt_music.txt"}[domain]
    return asset_path(name).read_text(encoding="utf-8")


@dataclass
class Structure:
    """A model response reduced to renderable code, with its fix trail."""

    domain: str  # latex | lilypond | webpage
    raw_response: str
    cleaned: str | dict[str, str]
    extracted: str  # code before wrapper injection; the edit-similarity side
    fix_log: list[str] = field(default_factory=list)
    bundle_dir: Path | None = None  # webpage sandbox with the written files


@dataclass
class RenderOutcome:
    success: bool
    image: ImageGrid | None
    renderer_log: str
    duration: float


@dataclass(frozen=True)
class RendererSpec:
    """Command template for one domain's renderer subprocess."""

    domain: str
    command: tuple[str, ...]
    timeout_s: float = DEFAULT_TIMEOUT_S
    assets: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        joined = " ".join(self.command)
        if "{input}" not in joined or "{output}" not in joined:
            raise ValueError("command template needs {input} and {output}")
        object.__setattr__(self, "command", tuple(self.command))


def default_renderer_specs() -> dict[str, RendererSpec]:
    """Bundled offline fallback renderers, invoked through this interpreter."""
    base = (sys.executable, "-m", "renderscore.fallback_renderers")
    return {
        "latex": RendererSpec("latex", base + ("latex", "{input}", "{output}")),
        "webpage": RendererSpec("webpage", base + ("webpage", "{input}", "{output}")),
        "lilypond": RendererSpec("lilypond", base + ("lilypond", "{input}", "{output}")),
    }


def load_renderer_specs(path) -> dict[str, RendererSpec]:
    """Parse a renderer spec JSON file ({domain: {command, timeout_s, assets}})."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    specs = {}
    for domain, entry in doc.items():
        if domain.startswith("_"):
            continue
        specs[domain] = RendererSpec(
            domain=domain,
            command=tuple(entry["command"]),
            timeout_s=float(entry.get("timeout_s", DEFAULT_TIMEOUT_S)),
            assets=dict(entry.get("assets", {})),
        )
    return specs


def strip_headers(raw: str) -> str:
    """Remove code-fence wrappers; concatenate all fenced blocks in order.

    Text without fences passes through unchanged.
    """
    blocks = _FENCE_RE.findall(raw)
    if not blocks:
        return raw
    return "\n".join(b.rstrip("\n") for b in blocks)


def _strip_latex_preamble(code: str) -> tuple[str, bool]:
    """Drop everything outside \\begin{document}..\\end{document} if present."""
    m = re.search(r"\\begin\{document\}(.*?)(?:\\end\{document\}|$)", code, re.S)
    if m:
        return m.group(1).strip(), True
    # no document env: still drop stray class/package lines
    had = bool(re.search(r"^\s*\\(documentclass|usepackage)", code, re.M))
    body = re.sub(r"^\s*\\(documentclass|usepackage)[^\n]*$", "", code, flags=re.M)
    return body.strip(), had


def default_preamble() -> str:
    return asset_path("preamble.tex").read_text(encoding="utf-8")


@dataclass
class LatexFixState:
    """Which retryable fix classes have been spent."""

    wrapped_equation: bool = False
    imported: tuple[str, ...] = ()


def fix_latex(code: str, error: str | None = None,
              preamble: str | None = None,
              state: LatexFixState | None = None,
              ) -> tuple[str, list[str], LatexFixState]:
    """Staged LaTeX fixups: strip foreign preambles, inject the standard
    wrapper, and (driven by compiler diagnostics) wrap bare math in an
    equation environment or import a package named after an undefined
    environment. Each retryable class is applied at most once.

    Returns (document, fix_log entries, updated state). Raises Unfixable
    when a diagnostic is given but every applicable fix is exhausted.
    """
    state = state or LatexFixState()
    log: list[str] = []
    body, had_preamble = _strip_latex_preamble(code)
    if had_preamble:
        log.append("stripped-preamble")

    if error is not None:
        if _MATH_MODE_RE.search(error) and not state.wrapped_equation:
            state = LatexFixState(True, state.imported)
            log.append("wrapped-equation")
        else:
            env_match = _ENV_UNDEFINED_RE.search(error)
            if env_match and env_match.group(1) not in state.imported:
                env = env_match.group(1)
                state = LatexFixState(state.wrapped_equation,
                                      state.imported + (env,))
                log.append(f"imported-package:{env}")
            else:
                raise Unfixable(f"no applicable fix for: {error.strip()[:200]}")
    if state.wrapped_equation:
        body = "\\begin{equation}\n" + body + "\n\\end{equation}"

    head = (preamble if preamble is not None else default_preamble()).rstrip()
    for env in state.imported:
        head += f"\n\\usepackage{{{env}}}"
    document = head + "\n\\begin{document}\n" + body + "\n\\end{document}\n"
    log.append("injected-preamble")
    return document, log, state


def fix_lilypond(code: str) -> tuple[str, list[str]]:
    """Upgrade LilyPond source with convert-ly; degrades to a no-op warning
    when the converter is unavailable or fails."""
    binary = shutil.which("convert-ly")
    if binary is None:
        return code, ["convert-ly-unavailable"]
    try:
        proc = subprocess.run([binary, "-e", "-"], input=code, text=True,
                              capture_output=True, timeout=30)
    except (OSError, subprocess.TimeoutExpired) as exc:
        return code, [f"convert-ly-failed:{type(exc).__name__}"]
    if proc.returncode != 0 or not proc.stdout.strip():
        return code, ["convert-ly-failed:nonzero-exit"]
    return proc.stdout, ["convert-ly-applied"]


def parse_webpage_bundle(raw: str, sandbox_dir) -> dict[str, str]:
    """Parse a JSON file bundle and write it under ``sandbox_dir``.

    Accepts the documented array form [{"filename": ..., "content": ...}]
    (an object mapping names to contents is tolerated). Subdirectories are
    created as needed; anything resolving outside the sandbox is rejected.
    """
    text = strip_headers(raw)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"bundle is not valid JSON: {exc}") from exc
    if isinstance(doc, dict):
        entries = [{"filename": k, "content": v} for k, v in doc.items()]
    elif isinstance(doc, list):
        entries = doc
    else:
        raise MalformedJson("bundle must be a JSON array of file objects")

    sandbox = Path(sandbox_dir).resolve()
    sandbox.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    for entry in entries:
        if not isinstance(entry, dict) or "filename" not in entry \
                or "content" not in entry:
            raise MalformedJson("each entry needs 'filename' and 'content'")
        name = str(entry["filename"])
        content = entry["content"]
        if not isinstance(content, str):
            raise MalformedJson(f"content of {name!r} must be a string")
        if name.startswith(("/", "\\")) or re.match(r"^[A-Za-z]:", name):
            raise PathTraversal(f"absolute path in bundle: {name!r}")
        target = (sandbox / name).resolve()
        if sandbox != target and sandbox not in target.parents:
            raise PathTraversal(f"bundle entry escapes sandbox: {name!r}")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content, encoding="utf-8")
        files[name] = content
    return files


def post_process(raw_response: str, domain: str, workdir=None,
                 preamble: str | None = None) -> Structure:
    """Response text -> renderable Structure (fix trail recorded)."""
    code = strip_headers(raw_response)
    fix_log = []
    if code != raw_response:
        fix_log.append("stripped-fences")
    if domain == "latex":
        document, log, _ = fix_latex(code, preamble=preamble)
        body, _ = _strip_latex_preamble(code)
        return Structure(domain, raw_response, document, body, fix_log + log)
    if domain == "lilypond":
        converted, log = fix_lilypond(code)
        return Structure(domain, raw_response, converted, converted,
                         fix_log + log)
    if domain == "webpage":
        sandbox = Path(workdir or tempfile.mkdtemp(prefix="bundle-")) / "site"
        files = parse_webpage_bundle(raw_response, sandbox)
        canonical = json.dumps(files, sort_keys=True, indent=1)
        return Structure(domain, raw_response, files, canonical,
                         fix_log + [f"bundle-files:{len(files)}"],
                         bundle_dir=sandbox)
    raise ValueError(f"unknown domain {domain!r}")


def _run_renderer(spec: RendererSpec, input_path: str, output_path: str):
    """Run one renderer subprocess in its own process group; reap on timeout."""
    cmd = [arg.format(input=input_path, output=output_path)
           for arg in spec.command]
    start = time.monotonic()
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE,
                            stderr=subprocess.STDOUT, text=True,
                            start_new_session=True)
    try:
        out, _ = proc.communicate(timeout=spec.timeout_s)
        return proc.returncode, out or "", time.monotonic() - start, False
    except subprocess.TimeoutExpired:
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        out, _ = proc.communicate()
        return -1, (out or "") + "\n[timeout]", time.monotonic() - start, True


def render(structure: Structure, spec: RendererSpec, workdir=None) -> RenderOutcome:
    """Render a cleaned structure to a cropped image.

    LaTeX renders get up to two diagnostic-driven retries (equation
    wrapping, package import), each fix class at most once. Timeouts,
    nonzero exits and blank outputs all map to success=False with the
    renderer log retained.
    """
    tmp = Path(tempfile.mkdtemp(prefix="render-", dir=workdir))
    logs: list[str] = []
    started = time.monotonic()
    try:
        if structure.domain == "webpage":
            if structure.bundle_dir is None:
                return RenderOutcome(False, None, "no bundle directory", 0.0)
            input_path = str(structure.bundle_dir)
        else:
            suffix = ".tex" if structure.domain == "latex" else ".ly"
            input_path = str(tmp / f"doc{suffix}")
            Path(input_path).write_text(
                structure.cleaned if isinstance(structure.cleaned, str) else "",
                encoding="utf-8")
        output_path = str(tmp / "render.png")

        preamble = None
        if "preamble" in spec.assets:
            preamble = Path(spec.assets["preamble"]).read_text(encoding="utf-8")

        state = LatexFixState()
        attempts = 0
        while True:
            attempts += 1
            code, log_text, elapsed, timed_out = _run_renderer(
                spec, input_path, output_path)
            logs.append(f"[attempt {attempts} exit={code}]\n{log_text.strip()}")
            if timed_out:
                return RenderOutcome(False, None, _join(logs),
                                     time.monotonic() - started)
            if code == 0 and os.path.exists(output_path):
                break
            if structure.domain != "latex" or attempts >= 3:
                return RenderOutcome(False, None, _join(logs),
                                     time.monotonic() - started)
            try:
                document, fixes, state = fix_latex(
                    structure.extracted, error=log_text,
                    preamble=preamble, state=state)
            except Unfixable:
                return RenderOutcome(False, None, _join(logs),
                                     time.monotonic() - started)
            structure.cleaned = document
            structure.fix_log.extend(fixes)
            logs.append(f"[retry with fixes: {', '.join(fixes)}]")
            Path(input_path).write_text(document, encoding="utf-8")

        try:
            image = crop_to_content(load_image(output_path))
        except BlankImage:
            logs.append("[blank output]")
            return RenderOutcome(False, None, _join(logs),
                                 time.monotonic() - started)
        return RenderOutcome(True, image, _join(logs),
                             time.monotonic() - started)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _join(logs: list[str]) -> str:
    return "\n".join(logs)


PROBE_SNIPPETS = {
    "latex": "$E = m c^2$",
    "webpage": json.dumps([{
        "filename": "index.html",
        "content": "<html><body><h1>Renderer environment probe</h1>"
                   "<p>This page exists to verify that the configured webpage "
                   "renderer can produce a non-blank screenshot.</p>"
                   "<ul><li>first probe item</li><li>second probe item</li>"
                   "<li>third probe item</li></ul></body></html>"}]),
    "lilypond": "\\version \"2.24.0\"\n{ c'4 e'4 g'2 }\n",
}


def probe_renderer(domain: str, spec: RendererSpec, workdir=None) -> dict:
    """Render a known-good snippet; report pass/fail, duration, version."""
    version = None
    if any("renderscore" in part for part in spec.command):
        from importlib.metadata import version as pkg_version
        try:
            version = f"renderscore fallback {pkg_version('renderscore')}"
        except Exception:
            version = "renderscore fallback"
    else:
        try:
            vp = subprocess.run([spec.command[0], "--version"],
                                capture_output=True, text=True, timeout=10)
            if vp.returncode == 0 and vp.stdout:
                version = vp.stdout.strip().splitlines()[0]
        except (OSError, subprocess.TimeoutExpired, IndexError):
            pass
    try:
        structure = post_process(PROBE_SNIPPETS[domain], domain,
                                 workdir=workdir)
        outcome = render(structure, spec, workdir=workdir)
        cause = None if outcome.success else _failure_cause(outcome)
        return {"domain": domain, "ok": outcome.success, "version": version,
                "duration_s": round(outcome.duration, 3), "cause": cause}
    except Exception as exc:
        return {"domain": domain, "ok": False, "version": version,
                "duration_s": None, "cause": f"{type(exc).__name__}: {exc}"}


def _failure_cause(outcome: RenderOutcome) -> str:
    log = outcome.renderer_log
    if "[timeout]" in log:
        return "timeout"
    if "[blank output]" in log:
        return "blank output"
    tail = log.strip().splitlines()
    return tail[-1][:200] if tail else "renderer failed"
