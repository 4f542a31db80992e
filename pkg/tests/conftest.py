import json
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from renderscore.images import GrayImage, ImageGrid


def gray(values) -> GrayImage:
    return GrayImage(np.asarray(values, dtype=np.float64))


def rgb(values) -> ImageGrid:
    arr = np.asarray(values, dtype=np.uint8)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return ImageGrid(arr)


def quantized_random(rng, shape):
    """Random gray image on the 256-level grid."""
    return np.round(rng.random(shape) * 255) / 255


def block_sparse_image(seed, size=128, grid=8, blocks=8, free_last_col=True):
    """Mostly-white image with dense content in a few whole patches.

    Content never occupies the last patch column, so a one-patch right
    shift keeps everything in frame.
    """
    rng = np.random.default_rng(seed)
    tile = size // grid
    img = np.ones((size, size))
    max_col = grid - 1 if free_last_col else grid
    cells = [(r, c) for r in range(grid) for c in range(max_col)]
    for pick in rng.choice(len(cells), size=blocks, replace=False):
        r, c = cells[int(pick)]
        img[r * tile:(r + 1) * tile, c * tile:(c + 1) * tile] = \
            rng.random((tile, tile)) < 0.5
    return np.round(img * 255) / 255, rng


@pytest.fixture(scope="session")
def renderer_specs():
    from renderscore.rendering import default_renderer_specs
    return default_renderer_specs()


@pytest.fixture(scope="session")
def rendered_equations(renderer_specs, tmp_path_factory):
    """The two reference equation renders used by several tests."""
    from renderscore.rendering import post_process, render

    td = tmp_path_factory.mktemp("figs")
    out = {}
    for key, code in (("plain", "$z^2-1$"), ("grouped", "$z^{2-1}$")):
        s = post_process(code, "latex", workdir=str(td))
        outcome = render(s, renderer_specs["latex"], workdir=str(td))
        assert outcome.success, outcome.renderer_log
        out[key] = outcome.image
    return out


def write_echo_provider(tmp_path: Path, truth: dict) -> str:
    """A provider subprocess that answers with the ground-truth structure
    for the image it is shown (keyed by absolute image path)."""
    truth_file = tmp_path / "truth.json"
    truth_file.write_text(json.dumps(truth), encoding="utf-8")
    script = tmp_path / "echo_provider.py"
    script.write_text(textwrap.dedent(f"""
        import json, sys
        payload = json.load(sys.stdin)
        mapping = json.load(open({str(truth_file)!r}))
        sys.stdout.write(mapping[payload["image"]])
    """), encoding="utf-8")
    return f"{sys.executable} {script}"


LATEX_FIXTURES = [
    "$\\int_0^1 x^2\\,dx = \\frac{1}{3}$",
    "$e^{i\\pi} + 1 = 0$",
    "$\\sum_{k=1}^{n} k = \\frac{n(n+1)}{2}$",
    "\\begin{equation}a^2 + b^2 = c^2\\end{equation}",
    "$\\nabla \\cdot \\vec{E} = \\frac{\\rho}{\\varepsilon_0}$",
    "\\[ f(x) = \\alpha x^3 - \\beta x + \\gamma \\]",
    "$\\lim_{x \\to 0} \\frac{\\sin x}{x} = 1$",
    "$\\binom{n}{k} = \\frac{n!}{k!(n-k)!}$",
    "$\\sqrt{a^2 + b^2} \\leq |a| + |b|$",
    "$\\mathbf{A}\\mathbf{x} = \\lambda \\mathbf{x}$",
]

WEBPAGE_FIXTURES = [
    json.dumps([
        {"filename": "index.html",
         "content": "<html><head><title>Landing</title></head><body>"
                    "<h1>Product Landing</h1>"
                    "<p>A short paragraph describing what the product does "
                    "and why anyone would care about it.</p>"
                    "<ul><li>fast setup</li><li>clear pricing</li>"
                    "<li>no lock-in</li></ul></body></html>"},
        {"filename": "style.css",
         "content": "body { background-color: white; }"},
    ]),
    json.dumps([
        {"filename": "index.html",
         "content": "<html><body><h1>Weekly Notes</h1>"
                    "<h2>Monday</h2><p>Wrote the quarterly summary and "
                    "cleaned up the backlog of review requests.</p>"
                    "<h2>Tuesday</h2><p>Paired on the ingestion bug; root "
                    "cause was a stale cache key.</p></body></html>"},
    ]),
    json.dumps([
        {"filename": "index.html",
         "content": "<html><head><style>body { background-color: "
                    "lightblue; }</style></head><body>"
                    "<h1>Colored Background</h1>"
                    "<p>This page sets a body background color through an "
                    "inline style block.</p>"
                    "<ul><li>alpha</li><li>beta</li><li>gamma</li></ul>"
                    "</body></html>"},
    ]),
]


def build_roundtrip_manifest(tmp_path: Path, renderer_specs,
                             latex_codes=None, webpage_bundles=None):
    """Render ground-truth structures into instance images and write a
    manifest plus an echo-provider truth map."""
    from renderscore.images import save_image
    from renderscore.rendering import post_process, render

    latex_codes = LATEX_FIXTURES if latex_codes is None else latex_codes
    webpage_bundles = WEBPAGE_FIXTURES if webpage_bundles is None else webpage_bundles
    img_dir = tmp_path / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    truth = {}
    for i, code in enumerate(latex_codes):
        s = post_process(code, "latex", workdir=str(tmp_path))
        outcome = render(s, renderer_specs["latex"], workdir=str(tmp_path))
        assert outcome.success, outcome.renderer_log
        path = img_dir / f"latex{i}.png"
        save_image(outcome.image, path)
        lines.append({"id": f"latex{i}", "domain": "latex",
                      "subdomain": "equation", "image": f"images/latex{i}.png",
                      "structure": code})
        truth[str(path.resolve())] = code
    for i, bundle in enumerate(webpage_bundles):
        s = post_process(bundle, "webpage", workdir=str(tmp_path / f"gt{i}"))
        outcome = render(s, renderer_specs["webpage"], workdir=str(tmp_path))
        assert outcome.success, outcome.renderer_log
        path = img_dir / f"web{i}.png"
        save_image(outcome.image, path)
        lines.append({"id": f"web{i}", "domain": "webpage",
                      "subdomain": "html", "image": f"images/web{i}.png",
                      "structure": bundle})
        truth[str(path.resolve())] = bundle
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("\n".join(json.dumps(l) for l in lines) + "\n",
                        encoding="utf-8")
    return manifest, truth
