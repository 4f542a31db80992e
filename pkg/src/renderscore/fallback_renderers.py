"""Offline fallback renderers behind the standard command-template contract.

These exist so the full round-trip pipeline runs on machines without TeX,
LilyPond, or a browser. They are deliberately minimal and deterministic:

- ``latex``: renders the document body line by line with matplotlib's
  mathtext engine (math environments and inline ``$...$`` work; arbitrary
  TeX such as tabular or tikz does not and fails with a nonzero exit).
- ``webpage``: rasterizes the bundle's entry HTML onto a 1920x1080 canvas
  with a tiny block-layout engine (headings, paragraphs, list items, links,
  body background color). No JavaScript, no real CSS cascade.
- ``lilypond``: thin wrapper around a real ``lilypond`` binary when one is
  installed; exits nonzero otherwise.

Real deployments should point the renderer spec file at actual toolchains;
the evaluation core never depends on which renderer produced the PNG.
"""

from __future__ import annotations

import argparse
import html
import json
import os
import re
import shutil
import subprocess
import sys
import tempfile
from html.parser import HTMLParser
from pathlib import Path

_DISPLAY_ENVS = ("equation", "align", "gather", "eqnarray", "displaymath", "math")


def _extract_body(text: str) -> str:
    m = re.search(r"\\begin\{document\}(.*?)(\\end\{document\}|$)", text, re.S)
    body = m.group(1) if m else text
    # drop comments (unescaped %)
    lines = []
    for line in body.splitlines():
        out = re.split(r"(?<!\\)%", line, maxsplit=1)[0]
        lines.append(out)
    return "\n".join(lines)


def _body_to_lines(body: str) -> list[str]:
    """Flatten a LaTeX body into renderable lines of mathtext/plain text."""
    # display environments -> $...$ blocks
    for env in _DISPLAY_ENVS:
        pattern = re.compile(
            r"\\begin\{" + env + r"\*?\}(.*?)\\end\{" + env + r"\*?\}", re.S)
        body = pattern.sub(lambda m: "\n$" + " ".join(m.group(1).split()) + "$\n", body)
    body = re.sub(r"\\\[(.*?)\\\]", lambda m: "\n$" + " ".join(m.group(1).split()) + "$\n",
                  body, flags=re.S)
    body = re.sub(r"\$\$(.*?)\$\$", lambda m: "\n$" + " ".join(m.group(1).split()) + "$\n",
                  body, flags=re.S)
    lines = []
    for raw in body.split("\n"):
        line = raw.strip()
        if not line:
            continue
        # split alignment rows into separate lines, drop alignment anchors
        for part in re.split(r"\\\\", line):
            part = part.replace("&", " ").strip()
            if part and part != "$$":
                lines.append(part)
    return lines


def render_latex(tex_path: str, out_path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    text = Path(tex_path).read_text(encoding="utf-8", errors="replace")
    lines = _body_to_lines(_extract_body(text))
    if not lines:
        raise SystemExit("no renderable content in the document body")
    line_height = 0.45
    fig_h = max(1.0, line_height * (len(lines) + 1))
    fig = plt.figure(figsize=(10, fig_h), dpi=200)
    fig.patch.set_facecolor("white")
    try:
        for i, line in enumerate(lines):
            fig.text(0.03, 1.0 - (i + 0.8) * line_height / fig_h, line,
                     fontsize=16, va="center", ha="left", color="black")
        # tight bbox: emit content-sized output like a cropped TeX render
        fig.savefig(out_path, dpi=200, facecolor="white",
                    bbox_inches="tight", pad_inches=0.12)
    except Exception as exc:  # mathtext parse errors for unsupported TeX
        raise SystemExit(f"mathtext could not render the document: {exc}")
    finally:
        plt.close(fig)


class _TextCollector(HTMLParser):
    """Collects visible text blocks (tag, text) in document order."""

    _BLOCKS = {"h1", "h2", "h3", "h4", "h5", "h6", "p", "li", "title",
               "button", "a", "td", "th", "div", "span", "footer", "header"}
    _SKIP = {"script", "style", "head"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.blocks: list[tuple[str, str]] = []
        self._stack: list[str] = []
        self._skip_depth = 0
        self._styles: list[str] = []
        self._in_style = False

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP and tag != "head":
            self._skip_depth += 1
            self._in_style = tag == "style"
        self._stack.append(tag)

    def handle_endtag(self, tag):
        if tag in self._SKIP and tag != "head":
            self._skip_depth = max(0, self._skip_depth - 1)
            self._in_style = False
        while self._stack and self._stack[-1] != tag:
            self._stack.pop()
        if self._stack:
            self._stack.pop()

    def handle_data(self, data):
        if self._in_style:
            self._styles.append(data)
            return
        if self._skip_depth:
            return
        text = " ".join(data.split())
        if not text:
            return
        tag = next((t for t in reversed(self._stack) if t in self._BLOCKS), "p")
        self.blocks.append((tag, text))


def _body_background(css_text: str) -> str | None:
    m = re.search(r"(?:^|\}|\s)body\s*\{([^}]*)\}", css_text, re.S)
    if not m:
        return None
    m2 = re.search(r"background(?:-color)?\s*:\s*([^;}]+)", m.group(1))
    return m2.group(1).strip() if m2 else None


_FONT_SIZES = {"title": 40, "h1": 36, "h2": 30, "h3": 26, "h4": 23,
               "h5": 21, "h6": 20}


def render_webpage(bundle_dir: str, out_path: str,
                   viewport: tuple[int, int] = (1920, 1080)) -> None:
    from PIL import Image, ImageColor, ImageDraw, ImageFont
    from matplotlib import font_manager

    root = Path(bundle_dir)
    candidates = sorted(root.rglob("*.html")) + sorted(root.rglob("*.htm"))
    entry = next((p for p in candidates if p.name == "index.html"),
                 candidates[0] if candidates else None)
    if entry is None:
        raise SystemExit(f"no HTML entry point under {bundle_dir}")
    parser = _TextCollector()
    parser.feed(entry.read_text(encoding="utf-8", errors="replace"))

    css_text = "\n".join(parser._styles)
    for css in sorted(root.rglob("*.css")):
        css_text += "\n" + css.read_text(encoding="utf-8", errors="replace")
    background = (255, 255, 255)
    bg_decl = _body_background(css_text)
    if bg_decl:
        try:
            background = ImageColor.getrgb(bg_decl)[:3]
        except ValueError:
            pass

    regular = font_manager.findfont("DejaVu Sans")
    bold = font_manager.findfont(
        font_manager.FontProperties(family="DejaVu Sans", weight="bold"))
    img = Image.new("RGB", viewport, background)
    draw = ImageDraw.Draw(img)
    luminance = 0.299 * background[0] + 0.587 * background[1] + 0.114 * background[2]
    ink = (0, 0, 0) if luminance >= 128 else (255, 255, 255)

    margin, y = 48, 40
    for tag, text in parser.blocks:
        size = _FONT_SIZES.get(tag, 20)
        font_path = bold if tag in _FONT_SIZES else regular
        font = ImageFont.truetype(font_path, size)
        if tag == "li":
            text = "\u2022 " + text
        # greedy wrap to the viewport width
        words = text.split(" ")
        line = ""
        for word in words:
            trial = (line + " " + word).strip()
            if draw.textlength(trial, font=font) > viewport[0] - 2 * margin and line:
                draw.text((margin, y), line, fill=ink, font=font)
                y += int(size * 1.4)
                line = word
            else:
                line = trial
        if line:
            draw.text((margin, y), line, fill=ink, font=font)
            y += int(size * 1.6)
        if y > viewport[1] - margin:
            break
    img.save(out_path, format="PNG")


def render_lilypond(ly_path: str, out_path: str) -> None:
    binary = shutil.which("lilypond")
    if binary is None:
        raise SystemExit("lilypond binary not found on PATH")
    with tempfile.TemporaryDirectory(prefix="lilypond-") as tmp:
        stem = os.path.join(tmp, "score")
        proc = subprocess.run(
            [binary, "--png", "-dresolution=200", "-o", stem, ly_path],
            capture_output=True, text=True)
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            raise SystemExit(proc.returncode)
        produced = sorted(Path(tmp).glob("score*.png"))
        if not produced:
            raise SystemExit("lilypond produced no PNG output")
        shutil.move(str(produced[0]), out_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="renderscore-fallback-render")
    sub = parser.add_subparsers(dest="domain", required=True)
    for name in ("latex", "webpage", "lilypond"):
        p = sub.add_parser(name)
        p.add_argument("input")
        p.add_argument("output")
    args = parser.parse_args(argv)
    if args.domain == "latex":
        render_latex(args.input, args.output)
    elif args.domain == "webpage":
        render_webpage(args.input, args.output)
    else:
        render_lilypond(args.input, args.output)
    return 0


def latex_entry() -> int:
    return main(["latex", *sys.argv[1:]])


def webpage_entry() -> int:
    return main(["webpage", *sys.argv[1:]])


def lilypond_entry() -> int:
    return main(["lilypond", *sys.argv[1:]])


if __name__ == "__main__":
    sys.exit(main())
