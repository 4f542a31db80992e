import json
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renderscore.emd import ems
from renderscore.errors import MalformedJson, PathTraversal, Unfixable
from renderscore.images import normalize_pair, to_grayscale
from renderscore.rendering import (LatexFixState, RendererSpec,
                                   default_renderer_specs, fix_latex,
                                   fix_lilypond, load_renderer_specs,
                                   parse_webpage_bundle, post_process,
                                   probe_renderer, render, strip_headers)


class TestStripHeaders:
    def test_language_tagged_fence(self):
        assert strip_headers("```latex\nE=mc^2\n```") == "E=mc^2"

    def test_passthrough_without_fences(self):
        assert strip_headers("x+y") == "x+y"

    def test_multi_fence_concatenation(self):
        assert strip_headers("```\na\n```text```\nb\n```") == "a\nb"

    def test_surrounding_prose_dropped(self):
        raw = "Sure! Here is the code:\n```html\n<p>hi</p>\n```\nHope it helps."
        assert strip_headers(raw) == "<p>hi</p>"


class TestFixLatex:
    def test_strips_foreign_preamble(self):
        code = ("\\documentclass{minimal}\\usepackage{fancy}"
                "\\begin{document}$x$\\end{document}")
        doc, log, _ = fix_latex(code)
        assert "stripped-preamble" in log
        assert "fancy" not in doc
        assert doc.count("\\begin{document}") == 1
        assert "$x$" in doc

    def test_injects_wrapper(self):
        doc, log, _ = fix_latex("$y^2$")
        assert "injected-preamble" in log
        assert doc.startswith("\\documentclass")
        assert doc.rstrip().endswith("\\end{document}")

    def test_math_mode_diagnostic_wraps_equation(self):
        doc, log, state = fix_latex("x^2", error="! Missing $ inserted.")
        assert "wrapped-equation" in log
        assert "\\begin{equation}" in doc
        assert state.wrapped_equation

    def test_environment_diagnostic_imports_package(self):
        doc, log, state = fix_latex(
            "\\begin{algorithm}x\\end{algorithm}",
            error="LaTeX Error: Environment algorithm undefined.")
        assert "imported-package:algorithm" in log
        assert "\\usepackage{algorithm}" in doc
        assert "algorithm" in state.imported

    def test_each_fix_class_spent_once(self):
        _, _, state = fix_latex("x^2", error="math mode missing")
        with pytest.raises(Unfixable):
            fix_latex("x^2", error="math mode missing", state=state)

    def test_unknown_error_unfixable(self):
        with pytest.raises(Unfixable):
            fix_latex("x", error="Undefined control sequence \\wat")

    def test_custom_preamble_used(self):
        doc, _, _ = fix_latex("$x$", preamble="\\documentclass{article}")
        assert doc.startswith("\\documentclass{article}\n\\begin{document}")

    def test_wrap_preserved_across_calls_via_state(self):
        _, _, state = fix_latex("x^2", error="Missing $ inserted")
        doc, _, _ = fix_latex("x^2",
                              error="Environment tabu undefined",
                              state=state)
        assert "\\begin{equation}" in doc
        assert "\\usepackage{tabu}" in doc


class TestFixLilypond:
    def test_degrades_without_converter(self, monkeypatch):
        monkeypatch.setattr("shutil.which", lambda _: None)
        code, log = fix_lilypond("{ c'4 }")
        assert code == "{ c'4 }"
        assert log == ["convert-ly-unavailable"]


class TestParseWebpageBundle:
    def test_three_file_bundle(self, tmp_path):
        bundle = json.dumps([
            {"filename": "index.html", "content": "<html></html>"},
            {"filename": "style.css", "content": "body {}"},
            {"filename": "script.js", "content": "console.log(1);"},
        ])
        files = parse_webpage_bundle(bundle, tmp_path)
        assert set(files) == {"index.html", "style.css", "script.js"}
        assert (tmp_path / "script.js").read_text() == "console.log(1);"

    def test_single_file(self, tmp_path):
        files = parse_webpage_bundle(
            '[{"filename": "a.html", "content": "x"}]', tmp_path)
        assert files == {"a.html": "x"}

    def test_subdirectories_created(self, tmp_path):
        parse_webpage_bundle(
            '[{"filename": "css/deep/style.css", "content": "x"}]', tmp_path)
        assert (tmp_path / "css" / "deep" / "style.css").exists()

    def test_path_traversal_rejected(self, tmp_path):
        with pytest.raises(PathTraversal):
            parse_webpage_bundle(
                '[{"filename": "../evil", "content": "x"}]', tmp_path)

    def test_absolute_path_rejected(self, tmp_path):
        with pytest.raises(PathTraversal):
            parse_webpage_bundle(
                '[{"filename": "/etc/owned", "content": "x"}]', tmp_path)

    def test_malformed_json(self, tmp_path):
        with pytest.raises(MalformedJson):
            parse_webpage_bundle("here you go: files!", tmp_path)

    def test_wrong_shape(self, tmp_path):
        with pytest.raises(MalformedJson):
            parse_webpage_bundle('[{"name": "x.html"}]', tmp_path)

    def test_object_form_tolerated(self, tmp_path):
        files = parse_webpage_bundle('{"index.html": "<p>x</p>"}', tmp_path)
        assert files == {"index.html": "<p>x</p>"}

    @given(st.text(alphabet="abc./\\_-", min_size=1, max_size=24))
    @settings(max_examples=80, deadline=None)
    def test_never_writes_outside_sandbox(self, name):
        import tempfile
        from pathlib import Path
        with tempfile.TemporaryDirectory() as td:
            root = Path(td)
            inner = root / "inner"
            bundle = json.dumps([{"filename": name, "content": "x"}])
            try:
                parse_webpage_bundle(bundle, inner)
            except (PathTraversal, MalformedJson, OSError):
                return
            outside = [p for p in root.rglob("*")
                       if inner not in p.parents and p != inner]
            assert outside == []


class TestRendererSpec:
    def test_requires_placeholders(self):
        with pytest.raises(ValueError):
            RendererSpec("latex", ("pdflatex", "{input}"))

    def test_requires_positive_timeout(self):
        with pytest.raises(ValueError):
            RendererSpec("latex", ("x", "{input}", "{output}"), timeout_s=0)

    def test_load_from_json(self, tmp_path):
        path = tmp_path / "renderers.json"
        path.write_text(json.dumps({
            "_comment": "ignored",
            "latex": {"command": ["tool", "{input}", "{output}"],
                      "timeout_s": 5, "assets": {"preamble": "p.tex"}},
        }))
        specs = load_renderer_specs(path)
        assert set(specs) == {"latex"}
        assert specs["latex"].timeout_s == 5
        assert specs["latex"].assets["preamble"] == "p.tex"


class TestRender:
    def test_latex_success(self, renderer_specs, tmp_path):
        s = post_process("$a^2 + b^2 = c^2$", "latex", workdir=str(tmp_path))
        out = render(s, renderer_specs["latex"], workdir=str(tmp_path))
        assert out.success and out.image is not None
        assert out.image.width > 10 and out.image.height > 5

    def test_webpage_success(self, renderer_specs, tmp_path):
        bundle = json.dumps([{
            "filename": "index.html",
            "content": "<html><body><h1>Title text</h1><p>Body paragraph "
                       "with enough words to draw.</p></body></html>"}])
        s = post_process(bundle, "webpage", workdir=str(tmp_path))
        out = render(s, renderer_specs["webpage"], workdir=str(tmp_path))
        assert out.success

    def test_invalid_latex_fails_cleanly(self, renderer_specs, tmp_path):
        s = post_process("$\\frac{$", "latex", workdir=str(tmp_path))
        out = render(s, renderer_specs["latex"], workdir=str(tmp_path))
        assert not out.success
        assert out.image is None
        assert out.renderer_log

    def test_blank_webpage_fails(self, renderer_specs, tmp_path):
        bundle = json.dumps([{"filename": "index.html",
                              "content": "<html><body></body></html>"}])
        s = post_process(bundle, "webpage", workdir=str(tmp_path))
        out = render(s, renderer_specs["webpage"], workdir=str(tmp_path))
        assert not out.success

    def test_timeout_reaps_and_fails(self, tmp_path):
        slow = RendererSpec("latex", (
            sys.executable, "-c",
            "import sys, time; time.sleep(30); open(sys.argv[2], 'w')",
            "{input}", "{output}"), timeout_s=1.0)
        s = post_process("$x$", "latex", workdir=str(tmp_path))
        out = render(s, slow, workdir=str(tmp_path))
        assert not out.success
        assert "[timeout]" in out.renderer_log
        assert out.duration < 10

    def test_roundtrip_renders_are_stable(self, renderer_specs, tmp_path):
        code = "$\\sum_{k=0}^{n} \\binom{n}{k} = 2^n$"
        images = []
        for _ in range(2):
            s = post_process(code, "latex", workdir=str(tmp_path))
            out = render(s, renderer_specs["latex"], workdir=str(tmp_path))
            assert out.success
            images.append(out.image)
        ref, cand = normalize_pair(*images)
        score = ems(to_grayscale(ref), to_grayscale(cand))
        assert score.ems >= 0.99

    def test_probe_reports(self, renderer_specs):
        probe = probe_renderer("latex", renderer_specs["latex"])
        assert probe["ok"] and probe["domain"] == "latex"
        missing = RendererSpec("lilypond",
                               ("definitely-not-a-binary-xyz",
                                "{input}", "{output}"))
        probe = probe_renderer("lilypond", missing)
        assert not probe["ok"]
        assert probe["cause"]


class TestPostProcess:
    def test_latex_records_fence_strip(self, tmp_path):
        s = post_process("```latex\n$x$\n```", "latex", workdir=str(tmp_path))
        assert "stripped-fences" in s.fix_log
        assert s.extracted == "$x$"

    def test_webpage_bundle_dir_populated(self, tmp_path):
        bundle = '[{"filename": "index.html", "content": "<p>x</p>"}]'
        s = post_process(bundle, "webpage", workdir=str(tmp_path))
        assert s.bundle_dir is not None
        assert (s.bundle_dir / "index.html").exists()

    def test_unknown_domain(self, tmp_path):
        with pytest.raises(ValueError):
            post_process("x", "interpretive-dance", workdir=str(tmp_path))
