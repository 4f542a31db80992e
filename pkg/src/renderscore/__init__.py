"""Round-trip structure evaluation toolkit.

Scores how faithfully a predicted structure (LaTeX, LilyPond source, or a
webpage bundle) reproduces an input image: the structure is post-processed
and rendered by an external renderer, and the rendered image is compared
against the input with a transport-based metric suite (block earth mover
similarity, classic EMD, pixel similarity, SSIM, activation-cosine
similarity) plus edit similarity on the structures themselves. A batch
harness aggregates per-model results into win-rate leaderboards.
"""

from .basic_metrics import (ActivationVector, ScoreSet, cis, edit_similarity,
                            levenshtein, load_activation_vector,
                            metric_correlations, pixel_similarity,
                            ssim_normalized)
from .emd import (EmsConfig, EmsResult, block_cost_matrix, classic_emd,
                  emd_block, emd_p, ems, grayscale_signature,
                  multidim_signature)
from .harness import (EvaluationRecord, Instance, build_leaderboard,
                      emit_report, evaluate_instances, fetch_completion,
                      load_manifest, make_provider, mean_win_rate,
                      read_records, rendering_success_rate, score_instance)
from .images import (GrayImage, ImageGrid, PatchGrid, content_hash,
                     crop_to_content, load_image, normalize_pair,
                     resize_to_bound, save_image, split_patches, to_grayscale)
from .rendering import (RendererSpec, RenderOutcome, Structure,
                        default_renderer_specs, fix_latex, fix_lilypond,
                        load_prompt, load_renderer_specs, parse_webpage_bundle,
                        post_process, probe_renderer, render, strip_headers)
from .transport import Signature, TransportPlan, emd_value, solve_transport

__version__ = "0.1.0"

__all__ = [
    "ActivationVector", "EmsConfig", "EmsResult", "EvaluationRecord",
    "GrayImage", "ImageGrid", "Instance", "PatchGrid", "RendererSpec",
    "RenderOutcome", "ScoreSet", "Signature", "Structure", "TransportPlan",
    "block_cost_matrix", "build_leaderboard", "cis", "classic_emd",
    "content_hash", "crop_to_content", "default_renderer_specs",
    "edit_similarity", "emd_block", "emd_p", "emd_value", "emit_report",
    "ems", "evaluate_instances", "fetch_completion", "fix_latex",
    "fix_lilypond", "grayscale_signature", "levenshtein", "load_activation_vector",
    "load_image", "load_manifest", "load_prompt", "load_renderer_specs",
    "make_provider", "mean_win_rate", "metric_correlations",
    "multidim_signature", "normalize_pair", "parse_webpage_bundle",
    "pixel_similarity", "post_process", "probe_renderer", "read_records",
    "render", "rendering_success_rate", "resize_to_bound", "save_image",
    "score_instance", "solve_transport", "split_patches", "ssim_normalized",
    "strip_headers", "to_grayscale",
]
