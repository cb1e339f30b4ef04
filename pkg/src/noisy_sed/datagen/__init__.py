"""Deterministic synthetic soundscapes standing in for real recordings."""
from .folds import make_folds, split_fold
from .manifest import (
    MANIFEST_HEADER, SUBSETS, ManifestError, ManifestRow, format_manifest, parse_manifest, read_manifest,
    write_manifest,
)
from .scene import (
    Dataset, EventTemplate, SceneSpec, SynthClip, class_names_of, default_templates, generate,
    load_dataset_info, pink_noise, read_dataset, render_event, signature, subset_of, synth_clip,
)

__all__ = [
    "make_folds", "split_fold", "MANIFEST_HEADER", "SUBSETS", "ManifestError", "ManifestRow",
    "format_manifest", "parse_manifest", "read_manifest", "write_manifest", "Dataset", "EventTemplate",
    "SceneSpec", "SynthClip", "class_names_of", "default_templates", "generate", "load_dataset_info",
    "pink_noise", "read_dataset", "render_event", "signature", "subset_of", "synth_clip",
]
