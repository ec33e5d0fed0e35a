"""Self-distilled region proposals on synthetic attention data."""

from ._sdrpn import (
    GridError,
    assign_labels,
    box_iou,
    encode_grid,
    generate_dataset,
    hash_tree,
    postprocess,
    predict,
    pseudo_label,
    read_grid,
    remove_sink_tokens,
    roi_logits,
    train,
    verify_theory,
    write_grid,
)

__all__ = [
    "GridError",
    "assign_labels",
    "box_iou",
    "encode_grid",
    "generate_dataset",
    "hash_tree",
    "postprocess",
    "predict",
    "pseudo_label",
    "read_grid",
    "remove_sink_tokens",
    "roi_logits",
    "train",
    "verify_theory",
    "write_grid",
]
