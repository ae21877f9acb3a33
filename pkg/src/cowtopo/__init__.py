"""Topology-aware evaluation of Circle of Willis multiclass segmentations."""

from .labels import CLASS_NAMES, DEFAULT_LABEL_MAP, GROUP2, LabelMap, load_label_map
from .metrics import CaseMetrics, ClassScore, betti0, cl_dice, dice, evaluate_case, per_class_dice
from .phantom import (
    Break,
    CrossoverSwap,
    DilateErode,
    DropClass,
    FloatingBlob,
    PhantomSpec,
    apply_corruption,
    expected_graph,
    generate_phantom,
    spec_lattice,
)
from .ranking import Column, Leaderboard, rank_teams, rank_teams_per_case
from .skeleton import skeletonize
from .topology import (
    ComponentGraph,
    DetectionCounts,
    MatchReport,
    Outcome,
    classify_variants,
    count_detections,
    detect_class,
    extract_component_graph,
    match_anterior,
    match_case,
    match_posterior,
    precision_recall,
)
from .volume import LabelVolume, IntensityVolume, RoiBox, Volume, crop_to_roi, read_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "apply_corruption",
    "betti0",
    "Break",
    "CaseMetrics",
    "cl_dice",
    "CLASS_NAMES",
    "classify_variants",
    "ClassScore",
    "Column",
    "ComponentGraph",
    "count_detections",
    "crop_to_roi",
    "CrossoverSwap",
    "DEFAULT_LABEL_MAP",
    "detect_class",
    "DetectionCounts",
    "dice",
    "DilateErode",
    "DropClass",
    "evaluate_case",
    "expected_graph",
    "extract_component_graph",
    "FloatingBlob",
    "generate_phantom",
    "GROUP2",
    "IntensityVolume",
    "LabelMap",
    "LabelVolume",
    "Leaderboard",
    "load_label_map",
    "match_anterior",
    "match_case",
    "match_posterior",
    "MatchReport",
    "Outcome",
    "per_class_dice",
    "PhantomSpec",
    "precision_recall",
    "rank_teams",
    "rank_teams_per_case",
    "read_volume",
    "RoiBox",
    "skeletonize",
    "spec_lattice",
    "Volume",
    "write_volume",
]
