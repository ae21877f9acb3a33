"""Batch evaluation, leaderboards, topology reports and phantom fixtures.

Every batch runs one worker call per case. Workers share nothing and never
raise: a failing case comes back as a flagged record. Reports are assembled
by the parent after sorting by case id, so output files are byte-identical
across runs and worker counts.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .labels import CLASS_NAMES, DEFAULT_LABEL_MAP, GROUP2, LabelMap
from .metrics import CaseMetrics, class_overlap, evaluate_case
from .phantom import (
    Break,
    CrossoverSwap,
    DilateErode,
    DropClass,
    FloatingBlob,
    PhantomSpec,
    apply_corruption,
    corruption_to_dict,
    generate_phantom,
)
from .ranking import TASK_COLUMNS, Column, Leaderboard, rank_teams, rank_teams_per_case
from .topology import (
    Anterior,
    DetectionCounts,
    MatchReport,
    Outcome,
    Posterior,
    VariantDiagnosis,
    aggregate_match_rates,
    classify_outcome,
    classify_variants,
    extract_component_graph,
    match_case,
    precision_recall,
)
from .volume import RoiBox, crop_to_roi, read_roi_file, read_volume, write_roi_file, write_volume

SCHEMA_VERSION = 1
METRICS_SCHEMA = "cowtopo.case-metrics"
TOPOLOGY_SCHEMA = "cowtopo.topology-report"
LEADERBOARD_SCHEMA = "cowtopo.leaderboard"
VOLUME_SUFFIXES = (".nii.gz", ".nii")


class InvocationError(ValueError):
    """Bad arguments or inputs that make the whole command meaningless."""


@dataclass(frozen=True)
class Settings:
    task: str = "multiclass"
    connectivity: int = 26
    adjacency: int = 26
    label_map: LabelMap = DEFAULT_LABEL_MAP
    zero_overlap: str = "fn"
    ipsilateral: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.task not in ("binary", "multiclass"):
            raise InvocationError(f"task must be 'binary' or 'multiclass', not {self.task!r}")
        for name in ("connectivity", "adjacency"):
            if getattr(self, name) not in (6, 18, 26):
                raise InvocationError(f"{name} must be 6, 18 or 26")
        if self.zero_overlap not in ("fn", "fn+fp"):
            raise InvocationError("zero_overlap must be 'fn' or 'fn+fp'")
        if self.jobs < 1:
            raise InvocationError("jobs must be at least 1")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "connectivity": self.connectivity,
            "adjacency": self.adjacency,
            "zero_overlap": self.zero_overlap,
            "ipsilateral": self.ipsilateral,
            "labels": self.label_map.to_dict()["labels"],
        }


# ----------------------------------------------------------------------------
# case discovery and the worker pool


def case_id_of(path: Path) -> str | None:
    for suffix in VOLUME_SUFFIXES:
        if path.name.endswith(suffix):
            return path.name[: -len(suffix)]
    return None


def list_cases(directory) -> dict[str, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InvocationError(f"{directory} is not a directory")
    cases = {}
    for path in sorted(directory.iterdir()):
        case_id = case_id_of(path)
        if case_id is None:
            continue
        if case_id in cases:
            raise InvocationError(f"case {case_id} appears twice in {directory}")
        cases[case_id] = path
    return cases


def infer_modality(case_id: str) -> str | None:
    """'CTA' or 'MRA' from id tokens such as ``topcow_ct_001`` or ``case-mra-7``."""
    tokens = set(re.split(r"[-_.\s]+", case_id.lower()))
    if tokens & {"ct", "cta"}:
        return "CTA"
    if tokens & {"mr", "mra"}:
        return "MRA"
    return None


def pair_cases(gt_dir, pred_dir):
    """Aligned ``(case, gt path, pred path)`` triples plus failures for unpaired ids."""
    gt, pred = list_cases(gt_dir), list_cases(pred_dir)
    if not gt:
        raise InvocationError(f"no NIfTI volumes in {gt_dir}")
    items, failures = [], []
    for case_id in sorted(gt.keys() | pred.keys()):
        if case_id not in pred:
            failures.append(_failure(case_id, "no prediction for this case"))
        elif case_id not in gt:
            failures.append(_failure(case_id, "prediction has no ground truth"))
        else:
            items.append((case_id, gt[case_id], pred[case_id]))
    return items, failures


def _failure(case_id: str, message: str) -> dict:
    return {"case": case_id, "error": message}


def run_cases(worker, items, jobs: int = 1) -> list:
    """Apply ``worker`` to every item, in a process pool when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [worker(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(worker, items))


def _load_pair(gt_path, pred_path, roi: RoiBox | None):
    gt, pred = read_volume(gt_path), read_volume(pred_path)
    if gt.dims != pred.dims:
        raise ValueError(f"dims mismatch: ground truth {gt.dims} vs prediction {pred.dims}")
    if roi is not None:
        gt, pred = crop_to_roi(gt, roi), crop_to_roi(pred, roi)
    return gt, pred


def _roi_for(case_id, rois):
    if rois is None:
        return None
    if case_id not in rois:
        raise ValueError("no ROI record for this case")
    return rois[case_id]


def _evaluate_worker(item, settings: Settings, rois):
    case_id, gt_path, pred_path = item
    try:
        gt, pred = _load_pair(gt_path, pred_path, _roi_for(case_id, rois))
        m = evaluate_case(
            gt,
            pred,
            label_map=settings.label_map,
            task=settings.task,
            connectivity=settings.connectivity,
            case_id=case_id,
            modality=infer_modality(case_id),
        )
        return m.to_record()
    except Exception as exc:  # isolate the case, keep the batch going
        return _failure(case_id, f"{type(exc).__name__}: {exc}")


# ----------------------------------------------------------------------------
# serialization


def _plain(obj):
    """JSON-ready copy: numpy scalars unwrapped, NaN turned into ``None``."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def dump_json(obj, path) -> None:
    text = json.dumps(_plain(obj), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    return str(value)


def write_table(path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row.get(col)) for col in header])


def _columns(records: list[dict]) -> list[str]:
    cols: dict[str, None] = {}
    for rec in records:
        for key in rec:
            cols.setdefault(key, None)
    return list(cols)


def aggregate_records(records: list[dict]) -> dict[str, dict]:
    """Mean, population standard deviation and count of every numeric column.

    Missing values (``None``) are skipped, so a class absent from some cases
    is averaged over the cases that contain it.
    """
    out = {}
    for col in _columns(records):
        values = [r.get(col) for r in records]
        values = [v for v in values if v is not None]
        if not values or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            continue
        arr = np.asarray(values, dtype=float)
        out[col] = {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(values)}
    return out


@dataclass
class TeamResult:
    team: str
    task: str
    cases: list[CaseMetrics] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    @property
    def records(self) -> list[dict]:
        return [m.to_record() for m in sorted(self.cases, key=lambda m: m.case_id)]

    @property
    def aggregate(self) -> dict[str, dict]:
        return aggregate_records(self.records)

    def means(self) -> dict[str, float]:
        return {col: agg["mean"] for col, agg in self.aggregate.items()}

    def to_report(self) -> dict:
        return {
            "schema": METRICS_SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "team": self.team,
            "task": self.task,
            "settings": self.settings,
            "cases": self.records,
            "failures": sorted(self.failures, key=lambda f: f["case"]),
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_report(cls, report: dict) -> "TeamResult":
        if report.get("schema") != METRICS_SCHEMA:
            raise InvocationError(f"not a case-metrics report (schema {report.get('schema')!r})")
        if report.get("schema_version") != SCHEMA_VERSION:
            raise InvocationError(f"unsupported schema version {report.get('schema_version')}")
        cases = [CaseMetrics.from_record(r) for r in report["cases"]]
        return cls(report["team"], report["task"], cases, report.get("failures", []), report.get("settings", {}))

    @classmethod
    def load(cls, path) -> "TeamResult":
        with open(path) as fh:
            return cls.from_report(json.load(fh))


# ----------------------------------------------------------------------------
# evaluate


def cmd_evaluate(gt_dir, pred_dir, out_dir, *, roi_file=None, settings: Settings = Settings(), team=None, figures=True):
    """Score every prediction against its ground truth.

    Writes ``metrics.json`` (schema-versioned, one flat record per case),
    ``metrics.csv`` and, with ``figures``, ``metrics.png`` into ``out_dir``.
    Returns the team result and the exit status (1 if any case failed).
    """
    items, failures = pair_cases(gt_dir, pred_dir)
    rois = read_roi_file(roi_file) if roi_file else None
    results = run_cases(partial(_evaluate_worker, settings=settings, rois=rois), items, settings.jobs)
    cases = []
    for rec in results:
        if "error" in rec:
            failures.append(rec)
        else:
            cases.append(CaseMetrics.from_record(rec))
    result = TeamResult(team or Path(pred_dir).resolve().name, settings.task, cases, failures, settings.to_dict())

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = result.to_report()
    dump_json(report, out_dir / "metrics.json")
    rows = sorted(report["cases"] + report["failures"], key=lambda r: r["case"])
    header = _columns(report["cases"]) or ["case"]
    write_table(out_dir / "metrics.csv", header + ["error"], rows)
    if figures and report["cases"]:
        from .plotting import plot_metric_distributions

        cols = [c.name for c in TASK_COLUMNS[settings.task]]
        plot_metric_distributions(report["cases"], cols, out_dir / "metrics.png")
    return result, 1 if failures else 0


# ----------------------------------------------------------------------------
# rank


def cmd_rank(report_paths, out_dir=None, *, columns=None, per_case=False, figures=True) -> Leaderboard:
    """Rank teams from their evaluation reports, rank-then-average."""
    teams = [TeamResult.load(p) for p in report_paths]
    names = [t.team for t in teams]
    if len(set(names)) != len(names):
        raise InvocationError(f"duplicate team names in reports: {names}")
    tasks = {t.task for t in teams}
    if columns is None:
        if len(tasks) != 1:
            raise InvocationError(f"reports mix tasks {sorted(tasks)}; pass explicit columns")
        columns = TASK_COLUMNS[tasks.pop()]
    columns = [c if isinstance(c, Column) else Column.parse(c) for c in columns]
    try:
        if per_case:
            case_scores = {t.team: {r["case"]: r for r in t.records} for t in teams}
            board = rank_teams_per_case(case_scores, columns)
        else:
            board = rank_teams({t.team: t.means() for t in teams}, columns)
    except (KeyError, ValueError) as exc:
        raise InvocationError(str(exc).strip("'\"")) from None

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = board.to_records()
        dump_json(
            {
                "schema": LEADERBOARD_SCHEMA,
                "schema_version": SCHEMA_VERSION,
                "mode": "per-case" if per_case else "aggregate",
                "columns": [str(c) for c in columns],
                "scores": {t.team: {c.name: t.means().get(c.name) for c in columns} for t in sorted(teams, key=lambda t: t.team)},
                "leaderboard": rows,
            },
            out_dir / "leaderboard.json",
        )
        write_table(out_dir / "leaderboard.csv", list(rows[0]), rows)
        if figures:
            from .plotting import plot_leaderboard

            plot_leaderboard(rows, out_dir / "leaderboard.png")
    return board


# ----------------------------------------------------------------------------
# topology report


def _topology_worker(item, settings: Settings, rois):
    case_id, gt_path, pred_path = item
    try:
        gt, pred = _load_pair(gt_path, pred_path, _roi_for(case_id, rois))
        lm = settings.label_map
        overlap = class_overlap(gt, pred, lm)
        outcomes = {name: classify_outcome(d, n_gt > 0).value for name, (d, n_gt, _) in overlap.items()}
        # both hold the class but never overlap: a miss and a false alarm at once
        disjoint = [name for name, (d, n_gt, n_pred) in overlap.items() if d == 0 and n_gt and n_pred]
        gt_graph = extract_component_graph(gt, lm, settings.connectivity, settings.adjacency)
        pred_graph = extract_component_graph(pred, lm, settings.connectivity, settings.adjacency)
        diagnosis = classify_variants(gt_graph)
        report = match_case(case_id, gt_graph, pred_graph, settings.ipsilateral)
        return {
            "case": case_id,
            "outcomes": outcomes,
            "disjoint": disjoint,
            "dice": {name: d for name, (d, _, _) in overlap.items()},
            "anterior_variant": diagnosis.anterior.value,
            "posterior_variant": diagnosis.posterior.value,
            "anterior_failed": report.anterior_failed,
            "posterior_failed": report.posterior_failed,
        }
    except Exception as exc:
        return _failure(case_id, f"{type(exc).__name__}: {exc}")


@dataclass
class TopologyReport:
    cases: list[dict]
    failures: list[dict]
    detection: DetectionCounts
    precision_recall: dict[str, tuple[float, float]]
    matches: list[MatchReport]
    match_rates: dict
    group_dice: dict[int, dict]


def build_topology_report(results: list[dict], zero_overlap: str = "fn") -> TopologyReport:
    cases = sorted((r for r in results if "error" not in r), key=lambda r: r["case"])
    failures = sorted((r for r in results if "error" in r), key=lambda r: r["case"])
    counts = DetectionCounts()
    pooled = {1: [], 2: []}
    for rec in cases:
        for name in CLASS_NAMES:
            counts.add(name, Outcome(rec["outcomes"][name]))
            d = rec["dice"][name]
            if d is not None:
                pooled[2 if name in GROUP2 else 1].append(d)
        if zero_overlap == "fn+fp":
            for name in rec["disjoint"]:
                counts.add(name, Outcome.FP)
    matches = [MatchReport(r["case"], r["anterior_failed"], r["posterior_failed"]) for r in cases]
    diagnoses = [VariantDiagnosis(Anterior(r["anterior_variant"]), Posterior(r["posterior_variant"])) for r in cases]
    rates = aggregate_match_rates(matches, diagnoses) if cases else {"anterior": {}, "posterior": {}}
    group_dice = {
        g: {"pairs": len(v), "mean_dice": float(np.mean(v)) if v else None} for g, v in sorted(pooled.items())
    }
    return TopologyReport(cases, failures, counts, precision_recall(counts), matches, rates, group_dice)


def cmd_topology_report(gt_dir, pred_dir, out_dir, *, roi_file=None, settings: Settings = Settings(), figures=True):
    """Detection, variant matching and group Dice over a batch.

    Writes ``topology.json`` plus ``detection.csv``, ``matching.csv``,
    ``match_rates.csv`` and ``group_dice.csv`` and, with ``figures``, the
    matching PNG charts. Undefined precision or recall is written as
    ``nan`` in tables and ``null`` in JSON.
    """
    items, failures = pair_cases(gt_dir, pred_dir)
    rois = read_roi_file(roi_file) if roi_file else None
    results = run_cases(partial(_topology_worker, settings=settings, rois=rois), items, settings.jobs)
    rep = build_topology_report(results + failures, settings.zero_overlap)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    detection_rows = []
    for name in CLASS_NAMES:
        precision, recall = rep.precision_recall.get(name, (math.nan, math.nan))
        row = {"class": name, "group": 2 if name in GROUP2 else 1}
        row.update({o.value: rep.detection.get(name, o) for o in Outcome})
        row.update(precision=precision, recall=recall)
        detection_rows.append(row)
    matching_rows = [
        {
            "case": r["case"],
            "anterior_variant": r["anterior_variant"],
            "posterior_variant": r["posterior_variant"],
            "anterior_matched": not r["anterior_failed"],
            "posterior_matched": not r["posterior_failed"],
            "failed_conditions": r["anterior_failed"] + r["posterior_failed"],
        }
        for r in rep.cases
    ]
    rate_rows = [
        {"axis": axis, "variant": variant, "matched": mr.matched, "total": mr.total, "rate": mr.fraction}
        for axis, variants in rep.match_rates.items()
        for variant, mr in variants.items()
    ]
    group_rows = [{"group": g, **v} for g, v in rep.group_dice.items()]

    dump_json(
        {
            "schema": TOPOLOGY_SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "settings": settings.to_dict(),
            "detection": detection_rows,
            "matching": matching_rows,
            "match_rates": rate_rows,
            "group_dice": group_rows,
            "failures": rep.failures,
        },
        out_dir / "topology.json",
    )
    write_table(out_dir / "detection.csv", list(detection_rows[0]), detection_rows)
    write_table(
        out_dir / "matching.csv",
        ["case", "anterior_variant", "posterior_variant", "anterior_matched", "posterior_matched", "failed_conditions"],
        matching_rows,
    )
    write_table(out_dir / "match_rates.csv", ["axis", "variant", "matched", "total", "rate"], rate_rows)
    write_table(out_dir / "group_dice.csv", ["group", "pairs", "mean_dice"], group_rows)
    if figures and rep.cases:
        from .plotting import plot_detection, plot_group_dice, plot_match_rates

        plot_detection({n: rep.precision_recall[n] for n in CLASS_NAMES if n in GROUP2}, out_dir / "detection.png")
        plot_match_rates(
            {axis: {v: (mr.matched, mr.total) for v, mr in vs.items()} for axis, vs in rep.match_rates.items()},
            out_dir / "match_rates.png",
        )
        plot_group_dice({g: v["mean_dice"] for g, v in rep.group_dice.items()}, out_dir / "group_dice.png")
    return rep, 1 if rep.failures else 0


# ----------------------------------------------------------------------------
# phantom fixtures


def _floats(text: str, n: int) -> tuple:
    parts = text.split(",")
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def parse_corruption(text: str):
    """Parse a corruption from its command-line form.

    ``break:CLS[:GAP_MM[:POSITION]]``, ``drop:CLS``,
    ``blob:CLS[:RADIUS_MM[:DX,DY,DZ]]``, ``swap:A:B:X,Y,Z:SX,SY,SZ``,
    ``dilate:CLS:STEPS`` (negative steps erode).
    """
    kind, *args = text.split(":")
    try:
        if kind == "break" and 1 <= len(args) <= 3:
            return Break(args[0], *(float(a) for a in args[1:]))
        if kind == "drop" and len(args) == 1:
            return DropClass(args[0])
        if kind == "blob" and 1 <= len(args) <= 3:
            radius = float(args[1]) if len(args) > 1 else 1.0
            offset = _floats(args[2], 3) if len(args) > 2 else (0.0, 0.0, 0.0)
            return FloatingBlob(args[0], radius, offset)
        if kind == "swap" and len(args) == 4:
            lo = tuple(int(v) for v in _floats(args[2], 3))
            size = tuple(int(v) for v in _floats(args[3], 3))
            return CrossoverSwap(args[0], args[1], RoiBox(lo, size))
        if kind == "dilate" and len(args) == 2:
            return DilateErode(args[0], int(args[1]))
    except ValueError as exc:
        raise ValueError(f"bad corruption {text!r}: {exc}") from None
    raise ValueError(f"bad corruption {text!r}")


def cmd_phantom(out_dir, specs: dict[str, PhantomSpec], corruptions=(), label_map: LabelMap | None = None) -> list[Path]:
    """Write phantom fixtures for ``specs`` (case id -> spec) into ``out_dir``.

    Per case: ``gt/ID.nii.gz``, ``graphs/ID.json`` and ``specs/ID.json``;
    ``roi.jsonl`` gathers one ROI record per case, merged with any records
    already there. With corruptions, ``pred/ID.nii.gz`` holds the ground
    truth with every corruption applied in order. ``out_dir`` must exist.
    """
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise InvocationError(f"output directory {out_dir} does not exist")
    if not os.access(out_dir, os.W_OK):
        raise InvocationError(f"output directory {out_dir} is not writable")
    label_map = label_map or DEFAULT_LABEL_MAP
    corruptions = list(corruptions)

    # build everything first so that a bad spec or corruption writes nothing
    built = {}
    for case_id, spec in sorted(specs.items()):
        gt, roi, graph = generate_phantom(spec, label_map)
        pred = gt
        for c in corruptions:
            pred = apply_corruption(pred, c, label_map)
        built[case_id] = (spec, gt, roi, graph, pred)

    written = []
    for sub in ("gt", "graphs", "specs") + (("pred",) if corruptions else ()):
        (out_dir / sub).mkdir(exist_ok=True)
    roi_path = out_dir / "roi.jsonl"
    rois = read_roi_file(roi_path) if roi_path.exists() else {}
    for case_id, (spec, gt, roi, graph, pred) in built.items():
        write_volume(gt, out_dir / "gt" / f"{case_id}.nii.gz")
        dump_json(graph.to_dict(), out_dir / "graphs" / f"{case_id}.json")
        dump_json(
            {"spec": spec.to_dict(), "corruptions": [corruption_to_dict(c) for c in corruptions]},
            out_dir / "specs" / f"{case_id}.json",
        )
        written += [out_dir / "gt" / f"{case_id}.nii.gz", out_dir / "graphs" / f"{case_id}.json",
                    out_dir / "specs" / f"{case_id}.json"]
        if corruptions:
            write_volume(pred, out_dir / "pred" / f"{case_id}.nii.gz")
            written.append(out_dir / "pred" / f"{case_id}.nii.gz")
        rois[case_id] = roi
    write_roi_file(roi_path, rois)
    written.append(roi_path)
    return written
