"""Mesh evaluation metrics: Chamfer, point-to-surface accuracy/completeness,
and normal consistency, all via seeded area-weighted sampling and exact
closest-point queries. Meshes are compared in the shared world frame (no
alignment step); Chamfer is reported as the mean of the two directional means.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyInputError
from .mesh import TriMesh, closest_points, sample_surface

CHAMFER_POOLING = "mean-of-directional-means"


@dataclass
class MetricConfig:
    sample_count: int = 100_000
    seed: int = 0
    bidirectional_normals: bool = True

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "seed": self.seed,
            "bidirectional_normals": self.bidirectional_normals,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class MetricReport:
    chamfer_mm: float
    p2s_accuracy_mm: float
    p2s_completeness_mm: float
    normal_consistency_deg: float
    sample_count: int
    seed: int
    chamfer_pooling: str = CHAMFER_POOLING

    def to_dict(self) -> dict:
        return {
            "chamfer_mm": self.chamfer_mm,
            "p2s_accuracy_mm": self.p2s_accuracy_mm,
            "p2s_completeness_mm": self.p2s_completeness_mm,
            "normal_consistency_deg": self.normal_consistency_deg,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "chamfer_pooling": self.chamfer_pooling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "MetricReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def values(self):
        return (self.chamfer_mm, self.p2s_accuracy_mm, self.p2s_completeness_mm,
                self.normal_consistency_deg)


def _check(rec: TriMesh, gt: TriMesh, n: int):
    if rec.n_triangles == 0 or gt.n_triangles == 0:
        raise EmptyInputError("both meshes must be non-empty")
    if n < 1:
        raise ValueError("sample count must be >= 1")


def p2s_accuracy(rec: TriMesh, gt: TriMesh, n: int, seed: int) -> float:
    """Mean distance (mm) from area-weighted samples of `rec` to `gt`."""
    _check(rec, gt, n)
    samples = sample_surface(rec, n, seed)
    _, dists, _ = closest_points(gt, samples.positions)
    return float(dists.mean() * 1000.0)


def p2s_completeness(rec: TriMesh, gt: TriMesh, n: int, seed: int) -> float:
    """Mean distance (mm) from ground-truth samples to the reconstruction."""
    return p2s_accuracy(gt, rec, n, seed)


def chamfer(rec: TriMesh, gt: TriMesh, n: int, seed: int) -> float:
    """Mean of the two directional point-to-surface means, in mm."""
    return 0.5 * (p2s_accuracy(rec, gt, n, seed) + p2s_completeness(rec, gt, n, seed))


def normal_consistency(rec: TriMesh, gt: TriMesh, n: int, seed: int,
                       bidirectional: bool = True) -> float:
    """Mean angle (degrees) between sample normals and the normals of their
    closest-point triangles on the other mesh. Geometric (flat) normals."""
    _check(rec, gt, n)

    def one_way(src, dst):
        samples = sample_surface(src, n, seed)
        _, _, tris = closest_points(dst, samples.positions)
        dst_normals = dst.triangle_normals()[tris]
        dots = np.clip(np.einsum("ij,ij->i", samples.normals, dst_normals), -1.0, 1.0)
        return float(np.degrees(np.arccos(dots)).mean())

    fwd = one_way(rec, gt)
    if not bidirectional:
        return fwd
    return 0.5 * (fwd + one_way(gt, rec))


def evaluate_pair(rec: TriMesh, gt: TriMesh, cfg: MetricConfig | None = None) -> MetricReport:
    """All four metrics with one shared seed; meshes assumed pre-aligned."""
    cfg = cfg or MetricConfig()
    acc = p2s_accuracy(rec, gt, cfg.sample_count, cfg.seed)
    comp = p2s_completeness(rec, gt, cfg.sample_count, cfg.seed)
    nc = normal_consistency(rec, gt, cfg.sample_count, cfg.seed,
                            cfg.bidirectional_normals)
    return MetricReport(
        chamfer_mm=0.5 * (acc + comp),
        p2s_accuracy_mm=acc,
        p2s_completeness_mm=comp,
        normal_consistency_deg=nc,
        sample_count=cfg.sample_count,
        seed=cfg.seed,
    )


def aggregate_reports(reports) -> MetricReport:
    """Arithmetic mean of per-pair reports (sample counts must agree)."""
    reports = list(reports)
    if not reports:
        raise EmptyInputError("no reports to aggregate")
    return MetricReport(
        chamfer_mm=float(np.mean([r.chamfer_mm for r in reports])),
        p2s_accuracy_mm=float(np.mean([r.p2s_accuracy_mm for r in reports])),
        p2s_completeness_mm=float(np.mean([r.p2s_completeness_mm for r in reports])),
        normal_consistency_deg=float(np.mean([r.normal_consistency_deg for r in reports])),
        sample_count=reports[0].sample_count,
        seed=reports[0].seed,
    )


TABLE_COLUMNS = ("Chamfer (mm)", "P2S Acc. (mm)", "P2S Comp. (mm)", "Normal (deg.)")


def report_table(rows) -> str:
    """Aligned text table: one row per (label, MetricReport)."""
    labels = [label for label, _ in rows]
    width = max([len(l) for l in labels] + [6]) + 2
    header = "".join([" " * width] + [f"{c:>16}" for c in TABLE_COLUMNS])
    lines = [header]
    for label, rep in rows:
        cells = "".join(f"{v:>16.2f}" for v in rep.values())
        lines.append(f"{label:<{width}}" + cells)
    return "\n".join(lines)


def write_report_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "chamfer_mm", "p2s_accuracy_mm",
                         "p2s_completeness_mm", "normal_consistency_deg",
                         "sample_count", "seed"])
        for label, rep in rows:
            writer.writerow([label, repr(rep.chamfer_mm), repr(rep.p2s_accuracy_mm),
                             repr(rep.p2s_completeness_mm),
                             repr(rep.normal_consistency_deg),
                             rep.sample_count, rep.seed])
