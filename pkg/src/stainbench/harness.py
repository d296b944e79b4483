"""Leaderboard ranking and submission screening."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .core import FormatError, PatchManifest, load_image, real
from .metrics import blur_score

PSNR_WEIGHT = 0.4
SSIM_WEIGHT = 0.6

# Frozen output of scripts/calibrate_blur.py (defaults: 40 synthetic 512 px
# patches, 4x bilinear upsampling for the blurred set): geometric mean of the
# sharp-set 5th percentile (115.7) and the blurred-set 95th percentile (25.6).
BLUR_THRESHOLD = 54.5
BLUR_MAX_FRACTION = 0.10


@dataclass(frozen=True)
class TeamEntry:
    team: str
    mean_psnr_db: float
    mean_ssim: float

    def __post_init__(self):
        if not math.isfinite(self.mean_ssim):
            raise ValueError(f"non-finite SSIM for team {self.team!r}")
        if not -1.0 <= self.mean_ssim <= 1.0:
            raise ValueError(f"SSIM {self.mean_ssim} outside [-1, 1] for team {self.team!r}")
        if math.isnan(self.mean_psnr_db) or self.mean_psnr_db == -math.inf:
            raise ValueError(f"invalid PSNR for team {self.team!r}")


@dataclass(frozen=True)
class LeaderboardRow:
    team: str
    mean_psnr_db: float
    rank_psnr: float
    mean_ssim: float
    rank_ssim: float
    final_score: float
    final_rank: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def rank_teams(entries: Sequence[TeamEntry]) -> list[LeaderboardRow]:
    """Weighted rank fusion: 0.4 * PSNR rank + 0.6 * SSIM rank, lower is better.

    Metric ranks descend with the metric and share the average rank on ties.
    Equal final scores are ordered by higher SSIM, then team name.
    """
    if not entries:
        raise ValueError("no teams to rank")
    names = [e.team for e in entries]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate team {dupes[0]!r}")
    psnr = np.array([e.mean_psnr_db for e in entries])
    ssim = np.array([e.mean_ssim for e in entries])
    r_psnr = rankdata(-psnr, method="average")
    r_ssim = rankdata(-ssim, method="average")
    # the weights are exact in binary after scaling by 10
    final = (4 * r_psnr + 6 * r_ssim) / 10
    order = sorted(range(len(entries)), key=lambda i: (final[i], -ssim[i], names[i]))
    rows = []
    for pos, i in enumerate(order, start=1):
        rows.append(
            LeaderboardRow(
                team=names[i],
                mean_psnr_db=float(psnr[i]),
                rank_psnr=float(r_psnr[i]),
                mean_ssim=float(ssim[i]),
                rank_ssim=float(r_ssim[i]),
                final_score=float(final[i]),
                final_rank=pos,
            )
        )
    return rows


def leaderboard_json(rows: Sequence[LeaderboardRow]) -> dict:
    return {"rows": [r.to_json() for r in rows]}


def entries_from_json(obj, default_team: str | None = None) -> list[TeamEntry]:
    """Accept a team list, ``{"teams": [...]}``, or a single metric report.

    A metric report contributes one entry named by its ``team`` key or
    ``default_team`` (the CLI passes the file stem).
    """
    try:
        if isinstance(obj, dict) and "aggregate" in obj:
            team = obj.get("team", default_team)
            if team is None:
                raise FormatError("metric report has no team name")
            agg = obj["aggregate"]
            return [TeamEntry(str(team), real(agg["mean_psnr_db"]), real(agg["mean_ssim"]))]
        if isinstance(obj, dict):
            obj = obj["teams"]
        return [TeamEntry(str(t["team"]), real(t["mean_psnr_db"]), real(t["mean_ssim"])) for t in obj]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad team data: {exc}") from exc


# ---------------------------------------------------------------------------
# Submission screening
# ---------------------------------------------------------------------------


@dataclass
class Verdict:
    valid: bool
    reasons: list[str]
    per_image: list[dict]
    blurry_fraction: float

    def to_json(self) -> dict:
        return {
            "valid": self.valid,
            "reasons": self.reasons,
            "blurry_fraction": self.blurry_fraction,
            "per_image": self.per_image,
        }


def _find_prediction(pred_dir: Path, patch_id: str) -> Path | None:
    for name in (f"{patch_id}.png", f"{patch_id}_IHC.png"):
        if (pred_dir / name).is_file():
            return pred_dir / name
    return None


def expected_ids(manifest: PatchManifest) -> list[tuple[str, int]]:
    """Test-split ids (all ids when the manifest has no test split)."""
    test = [e for e in manifest.entries if e.split == "test"]
    chosen = test if test else list(manifest.entries)
    return [(e.patch_id, e.size) for e in chosen]


def _check_image(pred_dir: Path, pid: str, size: int, blur_thresh: float) -> dict:
    path = _find_prediction(pred_dir, pid)
    row = {"id": pid, "status": "ok"}
    if path is None:
        row["status"] = "missing"
        return row
    try:
        img = load_image(path)
    except (OSError, FormatError) as exc:
        row["status"] = "unreadable"
        row["error"] = str(exc)
        return row
    if (img.width, img.height) != (size, size):
        row["status"] = "wrong_size"
        return row
    row["blur_score"] = blur_score(img)
    if row["blur_score"] < blur_thresh:
        row["status"] = "blurry"
    return row


def validate_submission(
    pred_dir,
    manifest: PatchManifest,
    blur_thresh: float = BLUR_THRESHOLD,
    max_blurry_fraction: float = BLUR_MAX_FRACTION,
    workers: int = 1,
) -> Verdict:
    """A submission is invalid if an expected id is missing, unreadable or
    the wrong size, or if more than ``max_blurry_fraction`` of its images
    have a blur score under ``blur_thresh``."""
    pred_dir = Path(pred_dir)
    ids = expected_ids(manifest)
    check = lambda item: _check_image(pred_dir, item[0], item[1], blur_thresh)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(check, ids))
    else:
        rows = [check(item) for item in ids]
    reasons = {r["status"] for r in rows} - {"ok", "blurry"}
    blurry = sum(r["status"] == "blurry" for r in rows)
    frac = blurry / len(rows) if rows else 0.0
    if frac > max_blurry_fraction:
        reasons.add("blur")
    return Verdict(not reasons, sorted(reasons), rows, frac)


def load_manifest(path) -> PatchManifest:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"unreadable manifest: {exc}") from exc
    return PatchManifest.loads(text)


# Mean PSNR (dB) and SSIM of the six valid final-round submissions.
CHALLENGE_RESULTS = (
    TeamEntry("arpitdec5", 19.736, 0.574),
    TeamEntry("Just4Fun", 22.929, 0.559),
    TeamEntry("lifangda02", 17.927, 0.555),
    TeamEntry("stan9", 17.959, 0.543),
    TeamEntry("guanxianchao", 19.560, 0.497),
    TeamEntry("vivek23", 15.271, 0.493),
)
