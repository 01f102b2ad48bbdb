"""Two-factor ANOVA with replication, F-distribution tail machinery, and
before/after delta reports.

The design is a balanced a x b grid (row factor x column factor) with n
replicates per cell. The decomposition follows the standard textbook form:

    SS_rows        = b*n * sum_i (rowmean_i - grand)^2
    SS_columns     = a*n * sum_j (colmean_j - grand)^2
    SS_interaction = SS_between_cells - SS_rows - SS_columns
    SS_within      = sum over cells of (n - 1) * cell_variance

Cell variances are sample variances (n-1 denominator), which is what makes
an ANOVA reconstructed from printed cell summaries agree with one computed
from raw values.

The decomposition is purely arithmetic. The F tests are only as meaningful
as the design: p-values assume the n replicates in each cell are independent
observations, and nothing here can check that. Feeding in correlated
"replicates" (e.g. several metrics of the same run) reproduces the
arithmetic of such a table without endorsing the inference.

F tail probabilities go through the regularized incomplete beta function,
evaluated with the Lentz continued fraction; no external statistics
dependency is involved.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import DataError, FormatError
from .evaluation import RunSummary

P_VALUE_FLOOR = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), absolute accuracy ~1e-13."""
    if a <= 0 or b <= 0:
        raise DataError(f"betainc requires positive shape parameters, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    # evaluate on the side where the continued fraction converges fast
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_cdf(x: float, d1: int, d2: int) -> float:
    """CDF of the F distribution with (d1, d2) degrees of freedom."""
    if d1 < 1 or d2 < 1:
        raise DataError(f"degrees of freedom must be >= 1, got ({d1}, {d2})")
    if x < 0:
        raise DataError(f"f_cdf requires x >= 0, got {x}")
    if x == 0:
        return 0.0
    return betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))


def f_sf(x: float, d1: int, d2: int) -> float:
    """Upper tail P(F > x), computed directly so tiny p-values keep full
    relative precision instead of dying in 1 - cdf cancellation."""
    if d1 < 1 or d2 < 1:
        raise DataError(f"degrees of freedom must be >= 1, got ({d1}, {d2})")
    if x <= 0:
        return 1.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))


def f_crit(alpha: float, d1: int, d2: int) -> float:
    """Critical value x with P(F > x) = alpha, by bracketed bisection."""
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must be in (0, 1), got {alpha}")
    lo, hi = 0.0, 1.0
    while f_sf(hi, d1, d2) > alpha:
        hi *= 2.0
        if hi > 1e12:
            raise ArithmeticError(f"f_crit bracket failed for alpha={alpha}, df=({d1}, {d2})")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f_sf(mid, d1, d2) > alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CellSummary:
    """Count, mean and sample variance of one design cell."""

    count: int
    mean: float
    variance: float | None  # None when count == 1

    def __post_init__(self):
        if self.count < 1:
            raise DataError(f"cell count must be >= 1, got {self.count}")
        if self.count == 1 and self.variance is not None:
            raise DataError("variance must be absent for a single observation")
        if self.count > 1 and self.variance is None:
            raise DataError("variance required for count > 1")
        if self.variance is not None and self.variance < 0:
            raise DataError(f"variance must be >= 0, got {self.variance}")

    @property
    def sum(self) -> float:
        return self.mean * self.count

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "CellSummary":
        n = len(values)
        if n == 0:
            raise DataError("empty cell")
        mean = math.fsum(values) / n
        if n == 1:
            return cls(count=1, mean=mean, variance=None)
        var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
        return cls(count=n, mean=mean, variance=var)


@dataclass(frozen=True)
class FactorialDesign:
    """Balanced two-factor design: rows x columns of cell summaries."""

    row_levels: tuple[str, ...]
    col_levels: tuple[str, ...]
    cells: tuple[tuple[CellSummary, ...], ...]  # cells[i][j] for row i, column j

    def __post_init__(self):
        a, b = len(self.row_levels), len(self.col_levels)
        if a < 2 or b < 2:
            raise DataError(f"need at least 2 levels per factor, got {a}x{b}")
        if len(self.cells) != a or any(len(row) != b for row in self.cells):
            raise DataError("cells grid does not match the declared levels")
        counts = {cell.count for row in self.cells for cell in row}
        if len(counts) != 1:
            raise DataError(f"unbalanced design: replicate counts {sorted(counts)}")
        if self.replicates < 2:
            raise DataError("two-factor ANOVA with replication needs n >= 2 per cell")

    @property
    def replicates(self) -> int:
        return self.cells[0][0].count


SOURCE_ROWS = "Sample"
SOURCE_COLUMNS = "Columns"
SOURCE_INTERACTION = "Interaction"
SOURCE_WITHIN = "Within"
SOURCE_TOTAL = "Total"


@dataclass(frozen=True)
class AnovaRow:
    source: str
    ss: float
    df: int
    ms: float | None
    f: float | None
    p: float | None
    f_crit: float | None


@dataclass(frozen=True)
class AnovaTable:
    rows: tuple[AnovaRow, ...]
    alpha: float
    degenerate: bool = False  # MS_within was 0 or a p-value hit the floor

    def __post_init__(self):
        by_source = self.by_source()
        ss_parts = sum(
            by_source[s].ss
            for s in (SOURCE_ROWS, SOURCE_COLUMNS, SOURCE_INTERACTION, SOURCE_WITHIN)
        )
        total = by_source[SOURCE_TOTAL]
        if abs(ss_parts - total.ss) > 1e-9 * max(1.0, abs(total.ss)):
            raise DataError(f"sum-of-squares additivity violated: {ss_parts} != {total.ss}")
        df_parts = sum(
            by_source[s].df
            for s in (SOURCE_ROWS, SOURCE_COLUMNS, SOURCE_INTERACTION, SOURCE_WITHIN)
        )
        if df_parts != total.df:
            raise DataError(f"degrees of freedom not additive: {df_parts} != {total.df}")

    def by_source(self) -> dict[str, AnovaRow]:
        return {row.source: row for row in self.rows}


def anova_from_summaries(design: FactorialDesign, alpha: float = 0.05) -> AnovaTable:
    """Two-factor ANOVA with replication from per-cell summaries."""
    a = len(design.row_levels)
    b = len(design.col_levels)
    n = design.replicates
    cells = design.cells

    grand = math.fsum(cell.mean for row in cells for cell in row) / (a * b)
    row_means = [math.fsum(cell.mean for cell in row) / b for row in cells]
    col_means = [math.fsum(cells[i][j].mean for i in range(a)) / a for j in range(b)]

    ss_rows = b * n * math.fsum((m - grand) ** 2 for m in row_means)
    ss_cols = a * n * math.fsum((m - grand) ** 2 for m in col_means)
    ss_cells = n * math.fsum((cell.mean - grand) ** 2 for row in cells for cell in row)
    ss_inter = ss_cells - ss_rows - ss_cols
    ss_within = math.fsum((cell.count - 1) * (cell.variance or 0.0) for row in cells for cell in row)
    ss_total = ss_cells + ss_within

    df_rows = a - 1
    df_cols = b - 1
    df_inter = (a - 1) * (b - 1)
    df_within = a * b * (n - 1)
    df_total = a * b * n - 1

    ms_within = ss_within / df_within
    degenerate = ms_within == 0.0

    def test_row(source: str, ss: float, df: int) -> AnovaRow:
        nonlocal degenerate
        ms = ss / df
        if ms_within == 0.0:
            return AnovaRow(source=source, ss=ss, df=df, ms=ms, f=math.inf, p=0.0, f_crit=None)
        f = ms / ms_within
        p = f_sf(f, df, df_within)
        if p < P_VALUE_FLOOR:
            p = 0.0
            degenerate = True
        return AnovaRow(
            source=source, ss=ss, df=df, ms=ms, f=f, p=p, f_crit=f_crit(alpha, df, df_within)
        )

    rows = (
        test_row(SOURCE_ROWS, ss_rows, df_rows),
        test_row(SOURCE_COLUMNS, ss_cols, df_cols),
        test_row(SOURCE_INTERACTION, ss_inter, df_inter),
        AnovaRow(
            source=SOURCE_WITHIN, ss=ss_within, df=df_within, ms=ms_within, f=None, p=None, f_crit=None
        ),
        AnovaRow(source=SOURCE_TOTAL, ss=ss_total, df=df_total, ms=None, f=None, p=None, f_crit=None),
    )
    return AnovaTable(rows=rows, alpha=alpha, degenerate=degenerate)


def anova_from_raw(
    values: Sequence[Sequence[Sequence[float]]],
    alpha: float = 0.05,
    row_levels: Sequence[str] | None = None,
    col_levels: Sequence[str] | None = None,
) -> AnovaTable:
    """ANOVA from an a x b x n array of raw observations.

    Summarizes each cell and delegates to :func:`anova_from_summaries`, so the
    two entry points can never disagree.
    """
    a = len(values)
    if a < 2:
        raise DataError("need at least 2 row levels")
    b = len(values[0])
    if any(len(row) != b for row in values):
        raise DataError("ragged design: rows have different column counts")
    counts = {len(cell) for row in values for cell in row}
    if len(counts) != 1:
        raise DataError(f"unbalanced design: cell sizes {sorted(counts)}")
    rows = tuple(str(row_levels[i]) if row_levels else f"row{i}" for i in range(a))
    cols = tuple(str(col_levels[j]) if col_levels else f"col{j}" for j in range(b))
    cells = tuple(
        tuple(CellSummary.from_values(cell) for cell in row) for row in values
    )
    return anova_from_summaries(
        FactorialDesign(row_levels=rows, col_levels=cols, cells=cells), alpha=alpha
    )


def format_anova_table(table: AnovaTable) -> str:
    """Plain-text rendering, one row per variation source."""

    def fmt(value: float | None, spec: str = "{:.6f}") -> str:
        if value is None:
            return "*"
        if value != value or value == math.inf:
            return "inf"
        if value != 0 and abs(value) < 1e-3:
            return f"{value:.2E}"
        return spec.format(value)

    header = f"{'Source of Variation':<22}{'SS':>12}{'df':>6}{'MS':>12}{'F':>12}{'P-value':>12}{'F crit':>12}"
    lines = [header]
    for row in table.rows:
        lines.append(
            f"{row.source:<22}"
            f"{fmt(row.ss):>12}"
            f"{row.df:>6}"
            f"{fmt(row.ms):>12}"
            f"{fmt(row.f, '{:.6f}'):>12}"
            f"{fmt(row.p, '{:.6f}'):>12}"
            f"{fmt(row.f_crit, '{:.6f}'):>12}"
        )
    return "\n".join(lines)


def load_summaries(path: str | os.PathLike) -> FactorialDesign:
    """Read a summaries file: header (row_level, col_level, count, mean, variance)."""
    rows = _read_delimited(path, ("row_level", "col_level", "count", "mean", "variance"))
    cells: dict[tuple[str, str], CellSummary] = {}
    row_levels: list[str] = []
    col_levels: list[str] = []
    for lineno, fields in rows:
        row_level, col_level = fields[0], fields[1]
        try:
            count = int(fields[2])
            mean = float(fields[3])
            variance = None if fields[4] in ("", "-") else float(fields[4])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}", line=lineno) from None
        key = (row_level, col_level)
        if key in cells:
            raise FormatError(f"{path}: duplicate cell {key}", line=lineno)
        cells[key] = CellSummary(count=count, mean=mean, variance=variance)
        if row_level not in row_levels:
            row_levels.append(row_level)
        if col_level not in col_levels:
            col_levels.append(col_level)
    grid = []
    for r in row_levels:
        row = []
        for c in col_levels:
            if (r, c) not in cells:
                raise DataError(f"{path}: missing cell ({r}, {c})")
            row.append(cells[(r, c)])
        grid.append(tuple(row))
    return FactorialDesign(
        row_levels=tuple(row_levels), col_levels=tuple(col_levels), cells=tuple(grid)
    )


def load_raw(path: str | os.PathLike) -> tuple[list[list[list[float]]], list[str], list[str]]:
    """Read a raw design file: header (row_level, col_level, value)."""
    rows = _read_delimited(path, ("row_level", "col_level", "value"))
    data: dict[tuple[str, str], list[float]] = {}
    row_levels: list[str] = []
    col_levels: list[str] = []
    for lineno, fields in rows:
        row_level, col_level = fields[0], fields[1]
        try:
            value = float(fields[2])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}", line=lineno) from None
        data.setdefault((row_level, col_level), []).append(value)
        if row_level not in row_levels:
            row_levels.append(row_level)
        if col_level not in col_levels:
            col_levels.append(col_level)
    values = []
    for r in row_levels:
        row = []
        for c in col_levels:
            if (r, c) not in data:
                raise DataError(f"{path}: missing cell ({r}, {c})")
            row.append(data[(r, c)])
        values.append(row)
    return values, row_levels, col_levels


def _read_delimited(
    path: str | os.PathLike, expected_header: tuple[str, ...]
) -> list[tuple[int, list[str]]]:
    """Read a ,- or tab-delimited file with a required header. Returns
    (lineno, fields) per data line."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise FormatError(f"{path}: empty file", line=1)
    delim = "\t" if "\t" in lines[0] else ","
    header = tuple(h.strip() for h in lines[0].split(delim))
    if header != expected_header:
        raise FormatError(
            f"{path}: expected header {expected_header}, got {header}", line=1
        )
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(delim)]
        if len(fields) != len(expected_header):
            raise FormatError(
                f"{path}: expected {len(expected_header)} fields, got {len(fields)}", line=lineno
            )
        out.append((lineno, fields))
    return out


@dataclass(frozen=True)
class MetricDelta:
    metric: str
    mean_before: float
    mean_after: float
    absolute_drop: float  # before - after
    relative_drop: float | None  # absolute / |before|; None when before == 0


@dataclass(frozen=True)
class DeltaReport:
    deltas: tuple[MetricDelta, ...]

    @property
    def min_drop(self) -> float:
        return min(d.absolute_drop for d in self.deltas)

    @property
    def max_drop(self) -> float:
        return max(d.absolute_drop for d in self.deltas)

    def by_metric(self) -> dict[str, MetricDelta]:
        return {d.metric: d for d in self.deltas}

    def lines(self) -> list[str]:
        out = [f"{'metric':<20}{'before':>12}{'after':>12}{'drop':>12}{'drop %':>10}"]
        for d in self.deltas:
            rel = f"{100 * d.relative_drop:.1f}" if d.relative_drop is not None else "*"
            out.append(
                f"{d.metric:<20}{d.mean_before:>12.6f}{d.mean_after:>12.6f}"
                f"{d.absolute_drop:>12.6f}{rel:>10}"
            )
        out.append(f"drop range across metrics: [{self.min_drop:.6f}, {self.max_drop:.6f}]")
        return out


def delta_report(before: RunSummary, after: RunSummary) -> DeltaReport:
    """Per-metric mean drop between two run summaries (before minus after).

    Raises if the two summaries do not cover the same metrics.
    """
    if set(before.metrics) != set(after.metrics):
        missing = set(before.metrics) ^ set(after.metrics)
        raise DataError(f"run summaries disagree on metrics: {sorted(missing)}")
    deltas = []
    for name in sorted(before.metrics):
        mb = before.metrics[name].mean
        ma = after.metrics[name].mean
        drop = mb - ma
        deltas.append(
            MetricDelta(
                metric=name,
                mean_before=mb,
                mean_after=ma,
                absolute_drop=drop,
                relative_drop=(drop / abs(mb)) if mb != 0 else None,
            )
        )
    return DeltaReport(deltas=tuple(deltas))
