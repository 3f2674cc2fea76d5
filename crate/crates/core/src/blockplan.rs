//! Hierarchical partitions of the lower-triangular convolution matrix
//! `K[n][m] = k[n - m]`.
//!
//! Rows are grouped by the boundaries `n_j = ceil(j N / 2^L)` for
//! `j = 1 .. 2^L - 1` and `n_{2^L} = N - 1`; the last interval also owns row
//! `N - 1`. Each block is a Toeplitz sub-matrix applied by FFT once the time
//! step `trigger_row` is complete. The remaining entries are summed directly
//! row by row (see [`BlockPlan::local_ranges`]).
//!
//! * `Hls`: the kernel is known in advance. Block `j = odd * 2^p` covers
//!   columns `n_{j - 2^p} + 1 ..= n_j` for rows `n_j ..= n_{j + 2^p} - 1`.
//! * `KernelNonlinear`: `k_n` only becomes available at step `n`, so every
//!   entry of a block triggered at `T` must satisfy `m <= T` and
//!   `n - m <= T`. The HLS blocks with `odd >= 3` already do. The first
//!   column blocks (`j = 2^p`) are replaced by a square unit: an upper
//!   triangle holding lags `<= n_j`, plus, for every boundary `j'` inside the
//!   unit, a parallelogram holding lags `n_{j' - 2^p'} + 1 ..= n_{j'}` that is
//!   the mirror image (in `m <-> n - m`) of HLS block `j'` and triggers with
//!   it. Rows then need two local sums: recent `y` and recent `k`.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::fftconv::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Fixed kernel, known for all lags before stepping starts.
    Hls,
    /// Kernel depends on the solution; revealed one step at a time.
    KernelNonlinear,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hls => "hls",
            Variant::KernelNonlinear => "kernel_nonlinear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hls" => Some(Variant::Hls),
            "kernel_nonlinear" => Some(Variant::KernelNonlinear),
            _ => None,
        }
    }
}

/// Index ranges of one block. The kernel symbol is extracted at apply time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDescriptor {
    pub row_first: usize,
    pub row_last: usize,
    pub col_first: usize,
    pub col_last: usize,
    pub shape: Shape,
    pub trigger_row: usize,
    pub group_id: usize,
}

impl BlockDescriptor {
    pub fn nrows(&self) -> usize {
        self.row_last - self.row_first + 1
    }

    pub fn ncols(&self) -> usize {
        self.col_last - self.col_first + 1
    }

    /// Range of kernel lags `n - m` spanned by the symbol.
    pub fn lag_range(&self) -> RangeInclusive<usize> {
        match self.shape {
            // Band lags run from the bottom-right to the top-left corner.
            Shape::Parallelogram => (self.row_last - self.col_last)..=(self.row_first - self.col_first),
            _ => self.row_first.saturating_sub(self.col_last)..=(self.row_last - self.col_first),
        }
    }

    /// Lags whose symbol entries survive the shape mask.
    pub fn live_lag_range(&self) -> RangeInclusive<usize> {
        let full = self.lag_range();
        let corner = self.row_first - self.col_first;
        match self.shape {
            Shape::UpperTriangular => *full.start()..=corner,
            Shape::LowerTriangular => corner..=*full.end(),
            _ => full,
        }
    }

    /// Column range touched by row `n` (which must lie in the block).
    pub fn cols_in_row(&self, n: usize) -> Option<RangeInclusive<usize>> {
        if n < self.row_first || n > self.row_last {
            return None;
        }
        let i = n - self.row_first;
        let (lo, hi) = match self.shape {
            Shape::Square => (self.col_first, self.col_last),
            Shape::LowerTriangular => (self.col_first, (self.col_first + i).min(self.col_last)),
            Shape::UpperTriangular => (self.col_first + i, self.col_last),
            Shape::Parallelogram => {
                let bw = self.ncols() + 1 - self.nrows();
                (self.col_first + i, self.col_first + i + bw - 1)
            }
        };
        (lo <= hi).then_some(lo..=hi)
    }

    /// Largest solution index `m` any entry reads.
    pub fn max_col(&self) -> usize {
        (self.row_first..=self.row_last)
            .filter_map(|n| self.cols_in_row(n).map(|r| *r.end()))
            .max()
            .unwrap_or(self.col_first)
    }

    /// Largest kernel lag any entry reads.
    pub fn max_lag(&self) -> usize {
        (self.row_first..=self.row_last)
            .filter_map(|n| self.cols_in_row(n).map(|r| n - *r.start()))
            .max()
            .unwrap_or(0)
    }

    /// `(rows + cols) log2(rows + cols)`, the FFT work proxy.
    pub fn work(&self) -> f64 {
        let s = (self.nrows() + self.ncols()) as f64;
        s * s.log2()
    }
}

/// Partition of the `N x N` lower triangle into FFT blocks and local rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    n: usize,
    levels: usize,
    // bounds[0] = 0, bounds[j] = n_j for j = 1 ..= 2^L. Empty for direct plans.
    bounds: Vec<usize>,
    blocks: Vec<BlockDescriptor>,
    variant: Variant,
}

/// Largest `L` with `ceil(N / 2^L) >= base_size`, clamped to `1 ..= floor(log2 N)`.
pub fn choose_levels(n: usize, base_size: usize) -> usize {
    let base = base_size.max(1);
    let max_l = usize::BITS as usize - 1 - n.max(2).leading_zeros() as usize;
    let mut l = 0;
    while l < max_l && n.div_ceil(1 << (l + 1)) >= base {
        l += 1;
    }
    l.clamp(1, max_l.max(1))
}

/// Default base-case size: enough rows that endpoint corrections of order
/// `p` with `q` Gregory weights stay inside the direct region.
pub fn default_base_size(p: usize, q: usize) -> usize {
    2 * q + p
}

impl BlockPlan {
    /// Builds the plan for `n` steps and `levels` levels of subdivision.
    pub fn build(n: usize, levels: usize, variant: Variant) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter(format!("plan needs N >= 2, got {n}")));
        }
        let max_l = usize::BITS as usize - 1 - n.leading_zeros() as usize;
        if levels == 0 || levels > max_l {
            return Err(Error::Parameter(format!(
                "levels must lie in 1..={max_l} for N = {n}, got {levels}"
            )));
        }
        let j_max = 1usize << levels;
        let mut bounds: Vec<usize> = (0..j_max).map(|j| (j * n).div_ceil(j_max)).collect();
        bounds.push(n - 1);

        let row_end = |j_end: usize| if j_end == j_max { n - 1 } else { bounds[j_end] - 1 };
        let mut blocks = Vec::new();
        for j in 1..j_max {
            let span = 1usize << j.trailing_zeros();
            let r_f = bounds[j];
            let r_l = row_end(j + span);
            if r_l < r_f {
                continue;
            }
            let c_f = if j == span { 0 } else { bounds[j - span] + 1 };
            let first_column = j == span;
            match variant {
                Variant::Hls => blocks.push(BlockDescriptor {
                    row_first: r_f,
                    row_last: r_l,
                    col_first: c_f,
                    col_last: r_f,
                    shape: Shape::Square,
                    trigger_row: r_f,
                    group_id: j,
                }),
                Variant::KernelNonlinear if first_column => blocks.push(BlockDescriptor {
                    row_first: r_f,
                    row_last: r_l,
                    col_first: 0,
                    col_last: r_f,
                    shape: Shape::UpperTriangular,
                    trigger_row: r_f,
                    group_id: j,
                }),
                Variant::KernelNonlinear => {
                    blocks.push(BlockDescriptor {
                        row_first: r_f,
                        row_last: r_l,
                        col_first: c_f,
                        col_last: r_f,
                        shape: Shape::Square,
                        trigger_row: r_f,
                        group_id: j,
                    });
                    // Mirror: lags c_f ..= r_f, columns r_f - r_f ..= r_l - c_f.
                    blocks.push(BlockDescriptor {
                        row_first: r_f,
                        row_last: r_l,
                        col_first: 0,
                        col_last: r_l - c_f,
                        shape: Shape::Parallelogram,
                        trigger_row: r_f,
                        group_id: j,
                    });
                }
            }
        }
        Ok(Self {
            n,
            levels,
            bounds,
            blocks,
            variant,
        })
    }

    /// Plan with no FFT blocks: every history sum is computed directly.
    pub fn direct(n: usize, variant: Variant) -> Self {
        Self {
            n,
            levels: 0,
            bounds: Vec::new(),
            blocks: Vec::new(),
            variant,
        }
    }

    /// Picks the level count from a base-case size; falls back to a direct
    /// plan when `n < 2 * base_size`.
    pub fn for_steps(n: usize, base_size: usize, variant: Variant) -> Result<Self> {
        if n < 2 * base_size.max(1) || n < 2 {
            return Ok(Self::direct(n, variant));
        }
        Self::build(n, choose_levels(n, base_size), variant)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// `n_1 .. n_{2^L}`.
    pub fn boundaries(&self) -> &[usize] {
        self.bounds.get(1..).unwrap_or(&[])
    }

    pub fn blocks(&self) -> &[BlockDescriptor] {
        &self.blocks
    }

    /// Rows below this index are summed directly.
    pub fn direct_rows(&self) -> usize {
        self.bounds.get(1).copied().unwrap_or(self.n)
    }

    /// Interval index `j` (1-based) owning row `n`, or `None` in the direct region.
    pub fn interval_of(&self, n: usize) -> Option<usize> {
        if self.bounds.len() < 2 || n < self.bounds[1] {
            return None;
        }
        let j_max = self.bounds.len() - 1;
        // Largest j < j_max with bounds[j] <= n.
        let j = self.bounds[..j_max].partition_point(|&b| b <= n) - 1;
        Some(j)
    }

    /// Start of the interval owning row `n` (0 in the direct region).
    pub fn interval_start(&self, n: usize) -> Option<usize> {
        self.interval_of(n).map(|j| self.bounds[j])
    }

    /// Columns of row `n` summed directly: `(recent k, recent y)`.
    ///
    /// In the direct region the whole row is returned as the second range.
    pub fn local_ranges(&self, n: usize) -> (Option<RangeInclusive<usize>>, Option<RangeInclusive<usize>>) {
        match self.interval_start(n) {
            None => (None, Some(0..=n)),
            Some(b) => {
                let recent_y = (b < n).then(|| b + 1..=n);
                let recent_k = match self.variant {
                    Variant::Hls => None,
                    Variant::KernelNonlinear => (n > b).then(|| 0..=n - b - 1),
                };
                (recent_k, recent_y)
            }
        }
    }

    /// Total FFT work proxy over all blocks.
    pub fn work(&self) -> f64 {
        self.blocks.iter().map(BlockDescriptor::work).sum()
    }

    /// Writes one header line and one line per block:
    /// `row_first row_last col_first col_last shape trigger_row group_id`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let b: Vec<String> = self.boundaries().iter().map(|x| x.to_string()).collect();
        let _ = writeln!(
            s,
            "# N={} L={} variant={} boundaries={}",
            self.n,
            self.levels,
            self.variant.as_str(),
            b.join(",")
        );
        for blk in &self.blocks {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {}",
                blk.row_first,
                blk.row_last,
                blk.col_first,
                blk.col_last,
                blk.shape.as_str(),
                blk.trigger_row,
                blk.group_id
            );
        }
        s
    }

    /// Inverse of [`BlockPlan::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Parameter(format!("malformed plan text: {what}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let header = header.strip_prefix("# ").ok_or_else(|| bad("header"))?;
        let (mut n, mut levels, mut variant, mut bounds) = (None, None, None, Vec::new());
        for field in header.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(field))?;
            match k {
                "N" => n = v.parse().ok(),
                "L" => levels = v.parse().ok(),
                "variant" => variant = Variant::parse(v),
                "boundaries" => {
                    bounds = v
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().map_err(|_| bad(s)))
                        .collect::<Result<Vec<usize>>>()?
                }
                _ => return Err(bad(k)),
            }
        }
        let mut blocks = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(bad(line));
            }
            let num = |i: usize| f[i].parse::<usize>().map_err(|_| bad(f[i]));
            blocks.push(BlockDescriptor {
                row_first: num(0)?,
                row_last: num(1)?,
                col_first: num(2)?,
                col_last: num(3)?,
                shape: Shape::parse(f[4]).ok_or_else(|| bad(f[4]))?,
                trigger_row: num(5)?,
                group_id: num(6)?,
            });
        }
        let mut all = Vec::with_capacity(bounds.len() + 1);
        if !bounds.is_empty() {
            all.push(0);
            all.extend(bounds);
        }
        Ok(Self {
            n: n.ok_or_else(|| bad("N"))?,
            levels: levels.ok_or_else(|| bad("L"))?,
            bounds: all,
            blocks,
            variant: variant.ok_or_else(|| bad("variant"))?,
        })
    }

    /// Replaces the block list (test support for injected defects).
    #[doc(hidden)]
    pub fn with_blocks(mut self, blocks: Vec<BlockDescriptor>) -> Self {
        self.blocks = blocks;
        self
    }

    /// Same geometry, judged under another variant's rules.
    #[doc(hidden)]
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }
}

/// Outcome of [`validate_plan`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanReport {
    pub coverage_ok: bool,
    pub causality_ok: bool,
    pub order_ok: bool,
    pub failures: Vec<String>,
}

impl PlanReport {
    pub fn all_ok(&self) -> bool {
        self.coverage_ok && self.causality_ok && self.order_ok
    }
}

/// Densified self-check of a plan (`N <= 4096`).
///
/// Counts every lower-triangle entry over all blocks and local ranges,
/// checks each block entry against the causality rule of the plan's
/// variant, and checks that blocks are sorted by trigger with co-triggered
/// blocks sharing a group.
pub fn validate_plan(plan: &BlockPlan) -> PlanReport {
    let n = plan.n;
    assert!(n <= 4096, "validate_plan densifies an N x N bitmap; N = {n}");
    let mut report = PlanReport {
        coverage_ok: true,
        causality_ok: true,
        order_ok: true,
        failures: Vec::new(),
    };
    let mut count = vec![0u8; n * n];
    let mut bump = |row: usize, col: usize, report: &mut PlanReport| {
        if col > row || row >= n {
            if report.coverage_ok {
                report
                    .failures
                    .push(format!("entry ({row}, {col}) outside the lower triangle"));
            }
            report.coverage_ok = false;
            return;
        }
        let c = &mut count[row * n + col];
        *c = c.saturating_add(1);
    };

    for (bi, b) in plan.blocks.iter().enumerate() {
        if b.row_last >= n || b.col_last >= n || b.row_first > b.row_last || b.col_first > b.col_last {
            report.coverage_ok = false;
            report.failures.push(format!("block {bi} has invalid ranges {b:?}"));
            continue;
        }
        if b.trigger_row > b.row_first {
            report.causality_ok = false;
            report.failures.push(format!(
                "block {bi} triggers at {} after its first row {}",
                b.trigger_row, b.row_first
            ));
        }
        for row in b.row_first..=b.row_last {
            let Some(cols) = b.cols_in_row(row) else { continue };
            for col in cols {
                bump(row, col, &mut report);
                let lag_ok = plan.variant == Variant::Hls || row.saturating_sub(col) <= b.trigger_row;
                if (col > b.trigger_row || !lag_ok) && report.causality_ok {
                    report.causality_ok = false;
                    report.failures.push(format!(
                        "block {bi} entry ({row}, {col}) not available at step {}",
                        b.trigger_row
                    ));
                }
            }
        }
    }
    for row in 0..n {
        let (rk, ry) = plan.local_ranges(row);
        for r in [rk, ry].into_iter().flatten() {
            for col in r {
                bump(row, col, &mut report);
            }
        }
    }
    'outer: for row in 0..n {
        for col in 0..=row {
            let c = count[row * n + col];
            if c != 1 {
                report.coverage_ok = false;
                report.failures.push(format!("entry ({row}, {col}) counted {c} times"));
                break 'outer;
            }
        }
    }

    for w in plan.blocks.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.trigger_row > b.trigger_row
            || (a.trigger_row == b.trigger_row && a.group_id != b.group_id)
            || (a.trigger_row != b.trigger_row && a.group_id == b.group_id)
        {
            report.order_ok = false;
            report.failures.push(format!("blocks out of order: {a:?} then {b:?}"));
        }
    }
    let per_trigger_max = match plan.variant {
        Variant::Hls => 1,
        Variant::KernelNonlinear => 2,
    };
    let mut i = 0;
    while i < plan.blocks.len() {
        let t = plan.blocks[i].trigger_row;
        let k = plan.blocks[i..].iter().take_while(|b| b.trigger_row == t).count();
        if k > per_trigger_max {
            report.order_ok = false;
            report.failures.push(format!("{k} blocks trigger at row {t}"));
        }
        if !plan.bounds.is_empty() && !plan.boundaries().contains(&t) {
            report.order_ok = false;
            report.failures.push(format!("trigger row {t} is not a boundary"));
        }
        i += k;
    }
    report
}
