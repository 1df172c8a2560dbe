//! Exact minimum-cost assignment for rectangular cost matrices.
//!
//! The smaller dimension is matched injectively into the larger one. Among
//! equal-cost optima the lexicographically smallest assignment wins, where an
//! assignment is read as the sequence of partners of the smaller dimension
//! in index order. Totals are summed in that same order, so the solver and
//! the exhaustive oracle agree bit for bit whenever they pick the same pairs.

use super::MetricsError;

/// Largest smaller-dimension size [`brute_force_assignment`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Dense row-major matrix of finite costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self::from_fn(rows.len(), cols, |r, c| rows[r][c])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn transposed(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    fn check_finite(&self) -> Result<(), MetricsError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(MetricsError::NonFiniteCost)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs, ordered by the index of the smaller dimension.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    fn empty() -> Self {
        Self { pairs: Vec::new(), total_cost: 0.0 }
    }
}

/// Works on a matrix with `rows <= cols`; `partner[r]` is the column of row `r`.
fn total(cost: &CostMatrix, partner: &[usize]) -> f64 {
    partner
        .iter()
        .enumerate()
        .fold(0.0, |acc, (r, &c)| acc + cost.get(r, c))
}

fn finish(partner: Vec<usize>, cost: &CostMatrix, transposed: bool) -> Assignment {
    let total_cost = total(cost, &partner);
    let pairs = partner
        .into_iter()
        .enumerate()
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    Assignment { pairs, total_cost }
}

/// Optimal assignment (Hungarian method with potentials, O(n³), followed by
/// a tie-break pass over the equality subgraph).
pub fn min_cost_assignment(cost: &CostMatrix) -> Result<Assignment, MetricsError> {
    cost.check_finite()?;
    if cost.rows == 0 || cost.cols == 0 {
        return Ok(Assignment::empty());
    }
    let transposed = cost.rows > cost.cols;
    let owned;
    let c = if transposed {
        owned = cost.transposed();
        &owned
    } else {
        cost
    };

    let n = c.cols;
    // dummy rows cost nothing, so the square problem has the same optima
    let square = CostMatrix::from_fn(n, n, |r, col| if r < c.rows { c.get(r, col) } else { 0.0 });
    let solved = hungarian(&square);
    let hungarian_partner = solved.col_of_row[..c.rows].to_vec();

    let scale = square.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let canonical = lexicographic_optimum(&square, c.rows, solved, 1e-10 * scale);

    let t_h = total(c, &hungarian_partner);
    let t_c = total(c, &canonical);
    let partner = if t_c <= t_h { canonical } else { hungarian_partner };
    Ok(finish(partner, c, transposed))
}

struct Solved {
    u: Vec<f64>,
    v: Vec<f64>,
    col_of_row: Vec<usize>,
}

fn hungarian(a: &CostMatrix) -> Solved {
    let n = a.rows;
    // 1-based with a virtual column 0, following the classic formulation
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of[j] - 1] = j - 1;
    }
    Solved {
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
        col_of_row,
    }
}

/// Walks the real rows in order, moving each to the smallest column it can
/// take while the whole assignment stays on tight edges (reduced cost within
/// `tol` of zero). Tight perfect matchings are exactly the optimal ones.
fn lexicographic_optimum(a: &CostMatrix, real_rows: usize, solved: Solved, tol: f64) -> Vec<usize> {
    let n = a.rows;
    let Solved { u, v, mut col_of_row } = solved;
    let tight = |r: usize, c: usize| a.get(r, c) - u[r] - v[c] <= tol;
    let mut row_of_col = vec![0usize; n];
    for (r, &c) in col_of_row.iter().enumerate() {
        row_of_col[c] = r;
    }

    let mut came_from = vec![usize::MAX; n];
    let mut seen_col = vec![false; n];
    let mut queue = Vec::with_capacity(n);

    for i in 0..real_rows {
        let current = col_of_row[i];
        for j in 0..current {
            let r = row_of_col[j];
            if r < i || !tight(i, j) {
                continue;
            }
            // row r gives up j; search an alternating path from r to `current`
            seen_col.iter_mut().for_each(|s| *s = false);
            seen_col[j] = true;
            for &c in &col_of_row[..i] {
                seen_col[c] = true;
            }
            came_from[r] = usize::MAX;
            queue.clear();
            queue.push(r);
            let mut head = 0;
            let mut end_row = None;
            'bfs: while head < queue.len() {
                let x = queue[head];
                head += 1;
                for y in 0..n {
                    if seen_col[y] || !tight(x, y) {
                        continue;
                    }
                    if y == current {
                        end_row = Some(x);
                        break 'bfs;
                    }
                    seen_col[y] = true;
                    let next = row_of_col[y];
                    came_from[next] = x;
                    queue.push(next);
                }
            }
            let Some(mut x) = end_row else { continue };
            let mut take = current;
            loop {
                let old = col_of_row[x];
                col_of_row[x] = take;
                row_of_col[take] = x;
                if x == r {
                    break;
                }
                take = old;
                x = came_from[x];
            }
            col_of_row[i] = j;
            row_of_col[j] = i;
            break;
        }
    }
    col_of_row.truncate(real_rows);
    col_of_row
}

/// Exhaustive search over injective assignments, in lexicographic order.
/// Keeps the first strict minimum. Test oracle for [`min_cost_assignment`].
pub fn brute_force_assignment(cost: &CostMatrix) -> Result<Assignment, MetricsError> {
    let small = cost.rows.min(cost.cols);
    if small > BRUTE_FORCE_LIMIT {
        return Err(MetricsError::OracleTooLarge(small));
    }
    cost.check_finite()?;
    if small == 0 {
        return Ok(Assignment::empty());
    }
    let transposed = cost.rows > cost.cols;
    let owned;
    let c = if transposed {
        owned = cost.transposed();
        &owned
    } else {
        cost
    };

    struct Search<'a> {
        c: &'a CostMatrix,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn go(&mut self, row: usize, acc: f64) {
            if row == self.c.rows {
                if self.best.as_ref().is_none_or(|(b, _)| acc < *b) {
                    self.best = Some((acc, self.current.clone()));
                }
                return;
            }
            for col in 0..self.c.cols {
                if self.used[col] {
                    continue;
                }
                self.used[col] = true;
                self.current.push(col);
                self.go(row + 1, acc + self.c.get(row, col));
                self.current.pop();
                self.used[col] = false;
            }
        }
    }

    let mut s = Search {
        c,
        used: vec![false; c.cols],
        current: Vec::with_capacity(c.rows),
        best: None,
    };
    s.go(0, 0.0);
    let (_, partner) = s.best.expect("at least one assignment exists");
    Ok(finish(partner, c, transposed))
}
