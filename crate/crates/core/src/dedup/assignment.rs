//! Maximum-weight bipartite matching with a deterministic tie-break.
//!
//! The objective is lexicographic: most pairs first, then largest total
//! weight, then the lexicographically smallest sorted pair list. The problem
//! is padded to a square assignment (every row and column gets a private
//! "unmatched" partner) and solved with the potential-based Hungarian method.
//! Optimal matchings are exactly the perfect matchings on edges that are
//! tight under the optimal potentials, so the tie-break walks rows in order
//! and keeps the smallest column that still admits a perfect tight matching.

use std::collections::VecDeque;

/// Upper bound of an edge weight accepted by [`max_weight_matching`].
pub const MAX_WEIGHT: i64 = 1_000_000;

const INF: i64 = i64::MAX / 4;

/// Returns matched `(row, col)` pairs sorted by row.
///
/// `weight(i, j)` yields `None` for inadmissible pairs and otherwise a weight
/// in `0..=MAX_WEIGHT`.
pub fn max_weight_matching<F>(rows: usize, cols: usize, weight: F) -> Vec<(usize, usize)>
where
    F: Fn(usize, usize) -> Option<i64>,
{
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows + cols;
    let big = (rows.min(cols) as i64 + 1) * (MAX_WEIGHT + 1);

    let mut cost = vec![vec![INF; n]; n];
    let mut any_edge = false;
    for (i, row) in cost.iter_mut().enumerate().take(rows) {
        for (j, cell) in row.iter_mut().enumerate().take(cols) {
            if let Some(w) = weight(i, j) {
                debug_assert!((0..=MAX_WEIGHT).contains(&w));
                *cell = -(big + w.clamp(0, MAX_WEIGHT));
                any_edge = true;
            }
        }
        row[cols + i] = 0;
    }
    if !any_edge {
        return Vec::new();
    }
    for (k, row) in cost.iter_mut().enumerate().skip(rows) {
        let j = k - rows;
        row[j] = 0;
        for cell in row.iter_mut().skip(cols) {
            *cell = 0;
        }
    }

    let (mut row_to_col, u, v) = hungarian(&cost);
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| cost[i][j] < INF && cost[i][j] - u[i] - v[j] == 0)
                .collect()
        })
        .collect();
    let mut col_to_row = vec![0; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }

    let mut fixed = vec![false; n];
    for i in 0..rows {
        // Candidates in preference order: real columns ascending, then unmatched.
        let candidates = tight[i].iter().copied().filter(|&j| j < cols).chain(
            tight[i].iter().copied().filter(|&j| j == cols + i),
        );
        for c in candidates {
            if row_to_col[i] == c {
                break;
            }
            if reassign(i, c, &tight, &fixed, &mut row_to_col, &mut col_to_row) {
                break;
            }
        }
        fixed[i] = true;
    }

    row_to_col
        .iter()
        .take(rows)
        .enumerate()
        .filter(|&(_, &j)| j < cols)
        .map(|(i, &j)| (i, j))
        .collect()
}

/// Moves row `i` onto column `c` by rotating an alternating cycle through
/// unfixed rows. Leaves the matching untouched on failure.
fn reassign(
    i: usize,
    c: usize,
    tight: &[Vec<usize>],
    fixed: &[bool],
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
) -> bool {
    let holder = col_to_row[c];
    if fixed[holder] {
        return false;
    }
    let target = row_to_col[i];
    let n = row_to_col.len();

    // BFS over rows from `holder`; parent_col[col] = row that reached it.
    let mut parent_col: Vec<Option<usize>> = vec![None; n];
    let mut seen_col = vec![false; n];
    seen_col[c] = true;
    let mut queue = VecDeque::from([holder]);
    let mut found = false;
    'search: while let Some(r) = queue.pop_front() {
        for &col in &tight[r] {
            if seen_col[col] {
                continue;
            }
            seen_col[col] = true;
            parent_col[col] = Some(r);
            if col == target {
                found = true;
                break 'search;
            }
            let next = col_to_row[col];
            if next != i && !fixed[next] {
                queue.push_back(next);
            }
        }
    }
    if !found {
        return false;
    }

    // Shift every row on the path onto the column it reached.
    let mut col = target;
    while let Some(r) = parent_col[col] {
        let previous = row_to_col[r];
        row_to_col[r] = col;
        col_to_row[col] = r;
        if r == holder {
            break;
        }
        col = previous;
    }
    row_to_col[i] = c;
    col_to_row[c] = i;
    true
}

/// Square min-cost assignment. Returns the row assignment and the row and
/// column potentials, with `cost[i][j] - u[i] - v[j] >= 0` everywhere and
/// zero on assigned cells.
fn hungarian(cost: &[Vec<i64>]) -> (Vec<usize>, Vec<i64>, Vec<i64>) {
    let n = cost.len();
    // 1-based internals; index 0 is the virtual start column.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}
