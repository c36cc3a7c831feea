//! Minimum-cost rectangular assignment with a deterministic tie-break.
//!
//! Non-finite entries mark forbidden pairs. The solver first maximises the
//! number of allowed pairs, then minimises their total cost. Among optimal
//! assignments it returns the lexicographically smallest row-to-column
//! vector, where an unassigned row sorts after every column.

/// Solver output: `rows[i]` is the column given to row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub rows: Vec<Option<usize>>,
    /// Sum of `cost[i][rows[i]]` over assigned rows, in row order.
    pub cost: f64,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c)))
    }

    pub fn len(&self) -> usize {
        self.rows.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Costs whose sums differ by at most this much are treated as tied.
pub fn tie_tolerance(cost: &[Vec<f64>]) -> f64 {
    let k = cost.len().max(cost.first().map_or(0, Vec::len));
    let finite_max = finite_max(cost);
    let scale = if cost.iter().flatten().all(|v| v.is_finite()) {
        finite_max
    } else {
        forbidden_cost(k, finite_max)
    };
    1e-11 * (1.0 + scale) * k.max(1) as f64
}

fn finite_max(cost: &[Vec<f64>]) -> f64 {
    cost.iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Exceeds any difference between two sums of `k` finite entries, so one
/// extra allowed pair always outweighs any cost saving.
fn forbidden_cost(k: usize, finite_max: f64) -> f64 {
    2.0 * k as f64 * (finite_max + 1.0) + 1.0
}

/// Cost matrix is `n x m` with equal-length rows.
pub fn hungarian(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    assert!(cost.iter().all(|r| r.len() == m), "cost matrix rows differ in length");
    if n == 0 || m == 0 {
        return Assignment {
            rows: vec![None; n],
            cost: 0.0,
        };
    }

    let k = n.max(m);
    let big = forbidden_cost(k, finite_max(cost));
    let allowed = |i: usize, j: usize| i < n && j < m && cost[i][j].is_finite();
    let padded = |i: usize, j: usize| -> f64 {
        if allowed(i, j) {
            cost[i][j]
        } else if i < n && j < m {
            big
        } else {
            0.0
        }
    };

    let (u, v, col_of_row) = solve_square(k, &padded);
    let tol = tie_tolerance(cost);
    let tight = |i: usize, j: usize| padded(i, j) - u[i] - v[j] <= tol;
    let rows = lexicographic_refine(n, col_of_row, &tight, &allowed);

    let rows: Vec<Option<usize>> = rows
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, j)| allowed(i, j).then_some(j))
        .collect();
    let total = rows
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| cost[i][c]))
        .fold(0.0, |acc, c| acc + c);
    Assignment { rows, cost: total }
}

/// Shortest-augmenting-path solver on a `k x k` matrix. Returns row and
/// column potentials and the optimal row-to-column map.
fn solve_square(k: usize, a: &dyn Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    // Index 0 is a sentinel; rows and columns are 1-based inside the loop.
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
            for j in 0..=k {
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
    let mut col_of_row = vec![0usize; k];
    for j in 1..=k {
        col_of_row[p[j] - 1] = j - 1;
    }
    (u[1..].to_vec(), v[1..].to_vec(), col_of_row)
}

/// Every perfect matching on tight edges is optimal. Settle real rows in
/// order on the smallest allowed tight column that still admits a perfect
/// completion, or on "unassigned" when none does.
fn lexicographic_refine(
    n: usize,
    mut col_of_row: Vec<usize>,
    tight: &dyn Fn(usize, usize) -> bool,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Vec<usize> {
    let k = col_of_row.len();
    let mut row_of_col = vec![0usize; k];
    for (i, j) in col_of_row.iter().enumerate() {
        row_of_col[*j] = i;
    }
    // Columns held by rows already settled on an allowed pair.
    let mut fixed_col = vec![false; k];
    // Rows settled as unassigned may still move, but only between columns
    // that keep them unassigned.
    let mut unassigned = vec![false; k];
    let mut next = vec![None; k];
    let mut queue = std::collections::VecDeque::new();

    for i in 0..n {
        let free = col_of_row[i];
        // Backward search: next[r] is the column row r moves to so that the
        // chain of displaced rows ends on `free`.
        next.iter_mut().for_each(|x| *x = None);
        queue.clear();
        queue.push_back(free);
        while let Some(c) = queue.pop_front() {
            for r in 0..k {
                let held = col_of_row[r];
                if r == i || next[r].is_some() || held == c || fixed_col[held] {
                    continue;
                }
                if tight(r, c) && !(unassigned[r] && allowed(r, c)) {
                    next[r] = Some(c);
                    queue.push_back(held);
                }
            }
        }

        let target = (0..k).find(|&j| {
            allowed(i, j) && !fixed_col[j] && tight(i, j) && (j == free || next[row_of_col[j]].is_some())
        });
        if let Some(j) = target.filter(|&j| j != free) {
            let mut r = row_of_col[j];
            col_of_row[i] = j;
            row_of_col[j] = i;
            while let Some(c) = next[r] {
                let displaced = row_of_col[c];
                col_of_row[r] = c;
                row_of_col[c] = r;
                if c == free {
                    break;
                }
                r = displaced;
            }
        }
        match target {
            Some(j) => fixed_col[j] = true,
            None => unassigned[i] = true,
        }
    }
    col_of_row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn two_by_two_example() {
        let a = hungarian(&m(&[&[1.0, 2.0], &[3.0, 0.0]]));
        assert_eq!(a.rows, vec![Some(0), Some(1)]);
        assert_eq!(a.cost, 1.0);
    }

    #[test]
    fn zero_diagonal() {
        let mut c = vec![vec![1.0; 4]; 4];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        let a = hungarian(&c);
        assert_eq!(a.rows, (0..4).map(Some).collect::<Vec<_>>());
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn all_ties_give_identity() {
        let a = hungarian(&vec![vec![5.0; 4]; 4]);
        assert_eq!(a.rows, (0..4).map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn ties_prefer_smaller_columns_for_earlier_rows() {
        // Both [1, 0] and [0, 1] cost 2; the second is lexicographically smaller.
        let a = hungarian(&m(&[&[1.0, 1.0], &[1.0, 1.0]]));
        assert_eq!(a.rows, vec![Some(0), Some(1)]);
        let a = hungarian(&m(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]));
        assert_eq!(a.cost, 0.0);
        assert_eq!(a.rows, vec![Some(0), Some(1)]);
    }

    #[test]
    fn rectangular_shapes() {
        let a = hungarian(&m(&[&[4.0, 1.0, 3.0], &[2.0, 0.0, 5.0]]));
        assert_eq!(a.rows, vec![Some(1), Some(0)]);
        assert_eq!(a.cost, 3.0);
        // Two optima cost 3; the one that assigns row 0 wins.
        let a = hungarian(&m(&[&[4.0, 2.0], &[1.0, 0.0], &[3.0, 5.0]]));
        assert_eq!(a.rows, vec![Some(1), Some(0), None]);
        assert_eq!(a.cost, 3.0);
    }

    #[test]
    fn forbidden_pairs_are_never_used() {
        let inf = f64::INFINITY;
        let a = hungarian(&m(&[&[inf, 1.0], &[inf, 100.0]]));
        assert_eq!(a.rows, vec![Some(1), None]);
        let a = hungarian(&m(&[&[inf, inf], &[inf, inf]]));
        assert_eq!(a.rows, vec![None, None]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn more_pairs_beat_lower_cost() {
        let inf = f64::INFINITY;
        // Pairing row 0 with column 0 is cheap but blocks row 1 entirely.
        let a = hungarian(&m(&[&[0.0, 50.0], &[1.0, inf]]));
        assert_eq!(a.rows, vec![Some(1), Some(0)]);
        assert_eq!(a.cost, 51.0);
    }

    #[test]
    fn unassigned_sorts_after_any_column() {
        let inf = f64::INFINITY;
        // Either row may take column 0 at cost 1; row 0 gets it.
        let a = hungarian(&m(&[&[1.0, inf], &[1.0, inf]]));
        assert_eq!(a.rows, vec![Some(0), None]);
    }

    #[test]
    fn negative_costs_and_empty_inputs() {
        let a = hungarian(&m(&[&[-5.0, -1.0], &[-2.0, -4.0]]));
        assert_eq!(a.rows, vec![Some(0), Some(1)]);
        assert_eq!(a.cost, -9.0);
        assert!(hungarian(&[]).rows.is_empty());
        assert_eq!(hungarian(&[vec![], vec![]]).rows, vec![None, None]);
    }
}
