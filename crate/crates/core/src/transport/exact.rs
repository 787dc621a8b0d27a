//! Exact transport on small instances via the transportation simplex.
//!
//! Serves as the unregularized ground truth that the Sinkhorn solver is
//! checked against. Bland's rule makes the pivoting finite under degeneracy,
//! and termination is certified: every non-basic reduced cost must be
//! nonnegative (up to float slack) before the solution is returned.

use crate::error::{Error, Result};
use crate::math::Matrix;

/// Largest instance (n * m) the exact solver accepts.
pub const EXACT_OT_MAX_CELLS: usize = 64;

const PIVOT_CAP: usize = 100_000;

fn validate_marginal(name: &str, w: &[f64]) -> Result<()> {
    if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain(format!("{name} marginal has a negative or non-finite entry")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("{name} marginal sums to {total}, expected 1")));
    }
    Ok(())
}

/// Basis bookkeeping: the current set of basic cells, which always forms a
/// spanning tree of the bipartite row/column graph.
struct Basis {
    n: usize,
    m: usize,
    cells: Vec<(usize, usize)>,
}

impl Basis {
    fn contains(&self, cell: (usize, usize)) -> bool {
        self.cells.contains(&cell)
    }

    /// Duals (u, v) with u[0] = 0 solving u[i] + v[j] = c[i][j] on the basis.
    fn duals(&self, c: &Matrix) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.n];
        let mut v = vec![f64::NAN; self.m];
        u[0] = 0.0;
        let mut frontier = vec![Node::Row(0)];
        while let Some(node) = frontier.pop() {
            for &(i, j) in &self.cells {
                match node {
                    Node::Row(r) if i == r && v[j].is_nan() => {
                        v[j] = c.get(i, j) - u[i];
                        frontier.push(Node::Col(j));
                    }
                    Node::Col(cj) if j == cj && u[i].is_nan() => {
                        u[i] = c.get(i, j) - v[j];
                        frontier.push(Node::Row(i));
                    }
                    _ => {}
                }
            }
        }
        (u, v)
    }

    /// The unique cycle created by adding `entering`, ordered so that
    /// consecutive cells alternate sharing a row / a column. Signs alternate
    /// +,-,+,... starting at the entering cell.
    fn cycle(&self, entering: (usize, usize)) -> Vec<(usize, usize)> {
        // BFS over the basis tree from row-node entering.0 to col-node entering.1
        let start = Node::Row(entering.0);
        let goal = Node::Col(entering.1);
        let mut parent: Vec<Option<(Node, (usize, usize))>> = vec![None; self.n + self.m];
        let idx = |node: Node| match node {
            Node::Row(i) => i,
            Node::Col(j) => self.n + j,
        };
        let mut queue = std::collections::VecDeque::from([start]);
        let mut seen = vec![false; self.n + self.m];
        seen[idx(start)] = true;
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &(i, j) in &self.cells {
                let next = match node {
                    Node::Row(r) if i == r => Node::Col(j),
                    Node::Col(cj) if j == cj => Node::Row(i),
                    _ => continue,
                };
                if !seen[idx(next)] {
                    seen[idx(next)] = true;
                    parent[idx(next)] = Some((node, (i, j)));
                    queue.push_back(next);
                }
            }
        }
        // walk back from the goal collecting the path edges, then reverse
        let mut path = Vec::new();
        let mut node = goal;
        while node != start {
            let (prev, edge) = parent[idx(node)].expect("basis must stay connected");
            path.push(edge);
            node = prev;
        }
        path.reverse();
        let mut cycle = Vec::with_capacity(path.len() + 1);
        cycle.push(entering);
        cycle.extend(path);
        cycle
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Node {
    Row(usize),
    Col(usize),
}

/// Northwest-corner initial basic feasible solution: a staircase of exactly
/// n + m - 1 cells.
fn northwest_corner(a: &[f64], b: &[f64], x: &mut Matrix) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut ra = a.to_vec();
    let mut rb = b.to_vec();
    let mut cells = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let f = ra[i].min(rb[j]);
        cells.push((i, j));
        x.set(i, j, f);
        ra[i] = (ra[i] - f).max(0.0);
        rb[j] = (rb[j] - f).max(0.0);
        if i == n - 1 && j == m - 1 {
            break;
        }
        if (ra[i] <= rb[j] && i < n - 1) || j == m - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    cells
}

/// Exact minimizer of `<pi, C>` over couplings of (a, b) on a small instance.
/// Returns the optimal cost and plan. Instances with `n * m > 64` are
/// rejected; that regime belongs to [`sinkhorn`](super::sinkhorn).
pub fn exact_ot_small(c: &Matrix, a: &[f64], b: &[f64]) -> Result<(f64, Matrix)> {
    let (n, m) = (c.rows(), c.cols());
    if n != a.len() || m != b.len() {
        return Err(Error::Shape(format!(
            "cost is {n}x{m} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::Domain("marginals must be non-empty".into()));
    }
    if n * m > EXACT_OT_MAX_CELLS {
        return Err(Error::Usage(format!(
            "exact_ot_small handles at most {EXACT_OT_MAX_CELLS} cells, got {}",
            n * m
        )));
    }
    validate_marginal("source", a)?;
    validate_marginal("target", b)?;

    let scale = c.max_abs().max(1.0);
    let enter_eps = 1e-11 * scale;

    let mut x = Matrix::zeros(n, m);
    let cells = northwest_corner(a, b, &mut x);
    let mut basis = Basis { n, m, cells };

    for _pivot in 0..PIVOT_CAP {
        let (u, v) = basis.duals(c);
        // Bland: first improving cell in row-major order
        let mut entering = None;
        'scan: for i in 0..n {
            for j in 0..m {
                if basis.contains((i, j)) {
                    continue;
                }
                if c.get(i, j) - u[i] - v[j] < -enter_eps {
                    entering = Some((i, j));
                    break 'scan;
                }
            }
        }
        let Some(entering) = entering else {
            let cost = (0..n)
                .map(|i| (0..m).map(|j| x.get(i, j) * c.get(i, j)).sum::<f64>())
                .sum::<f64>();
            verify_solution(c, a, b, &x, &u, &v, scale)?;
            return Ok((cost, x));
        };

        let cycle = basis.cycle(entering);
        // theta = smallest flow among the minus-signed (odd-position) cells
        let mut theta = f64::INFINITY;
        let mut leaving = None;
        for (t, &(i, j)) in cycle.iter().enumerate() {
            if t % 2 == 1 {
                let flow = x.get(i, j);
                // Bland tie-break: strictly-smaller keeps the first minimizer
                if flow < theta {
                    theta = flow;
                    leaving = Some((i, j));
                }
            }
        }
        let leaving = leaving.expect("cycle has at least one minus cell");
        for (t, &(i, j)) in cycle.iter().enumerate() {
            let delta = if t % 2 == 0 { theta } else { -theta };
            x.set(i, j, (x.get(i, j) + delta).max(0.0));
        }
        let pos = basis.cells.iter().position(|&cell| cell == leaving).unwrap();
        basis.cells[pos] = entering;
    }
    Err(Error::Numeric("transportation simplex failed to terminate".into()))
}

/// Feasibility plus dual-feasibility certificate of the returned plan.
fn verify_solution(
    c: &Matrix,
    a: &[f64],
    b: &[f64],
    x: &Matrix,
    u: &[f64],
    v: &[f64],
    scale: f64,
) -> Result<()> {
    let (n, m) = (c.rows(), c.cols());
    let tol = 1e-9 * scale.max(1.0);
    for i in 0..n {
        let s: f64 = x.row(i).iter().sum();
        if (s - a[i]).abs() > tol {
            return Err(Error::Numeric(format!("row {i} marginal off by {}", s - a[i])));
        }
    }
    for j in 0..m {
        let s: f64 = (0..n).map(|i| x.get(i, j)).sum();
        if (s - b[j]).abs() > tol {
            return Err(Error::Numeric(format!("col {j} marginal off by {}", s - b[j])));
        }
    }
    for i in 0..n {
        for j in 0..m {
            if c.get(i, j) - u[i] - v[j] < -tol {
                return Err(Error::Numeric(format!("negative reduced cost at ({i},{j})")));
            }
        }
    }
    Ok(())
}
