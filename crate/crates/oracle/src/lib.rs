//! Straight-line reference implementations of the regression classifier.
//!
//! Everything here works on plain `Vec<f64>` columns and nested vectors, uses
//! normal equations with Gaussian elimination instead of any SVD, and loops
//! over every index explicitly. It shares no code with `isrc-core`; tests use
//! it as an independent second route to the same numbers.

/// A matrix stored as a list of columns, each of equal length.
pub type Columns = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` when a pivot vanishes.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if a[i][k].abs() > a[p][k].abs() {
                p = i;
            }
        }
        if a[p][k] == 0.0 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Some(x)
}

/// Gram matrix `Z'Z` of a column list.
pub fn gram(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = dot(&cols[i], &cols[j]);
        }
    }
    g
}

/// `theta = (Z'Z)^{-1} Z' rho`.
pub fn normal_equations(cols: &[Vec<f64>], rho: &[f64]) -> Option<Vec<f64>> {
    let b: Vec<f64> = cols.iter().map(|c| dot(c, rho)).collect();
    gauss_solve(gram(cols), b)
}

/// `Z theta`.
pub fn reconstruct(cols: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    let tau = cols[0].len();
    let mut out = vec![0.0; tau];
    for (c, t) in cols.iter().zip(theta) {
        for i in 0..tau {
            out[i] += c[i] * t;
        }
    }
    out
}

/// Euclidean residual of `rho` against the span of `cols`, by normal equations.
pub fn residual(cols: &[Vec<f64>], rho: &[f64]) -> Option<f64> {
    let theta = normal_equations(cols, rho)?;
    let proj = reconstruct(cols, &theta);
    let mut s = 0.0;
    for i in 0..rho.len() {
        let d = rho[i] - proj[i];
        s += d * d;
    }
    Some(s.sqrt())
}

/// Residual grid `r[y][j]` for galleries `classes[y]` and probe columns.
pub fn residual_grid(classes: &[Columns], probes: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(classes.len());
    for cols in classes {
        let mut row = Vec::with_capacity(probes.len());
        for p in probes {
            row.push(residual(cols, p)?);
        }
        out.push(row);
    }
    Some(out)
}

/// Pseudoinverse of a full-column-rank matrix, `(Z'Z)^{-1} Z'`, returned as
/// `N` rows of length `tau`.
pub fn pinv_normal(cols: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = cols.len();
    let tau = cols[0].len();
    let g = gram(cols);
    // Solve G X = Z' one column of Z' (i.e. one pixel) at a time.
    let mut rows = vec![vec![0.0; tau]; n];
    for i in 0..tau {
        let rhs: Vec<f64> = cols.iter().map(|c| c[i]).collect();
        let x = gauss_solve(g.clone(), rhs)?;
        for k in 0..n {
            rows[k][i] = x[k];
        }
    }
    Some(rows)
}

/// Numerical column rank by Gaussian elimination with full pivoting. Pivots
/// below `rel_tol` times the largest initial entry count as zero.
pub fn rank(cols: &[Vec<f64>], rel_tol: f64) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let tau = cols[0].len();
    let n = cols.len();
    let mut a = vec![vec![0.0; n]; tau];
    let mut scale: f64 = 0.0;
    for j in 0..n {
        for i in 0..tau {
            a[i][j] = cols[j][i];
            scale = scale.max(cols[j][i].abs());
        }
    }
    if scale == 0.0 {
        return 0;
    }
    let mut r = 0;
    let mut row = 0;
    let mut used = vec![false; n];
    while row < tau {
        let mut best = 0.0;
        let mut bi = 0;
        let mut bj = 0;
        for i in row..tau {
            for j in 0..n {
                if !used[j] && a[i][j].abs() > best {
                    best = a[i][j].abs();
                    bi = i;
                    bj = j;
                }
            }
        }
        if best <= rel_tol * scale {
            break;
        }
        a.swap(row, bi);
        used[bj] = true;
        for i in row + 1..tau {
            let f = a[i][bj] / a[row][bj];
            for j in 0..n {
                a[i][j] -= f * a[row][j];
            }
        }
        row += 1;
        r += 1;
    }
    r
}

/// Oracle decision: winning class index and whether a tie had to be broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pick {
    pub class: usize,
    pub tie_broken: bool,
}

/// Majority vote, ties by mean residual over all images, then lowest index.
pub fn majority_vote(r: &[Vec<f64>]) -> Pick {
    let classes = r.len();
    let images = r[0].len();
    let mut votes = vec![0usize; classes];
    for j in 0..images {
        let mut best = 0;
        for y in 1..classes {
            if r[y][j] < r[best][j] {
                best = y;
            }
        }
        votes[best] += 1;
    }
    let top = *votes.iter().max().unwrap();
    let tied: Vec<usize> = (0..classes).filter(|&y| votes[y] == top).collect();
    if tied.len() == 1 {
        return Pick { class: tied[0], tie_broken: false };
    }
    let mean = |y: usize| r[y].iter().sum::<f64>() / images as f64;
    let mut best = tied[0];
    for &y in &tied[1..] {
        if mean(y) < mean(best) {
            best = y;
        }
    }
    Pick { class: best, tie_broken: true }
}

/// Class with the smallest single residual.
pub fn nearest_neighbour(r: &[Vec<f64>]) -> Pick {
    let mins: Vec<f64> = r
        .iter()
        .map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    let mut best = 0;
    for y in 1..mins.len() {
        if mins[y] < mins[best] {
            best = y;
        }
    }
    let ties = mins.iter().filter(|&&m| m == mins[best]).count();
    Pick { class: best, tie_broken: ties > 1 }
}

/// Exponentially weighted vote; returns the pick and the accumulated weights.
pub fn exponential_vote(r: &[Vec<f64>], beta: f64, normalize: bool) -> (Pick, Vec<f64>) {
    let mut total = 0.0;
    let mut count = 0.0;
    for row in r {
        for &v in row {
            total += v;
            count += 1.0;
        }
    }
    let mean = total / count;
    let divisor = if normalize && mean > 0.0 { mean } else { 1.0 };
    let mut sums = Vec::with_capacity(r.len());
    for row in r {
        let mut s = 0.0;
        for &v in row {
            s += (-beta * (v / divisor)).exp();
        }
        sums.push(s);
    }
    let mut best = 0;
    for y in 1..sums.len() {
        if sums[y] > sums[best] {
            best = y;
        }
    }
    let ties = sums.iter().filter(|&&s| s == sums[best]).count();
    (Pick { class: best, tie_broken: ties > 1 }, sums)
}
