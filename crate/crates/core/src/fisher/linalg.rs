//! Small dense symmetric-matrix helpers for the information matrices
//! (dimensions here are at most a handful of parameters).

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        let scale: f64 = (0..n).map(|i| m[i][i].abs()).fold(1e-300, f64::max);
        if off.sqrt() < 1e-15 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * m[p][q]).atan2(m[p][p] - m[q][q]);
                let (c, s) = (theta.cos(), theta.sin());
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk + s * mqk;
                    m[q][k] = -s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp + s * mkq;
                    m[k][q] = -s * mkp + c * mkq;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// Eigen-decomposition of a symmetric 2x2 `[[a, c], [c, b]]`:
/// returns `(eigenvalues, rotation)` with columns of `rotation` the
/// eigenvectors.
pub fn eig_sym_2x2(a: f64, b: f64, c: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    if c.abs() < 1e-300 {
        return ([a, b], [[1.0, 0.0], [0.0, 1.0]]);
    }
    let theta = 0.5 * (2.0 * c).atan2(a - b);
    let (cs, sn) = (theta.cos(), theta.sin());
    let l1 = a * cs * cs + b * sn * sn + 2.0 * c * cs * sn;
    let l2 = a * sn * sn + b * cs * cs - 2.0 * c * cs * sn;
    ([l1, l2], [[cs, -sn], [sn, cs]])
}

/// Gauss-Jordan inverse with partial pivoting; `None` when singular
/// relative to the matrix scale.
pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let scale: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, aug[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if pivot < 1e-12 * scale {
            return None;
        }
        aug.swap(col, pivot_row);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        let v = aug[col][k];
                        aug[r][k] -= f * v;
                    }
                }
            }
        }
    }
    Some(aug.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Least-squares slope of `ln y` against `ln x` with its standard error.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(&a, &b)| a > 0.0 && b > 0.0)
        .map(|(&a, &b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 3 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum();
    let dof = (pts.len() as f64 - 2.0).max(1.0);
    let se = (ss_res / dof / sxx).sqrt();
    Some((slope, se))
}
