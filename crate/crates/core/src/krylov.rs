//! Restarted GMRES with right preconditioning on real vectors.

/// Result of [`gmres`]. The last iterate is returned even when the budget
/// runs out before `rel_tol` is met.
#[derive(Debug, Clone)]
pub(crate) struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` starting from zero. `apply(v, out)` writes `A v`,
/// `precond(v, out)` writes `M^{-1} v`; the Krylov space is built for
/// `A M^{-1}`, so the reported residual is the true one.
pub(crate) fn gmres(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return GmresOutcome {
            x,
            iterations: 0,
            rel_residual: 0.0,
        };
    }
    let restart = restart.clamp(1, n.max(1));
    let mut total = 0;
    let mut r = b.to_vec();
    let mut tmp = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        let beta = norm(&r);
        if beta <= rel_tol * bnorm || total >= max_iter {
            return GmresOutcome {
                x,
                iterations: total,
                rel_residual: beta / bnorm,
            };
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..restart {
            precond(&basis[j], &mut z);
            apply(&z, &mut tmp);
            // modified Gram-Schmidt
            for (i, q) in basis.iter().enumerate() {
                let hij = dot(&tmp, q);
                h[i][j] = hij;
                for (t, qv) in tmp.iter_mut().zip(q) {
                    *t -= hij * qv;
                }
            }
            let hn = norm(&tmp);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = h[j][j].hypot(h[j + 1][j]);
            if d == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / d;
                sn[j] = h[j + 1][j] / d;
            }
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            total += 1;
            if g[j + 1].abs() <= rel_tol * bnorm || hn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(tmp.iter().map(|v| v / hn).collect());
        }
        // back substitution for the least-squares coefficients
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|k| h[i][k] * y[k]).sum();
            y[i] = if h[i][i] == 0.0 {
                0.0
            } else {
                (g[i] - s) / h[i][i]
            };
        }
        let mut update = vec![0.0; n];
        for (yi, q) in y.iter().zip(&basis) {
            for (u, qv) in update.iter_mut().zip(q) {
                *u += yi * qv;
            }
        }
        precond(&update, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        apply(&x, &mut tmp);
        for ((ri, bi), ai) in r.iter_mut().zip(b).zip(&tmp) {
            *ri = bi - ai;
        }
    }
}
