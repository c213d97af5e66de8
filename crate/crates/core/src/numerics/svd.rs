use crate::numerics::Tensor;
use crate::{Error, Result};

/// Thin SVD `m = u · diag(s) · vᵀ` with `k = min(rows, cols)` components.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub u: Tensor,
    /// Non-increasing, non-negative.
    pub s: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: Tensor,
}

const MAX_SWEEPS: usize = 80;

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
pub fn svd(m: &Tensor) -> Result<SvdResult> {
    m.check_finite("svd input")?;
    let (r, c) = m.dims2()?;
    if r >= c {
        let (u, s, v) = jacobi_tall(m.data(), r, c)?;
        Ok(SvdResult { u, s, v })
    } else {
        let t = m.transpose()?;
        let (v, s, u) = jacobi_tall(t.data(), c, r)?;
        Ok(SvdResult { u, s, v })
    }
}

/// Column-major working copy so rotations touch contiguous memory.
fn jacobi_tall(a: &[f64], m: usize, n: usize) -> Result<(Tensor, Vec<f64>, Tensor)> {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a[i * n + j]).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * (m as f64);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for i in 0..m {
                        al += cp[i] * cp[i];
                        be += cq[i] * cq[i];
                        ga += cp[i] * cq[i];
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut cols, p, q, cs, sn);
                rotate(&mut v, p, q, cs, sn);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "jacobi svd did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    // Stable on ties so the output is a deterministic function of the input.
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let s_max = order.first().map_or(0.0, |o| o.0);
    let zero_cut = s_max * f64::EPSILON * (m.max(n) as f64);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    let mut s = Vec::with_capacity(n);
    for (k, &(sv, j)) in order.iter().enumerate() {
        if sv > zero_cut && sv > 0.0 {
            u_cols.push(cols[j].iter().map(|x| x / sv).collect());
            s.push(sv);
        } else {
            u_cols.push(vec![0.0; m]);
            deficient.push(k);
            s.push(sv.max(0.0));
        }
    }
    complete_basis(&mut u_cols, &deficient, m);

    let mut u = vec![0.0; m * n];
    let mut vt = vec![0.0; n * n];
    for (k, &(_, j)) in order.iter().enumerate() {
        for i in 0..m {
            u[i * n + k] = u_cols[k][i];
        }
        for i in 0..n {
            vt[i * n + k] = v[j][i];
        }
    }
    Ok((Tensor::new(vec![m, n], u)?, s, Tensor::new(vec![n, n], vt)?))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, cs: f64, sn: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = cs * xp - sn * xq;
        *y = sn * xp + cs * xq;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all the
/// others, by Gram-Schmidt over the standard basis.
fn complete_basis(u: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let mut e = 0;
    for &k in missing {
        while e < m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            e += 1;
            for _ in 0..2 {
                for (j, col) in u.iter().enumerate() {
                    if j == k || col.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let d: f64 = col.iter().zip(&cand).map(|(a, b)| a * b).sum();
                    cand.iter_mut().zip(col).for_each(|(c, a)| *c -= d * a);
                }
            }
            let nrm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-8 {
                u[k] = cand.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul, RngState};

    fn residuals(m: &Tensor, r: &SvdResult) -> (f64, f64, f64) {
        let k = r.s.len();
        let mut us = r.u.clone();
        let (rows, _) = us.dims2().unwrap();
        for i in 0..rows {
            for j in 0..k {
                us.data_mut()[i * k + j] *= r.s[j];
            }
        }
        let rec = matmul(&us, &r.v.transpose().unwrap()).unwrap();
        let diff: f64 = rec
            .data()
            .iter()
            .zip(m.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let ortho = |q: &Tensor| {
            let g = matmul(&q.transpose().unwrap(), q).unwrap();
            let n = g.dims2().unwrap().0;
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((g.get2(i, j) - want).abs());
                }
            }
            worst
        };
        (diff, ortho(&r.u), ortho(&r.v))
    }

    #[test]
    fn identity_and_diagonal() {
        let r = svd(&Tensor::identity(4)).unwrap();
        assert_eq!(r.s, vec![1.0; 4]);
        let d = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let r = svd(&d).unwrap();
        assert_eq!(r.s, vec![3.0, 2.0]);
    }

    #[test]
    fn random_rectangular_residuals() {
        let mut rng = RngState::new(3);
        for &(r, c) in &[(20, 12), (12, 20), (1, 5), (64, 64)] {
            let m = Tensor::new(vec![r, c], (0..r * c).map(|_| rng.normal()).collect()).unwrap();
            let res = svd(&m).unwrap();
            let (rec, ou, ov) = residuals(&m, &res);
            assert!(rec <= 1e-8 * m.frobenius().max(1.0), "reconstruction {rec}");
            assert!(ou < 1e-8 && ov < 1e-8, "orthonormality {ou} {ov}");
            assert!(res.s.windows(2).all(|w| w[0] >= w[1]));
            assert!(res.s.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn rank_deficient_gets_orthonormal_completion() {
        // rank 1
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let res = svd(&m).unwrap();
        assert!(res.s[1].abs() < 1e-12);
        let (rec, ou, ov) = residuals(&m, &res);
        assert!(rec < 1e-12 && ou < 1e-12 && ov < 1e-12);
        let z = svd(&Tensor::zeros(&[3, 2])).unwrap();
        assert_eq!(z.s, vec![0.0, 0.0]);
        assert!(residuals(&Tensor::zeros(&[3, 2]), &z).1 < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Tensor::new(vec![1, 2], vec![f64::INFINITY, 0.0]).unwrap();
        assert!(matches!(svd(&m), Err(Error::Numeric(_))));
    }

    #[test]
    fn deterministic() {
        let mut rng = RngState::new(9);
        let m = Tensor::new(vec![9, 7], (0..63).map(|_| rng.normal()).collect()).unwrap();
        let (a, b) = (svd(&m).unwrap(), svd(&m).unwrap());
        assert_eq!(a.s, b.s);
        assert_eq!(a.u, b.u);
    }
}
