use std::io::Write;

use crate::numerics::{gemm, svd, GemmOperand, Tensor};
use crate::{Error, Result};

/// Fraction of each view's variance kept before CCA.
pub const DEFAULT_VARIANCE_KEPT: f64 = 0.99;

/// Both weighting directions of one comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PwccaResult {
    /// Weights from the first view.
    pub ab: f64,
    /// Weights from the second view.
    pub ba: f64,
    pub mean: f64,
}

fn center(x: &Tensor) -> Result<Tensor> {
    let (n, d) = x.dims2()?;
    let mut out = x.clone();
    for j in 0..d {
        let mean = (0..n).map(|i| x.get2(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            out.data_mut()[i * d + j] -= mean;
        }
    }
    Ok(out)
}

/// Orthonormal basis (`n x k`) of the leading directions holding `keep` of
/// the variance of centered `xc`.
fn truncated_basis(xc: &Tensor, keep: f64, which: &str) -> Result<Tensor> {
    let (n, _) = xc.dims2()?;
    let dec = svd(xc)?;
    let s = &dec.s;
    let floor = s.first().copied().unwrap_or(0.0) * n as f64 * f64::EPSILON;
    let rank = s.iter().take_while(|&&v| v > floor).count();
    if rank == 0 {
        return Err(Error::Degeneracy(format!("{which} view has no variance")));
    }
    let total: f64 = s[..rank].iter().map(|v| v * v).sum();
    let mut acc = 0.0;
    let mut k = 0;
    while k < rank {
        acc += s[k] * s[k];
        k += 1;
        if acc >= keep * total {
            break;
        }
    }
    let data = (0..n)
        .flat_map(|i| dec.u.row(i)[..k].to_vec())
        .collect::<Vec<_>>();
    Tensor::new(vec![n, k], data)
}

/// Aᵀ·B for `n x p` and `n x q`.
fn at_b(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, p) = a.dims2()?;
    let (_, q) = b.dims2()?;
    let mut out = vec![0.0; p * q];
    gemm(
        p,
        n,
        q,
        1.0,
        GemmOperand::transposed(a.data(), p),
        GemmOperand::rows(b.data(), q),
        0.0,
        &mut out,
        q,
    );
    Tensor::new(vec![p, q], out)
}

/// Projection-weighted CCA similarity of `x` and `y` (rows aligned).
///
/// Weights come from `x`: each canonical variate of `x` is weighted by the
/// summed absolute inner product with the centered columns of `x`. The
/// result lies in `[0, 1]`.
pub fn pwcca(x: &Tensor, y: &Tensor, keep: f64) -> Result<f64> {
    let (n, _) = x.dims2()?;
    let (ny, _) = y.dims2()?;
    if n != ny {
        return Err(Error::Dimension(format!("{n} rows against {ny} rows")));
    }
    if n < 2 {
        return Err(Error::Sampling("pwcca needs at least two rows".into()));
    }
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::Config(format!(
            "variance fraction {keep} not in (0, 1]"
        )));
    }
    x.check_finite("pwcca first view")?;
    y.check_finite("pwcca second view")?;
    let xc = center(x)?;
    let qx = truncated_basis(&xc, keep, "first")?;
    let qy = truncated_basis(&center(y)?, keep, "second")?;
    let cca = svd(&at_b(&qx, &qy)?)?;
    let rho: Vec<f64> = cca.s.iter().map(|r| r.clamp(0.0, 1.0)).collect();
    let m = rho.len();
    // Canonical variates of x, then their inner products with x's columns.
    let h = {
        let (kx, _) = cca.u.dims2()?;
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            kx,
            m,
            1.0,
            GemmOperand::rows(qx.data(), kx),
            GemmOperand::rows(cca.u.data(), m),
            0.0,
            &mut out,
            m,
        );
        Tensor::new(vec![n, m], out)?
    };
    let proj = at_b(&h, &xc)?;
    let alpha: Vec<f64> = (0..m)
        .map(|i| proj.row(i).iter().map(|v| v.abs()).sum())
        .collect();
    let total: f64 = alpha.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degeneracy("all projection weights vanish".into()));
    }
    let value = alpha.iter().zip(&rho).map(|(a, r)| a * r).sum::<f64>() / total;
    assert!(
        (0.0..=1.0 + 1e-12).contains(&value),
        "pwcca {value} escaped [0, 1]"
    );
    Ok(value.min(1.0))
}

pub fn pwcca_both(x: &Tensor, y: &Tensor, keep: f64) -> Result<PwccaResult> {
    let ab = pwcca(x, y, keep)?;
    let ba = pwcca(y, x, keep)?;
    Ok(PwccaResult {
        ab,
        ba,
        mean: (ab + ba) / 2.0,
    })
}

/// `dir,layer,value` with `dir` in `ab`, `ba`, `mean`.
pub fn write_pwcca_csv(mut out: impl Write, rows: &[(usize, PwccaResult)]) -> std::io::Result<()> {
    writeln!(out, "dir,layer,value")?;
    for (layer, r) in rows {
        writeln!(out, "ab,{layer},{}", r.ab)?;
        writeln!(out, "ba,{layer},{}", r.ba)?;
        writeln!(out, "mean,{layer},{}", r.mean)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn gaussian(n: usize, d: usize, rng: &mut RngState) -> Tensor {
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let x = gaussian(200, 10, &mut RngState::new(0));
        assert!((pwcca(&x, &x, DEFAULT_VARIANCE_KEPT).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotation_invariant() {
        let mut rng = RngState::new(1);
        let x = gaussian(300, 8, &mut rng);
        let a = gaussian(8, 8, &mut rng);
        let y = crate::numerics::matmul(&x, &a).unwrap();
        let r = pwcca_both(&x, &y, DEFAULT_VARIANCE_KEPT).unwrap();
        assert!((r.ab - 1.0).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn errors() {
        let x = gaussian(20, 3, &mut RngState::new(2));
        let y = gaussian(21, 3, &mut RngState::new(3));
        assert!(matches!(pwcca(&x, &y, 0.99), Err(Error::Dimension(_))));
        let flat = Tensor::full(&[20, 3], 4.0);
        assert!(matches!(pwcca(&flat, &x, 0.99), Err(Error::Degeneracy(_))));
        assert!(pwcca(&x, &x, 0.0).is_err());
    }
}
