use crate::numerics::Tensor;
use crate::{Error, Result};

/// Minimum-cost perfect matching of rows to columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `perm[row] = column`.
    pub perm: Vec<usize>,
    /// `Σ cost[i][perm[i]]`, summed in row order.
    pub total_cost: f64,
}

/// Hungarian algorithm (shortest augmenting paths with row/column
/// potentials), `O(n³)`.
pub fn hungarian(cost: &Tensor) -> Result<Assignment> {
    let (n, c) = cost.dims2()?;
    if cost.shape().len() != 2 || n != c {
        return Err(Error::Dimension(format!(
            "assignment needs a square cost matrix, got {:?}",
            cost.shape()
        )));
    }
    cost.check_finite("assignment cost")?;
    let a = |i: usize, j: usize| cost.data()[i * n + j];

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
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
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[row_of_col[j] - 1] = j - 1;
    }
    let total_cost = perm.iter().enumerate().map(|(i, &j)| a(i, j)).sum();
    Ok(Assignment { perm, total_cost })
}
