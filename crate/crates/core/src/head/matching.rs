use super::boxes::{Box3D, BOX_GEOMETRY};
use crate::error::{Error, Result};

/// Weights of the matching cost `w_cls·(−log p_class) + w_reg·L1(box)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub cls: f64,
    pub reg: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            reg: 0.25,
        }
    }
}

/// Prediction → ground-truth index; `None` is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub pred_to_gt: Vec<Option<usize>>,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pred_to_gt
            .iter()
            .enumerate()
            .filter_map(|(p, g)| g.map(|g| (p, g)))
    }

    pub fn num_matched(&self) -> usize {
        self.pred_to_gt.iter().filter(|g| g.is_some()).count()
    }
}

/// Minimum-cost assignment for `n ≤ m` (shortest augmenting paths with
/// potentials). Returns the column of every row.
fn assign_rows(cost: &[f64], n: usize, m: usize) -> Vec<usize> {
    let a = |i: usize, j: usize| cost[(i - 1) * m + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // row (1-based) matched to each column, 0 = free
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    col
}

/// Optimal one-to-one assignment on a row-major `rows × cols` cost matrix.
/// `min(rows, cols)` pairs are formed; the rest of the rows stay unassigned.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<Option<usize>>> {
    if cost.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cost matrix has {} entries, expected {rows}x{cols}",
            cost.len()
        )));
    }
    if let Some(bad) = cost.iter().find(|c| !c.is_finite()) {
        return Err(Error::Numeric(format!("non-finite matching cost {bad}")));
    }
    if rows == 0 || cols == 0 {
        return Ok(vec![None; rows]);
    }
    if rows <= cols {
        return Ok(assign_rows(cost, rows, cols)
            .into_iter()
            .map(Some)
            .collect());
    }
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = cost[i * cols + j];
        }
    }
    let mut out = vec![None; rows];
    for (j, i) in assign_rows(&t, cols, rows).into_iter().enumerate() {
        out[i] = Some(j);
    }
    Ok(out)
}

/// L1 distance over the geometric box parameters.
pub fn box_l1(pred: &[f64], gt: &[f64]) -> f64 {
    pred[..BOX_GEOMETRY]
        .iter()
        .zip(&gt[..BOX_GEOMETRY])
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Matches decoded boxes to ground truth; `p_class` is the score when the
/// classes agree and a floor of 1e-12 otherwise.
pub fn hungarian_match(pred: &[Box3D], gt: &[Box3D], w: &CostWeights) -> Result<Assignment> {
    let mut cost = Vec::with_capacity(pred.len() * gt.len());
    for p in pred {
        let pp = p.to_params();
        for g in gt {
            let prob = if p.class == g.class { p.score } else { 0.0 };
            cost.push(w.cls * -prob.max(1e-12).ln() + w.reg * box_l1(&pp, &g.to_params()));
        }
    }
    Ok(Assignment {
        pred_to_gt: hungarian(&cost, pred.len(), gt.len())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_optimum() {
        let a = hungarian(&[1.0, 2.0, 2.0, 1.0], 2, 2).unwrap();
        assert_eq!(a, vec![Some(0), Some(1)]);
    }

    #[test]
    fn greedy_is_not_optimal_here() {
        // Greedy takes (0,0)=1 then (1,1)=10; the optimum is 2 + 3.
        let a = hungarian(&[1.0, 2.0, 3.0, 10.0], 2, 2).unwrap();
        assert_eq!(a, vec![Some(1), Some(0)]);
    }

    #[test]
    fn extra_predictions_are_background() {
        let cost = [5.0, 0.0, 1.0, 9.0, 9.0, 9.0];
        let a = hungarian(&cost, 3, 2).unwrap();
        assert_eq!(a.iter().filter(|x| x.is_some()).count(), 2);
        assert_eq!(a, vec![Some(1), Some(0), None]);
    }

    #[test]
    fn empty_sides() {
        assert_eq!(hungarian(&[], 3, 0).unwrap(), vec![None; 3]);
        assert_eq!(hungarian(&[], 0, 4).unwrap(), vec![]);
    }

    #[test]
    fn rejects_nan() {
        assert!(hungarian(&[f64::NAN], 1, 1).is_err());
    }

    #[test]
    fn boxes_match_by_class_and_position() {
        let g = vec![
            Box3D::new([0.0, 0.0, 0.0], [1.0; 3], 0.0, None, 0).unwrap(),
            Box3D::new([5.0, 0.0, 0.0], [1.0; 3], 0.0, None, 1).unwrap(),
        ];
        let p = vec![
            Box3D::new([5.2, 0.0, 0.0], [1.0; 3], 0.0, None, 1)
                .unwrap()
                .with_score(0.9),
            Box3D::new([9.0, 9.0, 0.0], [1.0; 3], 0.0, None, 2)
                .unwrap()
                .with_score(0.9),
            Box3D::new([0.1, 0.0, 0.0], [1.0; 3], 0.0, None, 0)
                .unwrap()
                .with_score(0.8),
        ];
        let a = hungarian_match(&p, &g, &CostWeights::default()).unwrap();
        assert_eq!(a.pred_to_gt, vec![Some(1), None, Some(0)]);
    }
}
