use crate::error::{dim_err, Result};

/// Per-query reference locations in the attended field's cell coordinates
/// (integer = cell centre), each with a validity flag.
///
/// Invalid locations (behind a camera, outside a grid) are skipped entirely:
/// they neither sample nor count towards any normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoints {
    pub dim: usize,
    pub per_query: usize,
    /// `[N, per_query, dim]`
    pub locs: Vec<f64>,
    /// `[N, per_query]`
    pub valid: Vec<bool>,
}

impl ReferencePoints {
    pub fn new(dim: usize, per_query: usize, locs: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if per_query == 0 || locs.len() != valid.len() * dim || valid.len() % per_query != 0 {
            return dim_err(format!(
                "reference layout mismatch: {} locs, {} flags, dim {dim}, {per_query} per query",
                locs.len(),
                valid.len()
            ));
        }
        Ok(Self {
            dim,
            per_query,
            locs,
            valid,
        })
    }

    /// All-valid references, one per query.
    pub fn single(dim: usize, locs: Vec<f64>) -> Result<Self> {
        let n = locs.len() / dim.max(1);
        Self::new(dim, 1, locs, vec![true; n])
    }

    /// One reference per cell of an `h × w` map at the cell itself, row-major.
    pub fn own_cells(h: usize, w: usize) -> Self {
        let mut locs = Vec::with_capacity(h * w * 2);
        for i in 0..h {
            for j in 0..w {
                locs.push(i as f64);
                locs.push(j as f64);
            }
        }
        Self {
            dim: 2,
            per_query: 1,
            locs,
            valid: vec![true; h * w],
        }
    }

    pub fn num_queries(&self) -> usize {
        self.valid.len() / self.per_query
    }

    #[inline]
    pub fn loc(&self, query: usize, r: usize) -> &[f64] {
        let i = (query * self.per_query + r) * self.dim;
        &self.locs[i..i + self.dim]
    }

    #[inline]
    pub fn is_valid(&self, query: usize, r: usize) -> bool {
        self.valid[query * self.per_query + r]
    }

    pub fn valid_count(&self, query: usize) -> usize {
        (0..self.per_query)
            .filter(|&r| self.is_valid(query, r))
            .count()
    }

    pub fn any_valid(&self, query: usize) -> bool {
        (0..self.per_query).any(|r| self.is_valid(query, r))
    }

    /// Queries reordered by `perm` (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let stride = self.per_query * self.dim;
        let mut locs = Vec::with_capacity(self.locs.len());
        let mut valid = Vec::with_capacity(self.valid.len());
        for &p in perm {
            locs.extend_from_slice(&self.locs[p * stride..(p + 1) * stride]);
            valid.extend_from_slice(&self.valid[p * self.per_query..(p + 1) * self.per_query]);
        }
        Self {
            dim: self.dim,
            per_query: self.per_query,
            locs,
            valid,
        }
    }
}
