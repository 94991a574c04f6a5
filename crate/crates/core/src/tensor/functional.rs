//! Composite operations built from the primitive op set.

use ndarray::Array2;

use super::{Tape, Var};
use crate::error::{Error, Result};

impl Tape {
    /// Divides each row by `max(‖row‖₂, floor)`.
    pub fn row_normalize(&mut self, a: Var, floor: f64) -> Result<Var> {
        let sq = self.mul(a, a)?;
        let ss = self.sum_rows(sq)?;
        let ss = self.clamp(ss, floor * floor, f64::INFINITY)?;
        let norm = self.sqrt(ss)?;
        self.div_col(a, norm)
    }

    /// Cosine similarity matrix `[A x B]` between the rows of `a` and `b`,
    /// divided by `tau`.
    pub fn cosine_logits(&mut self, a: Var, b: Var, tau: f64) -> Result<Var> {
        if self.shape(a).1 != self.shape(b).1 {
            return Err(Error::dim("cosine_logits", self.shape(a), self.shape(b)));
        }
        let na = self.row_normalize(a, 1e-12)?;
        let nb = self.row_normalize(b, 1e-12)?;
        let nbt = self.transpose(nb)?;
        let sim = self.matmul(na, nbt)?;
        self.scale(sim, 1.0 / tau)
    }

    /// Per-row negative log-softmax of the diagonal entry of a square logit
    /// matrix, `[S x 1]`. Rows are shifted by their (constant) maximum first.
    pub fn diagonal_nll(&mut self, logits: Var) -> Result<Var> {
        let (s, c) = self.shape(logits);
        if s != c {
            return Err(Error::dim("diagonal_nll", (s, c), (s, s)));
        }
        let row_max = {
            let d = self.data(logits);
            Array2::from_shape_fn((s, 1), |(i, _)| d.row(i).fold(f64::NEG_INFINITY, |m, &x| m.max(x)))
        };
        let row_max = self.constant(row_max);
        let shifted = self.sub_col(logits, row_max)?;
        let e = self.exp(shifted)?;
        let z = self.sum_rows(e)?;
        let lse = self.log(z)?;
        let eye = self.constant(Array2::eye(s));
        let masked = self.mul(shifted, eye)?;
        let diag = self.sum_rows(masked)?;
        self.sub(lse, diag)
    }
}
