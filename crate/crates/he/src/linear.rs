//! Encrypted-vector × plaintext-matrix products at multiplicative depth one.
//!
//! [`MatvecPlan`] splits the `D` generalized diagonals of a `D × K` matrix
//! (`D` the padded input length) over `r` slot blocks of width `D`, each
//! block holding the input pre-rotated by `b·q` for `b < r`, `q = D / r`.
//! One pass multiplies `q` rotations of the input by the matching diagonal
//! pieces (baby-step/giant-step), rescales once, and folds the `r` blocks
//! together. Afterwards every block carries the `K` outputs in its first `K`
//! slots and zeros elsewhere.

use crate::backend::{Ciphertext, HeBackend, Plaintext};
use crate::error::{HeError, Result};
use crate::keys::GaloisKeys;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatvecPlan {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Padded input length, a power of two.
    pub width: usize,
    /// Blocks combined by the final fold.
    pub blocks: usize,
    /// Diagonals handled per block.
    pub diagonals: usize,
    pub baby: usize,
    pub giant: usize,
    pub slots: usize,
}

impl MatvecPlan {
    pub fn new(input_dim: usize, output_dim: usize, slots: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(HeError::InvalidArgument("empty matrix".into()));
        }
        let mut width = input_dim.max(output_dim).next_power_of_two();
        while width <= slots {
            let blocks = (slots / width).min(width);
            let diagonals = width / blocks;
            // Reads for outputs k < K must stay inside the block.
            if output_dim + diagonals <= width + 1 {
                let baby = 1 << diagonals.trailing_zeros().div_ceil(2);
                return Ok(Self {
                    input_dim,
                    output_dim,
                    width,
                    blocks,
                    diagonals,
                    baby,
                    giant: diagonals / baby,
                    slots,
                });
            }
            width *= 2;
        }
        Err(HeError::Capacity {
            len: input_dim.max(output_dim),
            slots,
        })
    }

    /// Rotation steps the evaluation needs (all powers of two).
    pub fn rotation_steps(&self) -> Vec<usize> {
        let mut steps = Vec::new();
        if self.baby > 1 {
            steps.push(1);
        }
        if self.giant > 1 {
            steps.push(self.baby);
        }
        let mut s = self.width;
        while s < self.width * self.blocks {
            steps.push(s);
            s *= 2;
        }
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    /// Slot layout the input vector must be encrypted in.
    pub fn pack_input(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.input_dim {
            return Err(HeError::Mismatch(format!(
                "input of length {} for plan {}",
                u.len(),
                self.input_dim
            )));
        }
        let d = self.width;
        let mut out = vec![0.0; self.slots];
        for blk in 0..self.slots / d {
            let shift = (blk % self.blocks) * self.diagonals;
            for t in 0..d {
                let src = (t + shift) % d;
                if src < self.input_dim {
                    out[blk * d + t] = u[src];
                }
            }
        }
        Ok(out)
    }

    /// Output values from decrypted slots.
    pub fn unpack_output(&self, slots: &[f64]) -> Vec<f64> {
        slots[..self.output_dim].to_vec()
    }
}

/// A plaintext matrix and bias encoded once for repeated evaluation.
#[derive(Debug, Clone)]
pub struct EncodedMatrix {
    pub plan: MatvecPlan,
    /// Indexed `g·baby + h`, pre-rotated right by `g·baby`.
    diagonals: Vec<Plaintext>,
    bias: Plaintext,
}

impl HeBackend {
    /// Encodes the row-major `input_dim × output_dim` matrix `m` and bias `c`.
    pub fn encode_matrix(&self, plan: MatvecPlan, m: &[f64], c: &[f64]) -> Result<EncodedMatrix> {
        if plan.slots != self.slot_count() {
            return Err(HeError::Mismatch("plan built for a different slot count".into()));
        }
        let (rows, cols) = (plan.input_dim, plan.output_dim);
        if m.len() != rows * cols || c.len() != cols {
            return Err(HeError::Mismatch(format!(
                "matrix of {} entries and bias of {} for a {rows}×{cols} plan",
                m.len(),
                c.len()
            )));
        }
        let d = plan.width;
        let s = plan.slots;
        let top = self.params().top_level();
        let factor = self.rescale_factor(top);
        let mut diagonals = Vec::with_capacity(plan.diagonals);
        for g in 0..plan.giant {
            for h in 0..plan.baby {
                let j = g * plan.baby + h;
                let mut diag = vec![0.0; s];
                for blk in 0..s / d {
                    let shift = (blk % plan.blocks) * plan.diagonals;
                    for k in 0..cols {
                        let row = (k + j + shift) % d;
                        if row < rows {
                            diag[blk * d + k] = m[row * cols + k];
                        }
                    }
                }
                let off = g * plan.baby;
                let rotated: Vec<f64> = (0..s).map(|t| diag[(t + s - off) % s]).collect();
                diagonals.push(self.encode(&rotated, top, factor)?);
            }
        }
        let mut bias = vec![0.0; s];
        for blk in 0..s / d {
            bias[blk * d..blk * d + cols].copy_from_slice(c);
        }
        let bias = self.encode(&bias, top - 1, self.params().scale())?;
        Ok(EncodedMatrix { plan, diagonals, bias })
    }

    /// Evaluates `u·M + c` on a ciphertext packed with
    /// [`MatvecPlan::pack_input`]. Consumes one level.
    pub fn matvec_ct_pt(&self, ct: &Ciphertext, enc: &EncodedMatrix, gk: &GaloisKeys) -> Result<Ciphertext> {
        let plan = &enc.plan;
        if ct.level() != self.params().top_level() || ct.scale() != self.params().scale() {
            return Err(HeError::Mismatch("matvec expects a fresh ciphertext".into()));
        }
        let mut baby = Vec::with_capacity(plan.baby);
        baby.push(ct.clone());
        for h in 1..plan.baby {
            let next = self.rotate(&baby[h - 1], 1, gk)?;
            baby.push(next);
        }
        let mut acc: Option<Ciphertext> = None;
        for g in (0..plan.giant).rev() {
            let mut inner: Option<Ciphertext> = None;
            for (h, rotated) in baby.iter().enumerate() {
                let term = self.mul_plain_raw(rotated, &enc.diagonals[g * plan.baby + h])?;
                inner = Some(match inner {
                    None => term,
                    Some(sum) => self.add(&sum, &term)?,
                });
            }
            let inner = inner.expect("at least one baby step");
            acc = Some(match acc {
                None => inner,
                Some(a) => self.add(&self.rotate(&a, plan.baby, gk)?, &inner)?,
            });
        }
        let mut out = self.rescale(&acc.expect("at least one giant step"))?;
        let mut step = plan.width;
        while step < plan.width * plan.blocks {
            out = self.add(&out, &self.rotate(&out, step, gk)?)?;
            step *= 2;
        }
        self.add_plain(&out, &enc.bias)
    }

    /// `Σ uᵢwᵢ` into slot 0: one multiply, then log₂(d) rotate-and-add steps.
    pub fn inner_product_ct_pt(&self, ct: &Ciphertext, w: &[f64], gk: &GaloisKeys) -> Result<Ciphertext> {
        if w.is_empty() || w.len() > self.slot_count() {
            return Err(HeError::Capacity {
                len: w.len(),
                slots: self.slot_count(),
            });
        }
        let mut out = self.mul_plain(ct, w)?;
        let mut step = 1;
        while step < w.len().next_power_of_two() {
            out = self.add(&out, &self.rotate(&out, step, gk)?)?;
            step *= 2;
        }
        Ok(out)
    }
}
