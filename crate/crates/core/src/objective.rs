//! Non-saturating logistic losses for the unconditional and conditional
//! heads, their λ-weighted combination, and the R1 input-gradient penalty.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{discriminator_forward_batch, DiscriminatorParams, DiscriminatorTrace, DiscriminatorVars, LEAKY_SLOPE};

/// How the two branch losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `uncond + λ·cond`
    Additive,
    /// `(1 − λ)·uncond + λ·cond`
    Convex,
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(Self::Additive),
            "convex" => Ok(Self::Convex),
            other => Err(Error::contract(format!("unknown loss formulation '{other}'"))),
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Additive => "additive",
            Self::Convex => "convex",
        })
    }
}

/// Per-sample scores from one discriminator head pair (`batch × 1` each).
#[derive(Debug, Clone, Copy)]
pub struct BranchScores {
    pub uncond: Var,
    pub cond: Var,
}

impl From<&DiscriminatorTrace> for BranchScores {
    fn from(t: &DiscriminatorTrace) -> Self {
        Self {
            uncond: t.uncond,
            cond: t.cond,
        }
    }
}

/// All six loss scalars on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub d_uncond: Var,
    pub d_cond: Var,
    pub g_uncond: Var,
    pub g_cond: Var,
    pub d_total: Var,
    pub g_total: Var,
    pub formulation: Formulation,
}

/// Plain values of [`LossTerms`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub d_uncond: f64,
    pub d_cond: f64,
    pub g_uncond: f64,
    pub g_cond: f64,
    pub d_total: f64,
    pub g_total: f64,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> Result<LossValues> {
        Ok(LossValues {
            d_uncond: tape.scalar_value(self.d_uncond)?,
            d_cond: tape.scalar_value(self.d_cond)?,
            g_uncond: tape.scalar_value(self.g_uncond)?,
            g_cond: tape.scalar_value(self.g_cond)?,
            d_total: tape.scalar_value(self.d_total)?,
            g_total: tape.scalar_value(self.g_total)?,
        })
    }
}

/// `mean(softplus(−real)) + mean(softplus(fake))`.
pub fn branch_d_loss(tape: &mut Tape, real: Var, fake: Var) -> Result<Var> {
    let neg_real = tape.scale(real, -1.0)?;
    let sp_real = tape.softplus(neg_real)?;
    let real_term = tape.mean(sp_real)?;
    let sp_fake = tape.softplus(fake)?;
    let fake_term = tape.mean(sp_fake)?;
    tape.add(real_term, fake_term)
}

/// `mean(softplus(−fake))`.
pub fn branch_g_loss(tape: &mut Tape, fake: Var) -> Result<Var> {
    let neg = tape.scale(fake, -1.0)?;
    let sp = tape.softplus(neg)?;
    tape.mean(sp)
}

/// Combines branch losses according to `formulation`.
pub fn combine(tape: &mut Tape, uncond: Var, cond: Var, lambda: f64, formulation: Formulation) -> Result<Var> {
    let weighted_cond = tape.scale(cond, lambda)?;
    match formulation {
        Formulation::Additive => tape.add(uncond, weighted_cond),
        Formulation::Convex => {
            let weighted_uncond = tape.scale(uncond, 1.0 - lambda)?;
            tape.add(weighted_uncond, weighted_cond)
        }
    }
}

fn check_batches(tape: &Tape, real: BranchScores, fake: BranchScores) -> Result<()> {
    let r = tape.value(real.uncond).shape();
    let f = tape.value(fake.uncond).shape();
    if tape.value(real.cond).shape() != r || tape.value(fake.cond).shape() != f {
        return Err(Error::contract("branch scores must share a shape"));
    }
    if r != f {
        return Err(Error::Dimension {
            op: "combined_losses",
            lhs: r.to_vec(),
            rhs: f.to_vec(),
        });
    }
    Ok(())
}

/// Branch losses for both heads combined with weight `lambda`.
pub fn combined_losses(
    tape: &mut Tape,
    real: BranchScores,
    fake: BranchScores,
    lambda: f64,
    formulation: Formulation,
) -> Result<LossTerms> {
    check_batches(tape, real, fake)?;
    let d_uncond = branch_d_loss(tape, real.uncond, fake.uncond)?;
    let d_cond = branch_d_loss(tape, real.cond, fake.cond)?;
    let g_uncond = branch_g_loss(tape, fake.uncond)?;
    let g_cond = branch_g_loss(tape, fake.cond)?;
    let d_total = combine(tape, d_uncond, d_cond, lambda, formulation)?;
    let g_total = combine(tape, g_uncond, g_cond, lambda, formulation)?;
    Ok(LossTerms {
        d_uncond,
        d_cond,
        g_uncond,
        g_cond,
        d_total,
        g_total,
        formulation,
    })
}

/// Generator-side objective only, for the generator update.
pub fn generator_objective(tape: &mut Tape, fake: BranchScores, lambda: f64, formulation: Formulation) -> Result<Var> {
    let g_uncond = branch_g_loss(tape, fake.uncond)?;
    let g_cond = branch_g_loss(tape, fake.cond)?;
    combine(tape, g_uncond, g_cond, lambda, formulation)
}

/// Differentiable `∂ uncond_score / ∂ x` for every row of the batch that
/// produced `trace`. The trunk uses leaky ReLU, whose derivative is
/// piecewise constant, so the activation masks enter as constants.
pub fn uncond_input_gradient(tape: &mut Tape, params: &DiscriminatorVars, trace: &DiscriminatorTrace) -> Result<Var> {
    let (batch, _) = tape.value(trace.uncond).dims2()?;
    let ones = tape.constant(Tensor::matrix(batch, 1, vec![1.0; batch])?)?;
    let head_t = tape.transpose(params.uncond_head.weight)?;
    let mut g = tape.matmul(ones, head_t)?;
    for (layer, &pre) in params.trunk_layers.iter().zip(&trace.preactivations).rev() {
        let pre_v = tape.value(pre);
        let mask: Vec<f64> = pre_v
            .data()
            .iter()
            .map(|&a| if a > 0.0 { 1.0 } else { LEAKY_SLOPE })
            .collect();
        let mask = tape.constant(Tensor::new(pre_v.shape().to_vec(), mask)?)?;
        let gated = tape.mul(g, mask)?;
        let w_t = tape.transpose(layer.weight)?;
        g = tape.matmul(gated, w_t)?;
    }
    Ok(g)
}

/// `weight / 2 · mean_batch ‖∇ₓ uncond_score(x)‖²` on the real batch.
/// With `weight == 0` a constant zero is returned.
pub fn r1_penalty(
    tape: &mut Tape,
    params: &DiscriminatorVars,
    real_trace: &DiscriminatorTrace,
    weight: f64,
) -> Result<Var> {
    if weight < 0.0 {
        return Err(Error::contract("r1 weight must be non-negative"));
    }
    if weight == 0.0 {
        return tape.constant(Tensor::scalar(0.0));
    }
    let (batch, _) = tape.value(real_trace.uncond).dims2()?;
    let g = uncond_input_gradient(tape, params, real_trace)?;
    let sq = tape.mul(g, g)?;
    let total = tape.sum(sq)?;
    tape.scale(total, weight / (2.0 * batch as f64))
}

/// Value of [`r1_penalty`] for concrete parameters and a real batch.
pub fn r1_penalty_value(params: &DiscriminatorParams, real: &Tensor, weight: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true)?;
    let (batch, _) = real.dims2()?;
    let x = tape.constant(real.clone())?;
    let labels = vec![0; batch];
    let trace = discriminator_forward_batch(&mut tape, &vars, x, &labels)?;
    let p = r1_penalty(&mut tape, &vars, &trace, weight)?;
    tape.scalar_value(p)
}
