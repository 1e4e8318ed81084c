//! Sequence-length and sampling-complexity calculators.
//!
//! Logarithms are natural.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame::FrameOperator;
use crate::group::IrrepSpec;
use crate::spectra::{tabulated_gap, TableArch};

/// Bound on `log g(δ/Δ)` used by the simplified forms, valid for `δ/Δ <= 1/5`.
pub const LOG_G_SIMPLIFIED: f64 = 1.8;
/// Bound on `log c_ad` for unitary 3-designs on qubits, per qubit.
pub const DESIGN_LOG_C_PER_QUBIT: f64 = 1.75;

/// `g(x) = (1-4x) x + (1+x)/(1-4x)`; infinite for `x >= 1/4`.
pub fn g_factor(x: f64) -> f64 {
    if x >= 0.25 {
        return f64::INFINITY;
    }
    (1.0 - 4.0 * x) * x + (1.0 + x) / (1.0 - 4.0 * x)
}

/// Ceiling that ignores float noise of a few ulps above an integer.
fn ceil_tol(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// `c_λ` and whether the irrep is aligned with the measurement (`[P_λ, M] = 0`).
pub fn c_lambda(frame: &FrameOperator, irrep: &IrrepSpec) -> Result<(f64, bool)> {
    let pinv = frame.pinv_norm(irrep)?;
    let aligned = frame.is_aligned(irrep);
    let tr_p = irrep.projector.matrix().trace();
    let c = if aligned {
        (frame.block(irrep) * tr_p).sqrt() * pinv
    } else {
        let d = (frame.p as f64).powi(frame.n as i32);
        tr_p.sqrt().min(d.sqrt()) * pinv
    };
    Ok((c, aligned))
}

/// Inputs shared by the unsimplified sequence-length forms.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LemmaInputs {
    pub c_lambda: f64,
    /// `<<ρ|P_λ|ρ>>`.
    pub overlap: f64,
    /// Implementation error `δ_λ`.
    pub delta: f64,
    pub gap: f64,
}

impl LemmaInputs {
    fn validate(&self, linear_limit: f64) -> Result<()> {
        positive("c_lambda", self.c_lambda)?;
        positive("overlap", self.overlap)?;
        positive("gap", self.gap)?;
        if self.gap > 1.0 {
            return Err(Error::Config(format!("gap must be at most 1, got {}", self.gap)));
        }
        if !(self.delta >= 0.0) || self.delta / self.gap >= linear_limit {
            return Err(Error::Assumption(format!(
                "δ/Δ = {:.4} is outside the perturbative regime [0, {linear_limit})",
                self.delta / self.gap
            )));
        }
        Ok(())
    }

    fn log_terms(&self) -> f64 {
        self.c_lambda.ln() + 0.5 * self.overlap.ln() + g_factor(self.delta / self.gap).ln()
    }
}

/// `c_λ sqrt(<<ρ|P_λ|ρ>>) g(δ/Δ) (1 - Δ + 2δ)^m`.
pub fn subdominant_bound(inp: &LemmaInputs, m: usize) -> f64 {
    let base = (1.0 - inp.gap + 2.0 * inp.delta).max(0.0);
    let pow = if m == 0 { 1.0 } else { base.powi(m as i32) };
    inp.c_lambda * inp.overlap.sqrt() * g_factor(inp.delta / inp.gap) * pow
}

/// Smallest real `m` for which [`subdominant_bound`] is at most `alpha`.
pub fn sequence_length_exact(inp: &LemmaInputs, alpha: f64) -> Result<f64> {
    inp.validate(0.25)?;
    positive("alpha", alpha)?;
    let num = inp.log_terms() - alpha.ln();
    let base = 1.0 - inp.gap + 2.0 * inp.delta;
    if num <= 0.0 {
        return Ok(0.0);
    }
    if base <= 0.0 {
        return Ok(1.0);
    }
    Ok(num / -base.ln())
}

/// Sufficient length from `log(1 - Δ + 2δ) <= -(Δ - 2δ)`.
pub fn sequence_length_linearized(inp: &LemmaInputs, alpha: f64) -> Result<f64> {
    inp.validate(0.25)?;
    positive("alpha", alpha)?;
    let pref = 1.0 / inp.gap / (1.0 - 2.0 * inp.delta / inp.gap);
    Ok((pref * (inp.log_terms() - alpha.ln())).max(0.0))
}

/// Length at which the subdominant part is below a fraction `gamma` of the dominant one.
pub fn sequence_length_relative_lemma(inp: &LemmaInputs, f_spam: f64, gamma: f64) -> Result<f64> {
    inp.validate(0.25)?;
    positive("gamma", gamma)?;
    if f_spam == 0.0 {
        return Err(Error::Config("F_SPAM must be non-zero".into()));
    }
    let pref = 1.0 / inp.gap / (1.0 - 4.0 * inp.delta / inp.gap);
    Ok((pref * (inp.log_terms() - f_spam.abs().ln() - gamma.ln())).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SequenceMode {
    Additive { alpha: f64 },
    Relative { gamma: f64, v_sp: f64, v_m: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct SequenceLengthBound {
    pub m: u64,
    pub value: f64,
    pub prefactor: f64,
    pub gap: f64,
    pub d_lambda: f64,
    pub overlap: f64,
    pub log_g: f64,
    pub mode: SequenceMode,
}

/// Simplified sequence-length bounds assuming `δ/Δ <= 1/5` and an aligned irrep.
///
/// Additive: `2/Δ (log d_λ + ½ log ov + log 1/α + 1.8)`.
/// Relative: `5/Δ (log d_λ + ½ log 1/ov + log 1/γ + log 1/(v_SP v_M) + 1.8)`.
pub fn sequence_length_bound(gap: f64, d_lambda: f64, overlap: f64, mode: SequenceMode) -> Result<SequenceLengthBound> {
    positive("gap", gap)?;
    positive("d_lambda", d_lambda)?;
    positive("overlap", overlap)?;
    let (prefactor, value) = match mode {
        SequenceMode::Additive { alpha } => {
            positive("alpha", alpha)?;
            let pref = 2.0 / gap;
            (pref, pref * (d_lambda.ln() + 0.5 * overlap.ln() - alpha.ln() + LOG_G_SIMPLIFIED))
        }
        SequenceMode::Relative { gamma, v_sp, v_m } => {
            positive("gamma", gamma)?;
            positive("v_sp", v_sp)?;
            positive("v_m", v_m)?;
            let pref = 5.0 / gap;
            (pref, pref * (d_lambda.ln() - 0.5 * overlap.ln() - gamma.ln() - (v_sp * v_m).ln() + LOG_G_SIMPLIFIED))
        }
    };
    Ok(SequenceLengthBound {
        m: ceil_tol(value).max(1.0) as u64,
        value,
        prefactor,
        gap,
        d_lambda,
        overlap,
        log_g: LOG_G_SIMPLIFIED,
        mode,
    })
}

/// Additive bound for unitary 3-designs on `n` qubits, `2/Δ (1.75 n + log 1/α + 1.8)`.
///
/// With `alpha = None` only the leading term `3.5 n / Δ` is returned.
pub fn design_sequence_length(gap: f64, n: usize, alpha: Option<f64>) -> Result<f64> {
    positive("gap", gap)?;
    let lead = DESIGN_LOG_C_PER_QUBIT * n as f64;
    Ok(match alpha {
        None => 2.0 / gap * lead,
        Some(a) => {
            positive("alpha", a)?;
            2.0 / gap * (lead - a.ln() + LOG_G_SIMPLIFIED)
        }
    })
}

/// Relative bound for unitary 3-designs, `5/Δ (1.75 n + log 1/(v_M v_SP) + log 1/γ + 1.8)`.
pub fn design_relative_sequence_length(gap: f64, n: usize, visibility: f64, gamma: f64) -> Result<f64> {
    positive("gap", gap)?;
    positive("visibility", visibility)?;
    positive("gamma", gamma)?;
    Ok(5.0 / gap * (DESIGN_LOG_C_PER_QUBIT * n as f64 - visibility.ln() - gamma.ln() + LOG_G_SIMPLIFIED))
}

/// Default lower end of the fit window: the additive bound at `α = 0.1 * precision`.
pub fn default_m_min(gap: f64, d_lambda: f64, overlap: f64, precision: f64) -> Result<u64> {
    Ok(sequence_length_bound(gap, d_lambda, overlap, SequenceMode::Additive { alpha: 0.1 * precision })?.m)
}

#[derive(Clone, Debug, Serialize)]
pub struct TableRow {
    pub label: &'static str,
    pub arch: TableArch,
    /// Power of `n` in the sequence length.
    pub power: u32,
    pub gap_source: String,
    /// Coefficient of `n^power` in the inverse gap.
    pub inverse_gap_coefficient: f64,
    pub computed: f64,
    pub tabulated: f64,
    pub reproduced: bool,
    /// Coefficient from an alternative gap estimate, when one exists.
    pub alternative: Option<f64>,
    pub note: Option<&'static str>,
}

/// Relative tolerance for matching tabulated coefficients.
pub const TABLE_TOLERANCE: f64 = 0.01;

/// Leading sequence-length coefficients `3.5 / (Δ n^(power-1))` for the summary table.
pub fn table_one() -> Result<Vec<TableRow>> {
    let rows: [(&str, TableArch, u32, f64); 6] = [
        ("brickwork", TableArch::BwOdd, 1, 9.8),
        ("Clifford-generator brickwork", TableArch::GeneratorBw, 1, 470.0),
        ("LRC (complete graph)", TableArch::CompleteLrc, 2, 4.2),
        ("LRC nearest-neighbour", TableArch::NnLrc, 2, 17.5),
        ("Clifford-generator LRC (complete graph)", TableArch::GeneratorLrcComplete, 2, 49.0),
        ("Clifford-generator LRC nearest-neighbour", TableArch::GeneratorLrcNn, 2, 49.5),
    ];
    // every tabulated gap is exactly of the form c / n^(power-1); evaluate at one n
    let n_eval = 10usize;
    rows.iter()
        .map(|&(label, arch, power, tabulated)| {
            let (gap, src) = tabulated_gap(arch, n_eval, 2)?;
            let inv = 1.0 / gap / (n_eval as f64).powi(power as i32 - 1);
            let computed = 2.0 * DESIGN_LOG_C_PER_QUBIT * inv;
            let reproduced = ((computed - tabulated) / tabulated).abs() < TABLE_TOLERANCE;
            let (alternative, note) = if arch == TableArch::GeneratorLrcNn {
                (
                    Some(2.0 * DESIGN_LOG_C_PER_QUBIT * 16.5),
                    Some(
                        "not reproduced: the 1/(55n) gap gives 192.5 and the conjectured 16.5n inverse gap gives 57.75",
                    ),
                )
            } else {
                (None, None)
            };
            Ok(TableRow {
                label,
                arch,
                power,
                gap_source: src,
                inverse_gap_coefficient: inv,
                computed,
                tabulated,
                reproduced,
                alternative,
                note,
            })
        })
        .collect()
}

/// `N >= (E[f²]_SPAM + α) / (ε² δ)`, at least 1.
pub fn sampling_bound_additive(second_moment: f64, alpha: f64, eps: f64, delta: f64) -> Result<u64> {
    if !(second_moment >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::Config("second moment and α must be non-negative".into()));
    }
    positive("eps", eps)?;
    check_probability(delta)?;
    Ok(ceil_tol((second_moment + alpha) / (eps * eps * delta)).max(1.0) as u64)
}

fn check_probability(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("failure probability must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RelativeSampling {
    pub second_moment: f64,
    /// Signal `F_λ(m)_SPAM` of the noiseless Haar implementation.
    pub f_spam: f64,
    pub i_lambda: f64,
    pub m: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub eps: f64,
    pub delta: f64,
}

/// `N >= ((1+κ)/(1-γ)² E[f²]/F² I^{-2m} - 1) / (ε² δ)`, at least 1.
pub fn sampling_bound_relative(r: &RelativeSampling) -> Result<u64> {
    positive("eps", r.eps)?;
    check_probability(r.delta)?;
    positive("I_lambda", r.i_lambda)?;
    if !(r.kappa >= 0.0) || !(0.0..1.0).contains(&r.gamma) {
        return Err(Error::Config("need κ >= 0 and 0 <= γ < 1".into()));
    }
    if r.f_spam == 0.0 {
        return Err(Error::Config("F_SPAM must be non-zero".into()));
    }
    let blowup = r.i_lambda.powf(-2.0 * r.m as f64);
    let inner = (1.0 + r.kappa) / (1.0 - r.gamma).powi(2) * r.second_moment / (r.f_spam * r.f_spam) * blowup - 1.0;
    Ok(ceil_tol(inner / (r.eps * r.eps * r.delta)).max(1.0) as u64)
}
