//! Training losses.
//!
//! Phase one minimises [`observed_hybrid_loss`] over observed pairs: the
//! mean pointwise error, an inverse-propensity-weighted imputation term,
//! Frobenius regularizers for the three parameter groups, and a binary
//! cross-entropy that supervises the propensity head against observation
//! indicators (the imputation term alone would push propensities to 1).
//!
//! Phase two minimises [`dr_risk_loss`] over uniform user-item samples:
//! each pair contributes `ê + o·(e − ê)/p̂` with the imputed error and
//! propensity entering as detached constants, so only the prediction path
//! receives gradients. [`ips_risk_loss`] is the same outer structure with
//! `o·e/p̂` per pair.

use crate::tape::{Tape, Var};

/// Pointwise error metric between prediction and binary rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    Mse,
    Mae,
}

impl ErrorMetric {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(ErrorMetric::Mse),
            "mae" => Some(ErrorMetric::Mae),
            _ => None,
        }
    }
}

/// `e = (r̂ − r)²` or `|r̂ − r|` on the tape.
pub fn pointwise_error(tape: &mut Tape, r_hat: Var, rating: f64, metric: ErrorMetric) -> Var {
    let diff = tape.add_const(r_hat, -rating);
    match metric {
        ErrorMetric::Mse => tape.square(diff),
        ErrorMetric::Mae => tape.abs(diff),
    }
}

/// Plain-value twin of [`pointwise_error`].
pub fn pointwise_error_value(r_hat: f64, rating: f64, metric: ErrorMetric) -> f64 {
    match metric {
        ErrorMetric::Mse => (r_hat - rating) * (r_hat - rating),
        ErrorMetric::Mae => (r_hat - rating).abs(),
    }
}

/// Loss hyperparameters shared by both phases.
#[derive(Debug, Clone)]
pub struct LossWeights {
    /// Imputation-term weight in phase one.
    pub lambda1: f64,
    /// Frobenius weights for the model, imputation and propensity groups.
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Frobenius weight for the model group in phase two.
    pub lambda5: f64,
    /// Propensity-supervision weight.
    pub lambda_p: f64,
    /// Auxiliary similarity-regularizer weight.
    pub aux_sim_weight: f64,
    /// Divide the imputation term by the per-domain pair count instead of
    /// summing it as written.
    pub normalize_imputation: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.01,
            lambda2: 1e-4,
            lambda3: 1e-4,
            lambda4: 1e-4,
            lambda5: 1e-4,
            lambda_p: 1.0,
            aux_sim_weight: 0.0,
            normalize_imputation: false,
        }
    }
}

/// One observed pair's nodes.
pub struct ObservedTerm {
    pub domain: usize,
    pub e: Var,
    pub e_hat: Var,
    pub p_hat: Var,
}

/// Parameter leaves by group, for the Frobenius regularizers.
pub struct RegVars {
    pub model: Vec<Var>,
    pub imputation: Vec<Var>,
    pub propensity: Vec<Var>,
}

fn frobenius(tape: &mut Tape, leaves: &[Var]) -> Option<Var> {
    let mut acc: Option<Var> = None;
    for &v in leaves {
        let sq = tape.square(v);
        let s = tape.sum_all(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    acc
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Option<Var> {
    if terms.is_empty() {
        return None;
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    Some(tape.mul_const(acc, 1.0 / terms.len() as f64))
}

/// Phase-one objective over an observed batch. Empty domain slices are
/// skipped and the outer average renormalizes over non-empty domains.
#[allow(clippy::too_many_arguments)]
pub fn observed_hybrid_loss(
    tape: &mut Tape,
    terms: &[ObservedTerm],
    num_domains: usize,
    side: &[(Var, bool)],
    reg: &RegVars,
    aux_terms: &[Var],
    weights: &LossWeights,
) -> Var {
    assert!(!terms.is_empty(), "observed_hybrid_loss: empty batch");
    let mut domain_vals = Vec::new();
    for z in 0..num_domains {
        let in_domain: Vec<&ObservedTerm> = terms.iter().filter(|t| t.domain == z).collect();
        if in_domain.is_empty() {
            continue;
        }
        let errs: Vec<Var> = in_domain.iter().map(|t| t.e).collect();
        let mean_e = mean_of(tape, &errs).expect("non-empty domain slice");
        let mut imp_acc: Option<Var> = None;
        for t in &in_domain {
            let gap = tape.sub(t.e_hat, t.e);
            let sq = tape.square(gap);
            let weighted = tape.div(sq, t.p_hat);
            imp_acc = Some(match imp_acc {
                Some(a) => tape.add(a, weighted),
                None => weighted,
            });
        }
        let mut imp = imp_acc.expect("non-empty domain slice");
        if weights.normalize_imputation {
            imp = tape.mul_const(imp, 1.0 / in_domain.len() as f64);
        }
        let imp = tape.mul_const(imp, weights.lambda1);
        domain_vals.push(tape.add(mean_e, imp));
    }
    let mut loss = mean_of(tape, &domain_vals).expect("at least one non-empty domain");

    for (leaves, lambda) in [
        (&reg.model, weights.lambda2),
        (&reg.imputation, weights.lambda3),
        (&reg.propensity, weights.lambda4),
    ] {
        if lambda > 0.0 {
            if let Some(f) = frobenius(tape, leaves) {
                let scaled = tape.mul_const(f, lambda);
                loss = tape.add(loss, scaled);
            }
        }
    }

    if weights.lambda_p > 0.0 && !side.is_empty() {
        let bce_terms: Vec<Var> = side
            .iter()
            .map(|&(p_hat, observed)| bce_term(tape, p_hat, observed))
            .collect();
        let bce = mean_of(tape, &bce_terms).expect("non-empty side batch");
        let scaled = tape.mul_const(bce, weights.lambda_p);
        loss = tape.add(loss, scaled);
    }

    if weights.aux_sim_weight > 0.0 && !aux_terms.is_empty() {
        let aux = mean_of(tape, aux_terms).expect("non-empty aux terms");
        let scaled = tape.mul_const(aux, weights.aux_sim_weight);
        loss = tape.add(loss, scaled);
    }
    loss
}

/// `-[o·ln(p̂) + (1−o)·ln(1 + ε − p̂)]`; the epsilon keeps the unobserved
/// branch finite when the head saturates.
fn bce_term(tape: &mut Tape, p_hat: Var, observed: bool) -> Var {
    if observed {
        let l = tape.ln(p_hat);
        tape.mul_const(l, -1.0)
    } else {
        let neg = tape.mul_const(p_hat, -1.0);
        let one_minus = tape.add_const(neg, 1.0 + 1e-12);
        let l = tape.ln(one_minus);
        tape.mul_const(l, -1.0)
    }
}

/// One uniform full-space pair. `e` is present iff the pair is observed;
/// labels of unobserved pairs are unavailable.
pub struct FullSpaceTerm {
    pub domain: usize,
    pub observed: bool,
    pub e: Option<Var>,
    pub e_hat: Var,
    pub p_hat: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskEstimator {
    DoublyRobust,
    Ips,
}

/// Phase-two objective: the chosen risk estimand averaged per domain plus
/// the model-group regularizer. Imputed errors and propensities are
/// detached here, so gradients reach the model only through `e`.
pub fn risk_loss(
    tape: &mut Tape,
    estimator: RiskEstimator,
    terms: &[FullSpaceTerm],
    num_domains: usize,
    model_reg: &[Var],
    lambda5: f64,
) -> Var {
    assert!(!terms.is_empty(), "risk_loss: empty batch");
    let mut domain_vals = Vec::new();
    for z in 0..num_domains {
        let in_domain: Vec<&FullSpaceTerm> = terms.iter().filter(|t| t.domain == z).collect();
        if in_domain.is_empty() {
            continue;
        }
        let mut contribs = Vec::with_capacity(in_domain.len());
        for t in &in_domain {
            let e_hat = tape.detach(t.e_hat);
            let p_hat = tape.detach(t.p_hat);
            let c = match estimator {
                RiskEstimator::DoublyRobust => {
                    if t.observed {
                        let e = t.e.expect("observed pair carries its error");
                        let delta = tape.sub(e, e_hat);
                        let corr = tape.div(delta, p_hat);
                        tape.add(e_hat, corr)
                    } else {
                        e_hat
                    }
                }
                RiskEstimator::Ips => {
                    if t.observed {
                        let e = t.e.expect("observed pair carries its error");
                        tape.div(e, p_hat)
                    } else {
                        tape.mul_const(e_hat, 0.0)
                    }
                }
            };
            contribs.push(c);
        }
        domain_vals.push(mean_of(tape, &contribs).expect("non-empty domain slice"));
    }
    let mut loss = mean_of(tape, &domain_vals).expect("at least one non-empty domain");
    if lambda5 > 0.0 {
        if let Some(f) = frobenius(tape, model_reg) {
            let scaled = tape.mul_const(f, lambda5);
            loss = tape.add(loss, scaled);
        }
    }
    loss
}

/// Doubly robust phase-two loss.
pub fn dr_risk_loss(
    tape: &mut Tape,
    terms: &[FullSpaceTerm],
    num_domains: usize,
    model_reg: &[Var],
    lambda5: f64,
) -> Var {
    risk_loss(tape, RiskEstimator::DoublyRobust, terms, num_domains, model_reg, lambda5)
}

/// Inverse-propensity-scored phase-two loss; imputation terms dropped.
pub fn ips_risk_loss(
    tape: &mut Tape,
    terms: &[FullSpaceTerm],
    num_domains: usize,
    model_reg: &[Var],
    lambda5: f64,
) -> Var {
    risk_loss(tape, RiskEstimator::Ips, terms, num_domains, model_reg, lambda5)
}
