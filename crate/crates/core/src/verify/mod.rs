//! Answer extraction, mathematical equivalence and reward schemas.

pub mod extract;
pub mod grammar;
pub mod normalize;
pub mod reward;

pub use extract::{extract_answer, AnswerSource, ExtractedAnswer};
pub use grammar::eval_expr;
pub use normalize::normalize_math;
pub use reward::{
    code_reward, extract_code_block, format_reward, math_reward, DecidedBy, Domain, MockJudge,
    RewardRouter, RewardSample, RewardValue, SemanticJudge, TestCase, Verdict,
};

/// Default relative tolerance for numeric equivalence.
pub const DEFAULT_REL_TOL: f64 = 1e-6;

/// Tier-1 mathematical equivalence.
///
/// True when the normalized forms match, or when both sides parse under
/// the closed numeric grammar and agree within
/// `rel_tol * max(1, |vb|)`. Strings outside the grammar compare false
/// here, deferring to the tier-2 judge.
pub fn math_equivalent(a: &str, b: &str, rel_tol: f64) -> bool {
    let na = normalize_math(a);
    let nb = normalize_math(b);
    if na == nb {
        return true;
    }
    match (eval_expr(&na), eval_expr(&nb)) {
        (Some(va), Some(vb)) => (va - vb).abs() <= rel_tol * vb.abs().max(1.0),
        _ => false,
    }
}
