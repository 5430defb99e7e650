//! Generation and judge prompt templates, rendered byte-for-byte.

use crate::corpus::{serialize_table, ResultTable};
use crate::template;

/// `{question}` and `{tbl_str}` are substituted.
pub const GENERATION_TEMPLATE: &str = include_str!("templates/generation.txt");

/// `{q}`, `{ip}` (reference) and `{op}` (candidate) are substituted.
/// Two of its lines end in a space.
pub const JUDGE_TEMPLATE: &str = include_str!("templates/judge.txt");

pub fn render_generation_prompt(question: &str, table: &ResultTable) -> String {
    template::fill(
        GENERATION_TEMPLATE,
        &[("question", question), ("tbl_str", &serialize_table(table))],
    )
}

/// `reference` is the ground-truth NLR under GT, or the question plus
/// serialized results under UQDB.
pub fn render_judge_prompt(question: &str, reference: &str, candidate: &str) -> String {
    template::fill(
        JUDGE_TEMPLATE,
        &[("q", question), ("ip", reference), ("op", candidate)],
    )
}
