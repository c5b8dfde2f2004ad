//! Fixed prompt templates and placeholder substitution.
//!
//! The two templates are the exact strings sent to the model (modulo
//! placeholder substitution) and are recorded in the run manifest so a
//! prediction run can be audited against the prompts that produced it.

/// Zero-shot diagnosis prompt. Placeholders: `{clinical_note}`, `{medication}`.
pub const DIAGNOSIS_PROMPT_TEMPLATE: &str = "Given a patient's clinical note: '{clinical_note}', and the medication: {medication}, what diagnosis is the most likely indication for this medication in this specific patient? In other words, what diagnosis is the medication treating in this context? Return the name of the diagnosis only.";

/// Summarization prompt. The note text is appended directly after the length
/// bound. Placeholders: `{summary_length}`, `{note}`.
pub const SUMMARY_PROMPT_TEMPLATE: &str = "Summarize the clinical note, and make its length < {summary_length}{note}";

/// Substitute placeholders in a single left-to-right pass.
///
/// Substituted values are never rescanned, so a value containing a
/// placeholder token (clinical text can contain anything) cannot trigger a
/// second substitution.
fn fill_template(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        // Earliest placeholder occurrence in the remaining template.
        let next = substitutions
            .iter()
            .filter_map(|(name, value)| rest.find(name).map(|pos| (pos, *name, *value)))
            .min_by_key(|(pos, _, _)| *pos);
        match next {
            Some((pos, name, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + name.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

/// Build the diagnosis prompt for one (summary, medication) cell.
pub fn diagnosis_prompt(clinical_note: &str, medication: &str) -> String {
    fill_template(
        DIAGNOSIS_PROMPT_TEMPLATE,
        &[
            ("{clinical_note}", clinical_note),
            ("{medication}", medication),
        ],
    )
}

/// Build the summarization prompt for one (note, target length) pair.
pub fn summary_prompt(note: &str, summary_length: usize) -> String {
    fill_template(
        SUMMARY_PROMPT_TEMPLATE,
        &[
            ("{summary_length}", &summary_length.to_string()),
            ("{note}", note),
        ],
    )
}

/// Recover the target length and note text from a summarization prompt.
///
/// Used by the synthetic provider, which "summarizes" by truncating the note
/// so the length-enforcement path stays exercised offline.
pub fn parse_summary_prompt(prompt: &str) -> Option<(usize, &str)> {
    let prefix = SUMMARY_PROMPT_TEMPLATE
        .split("{summary_length}")
        .next()
        .unwrap();
    let rest = prompt.strip_prefix(prefix)?;
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let target: usize = rest[..digits].parse().ok()?;
    Some((target, &rest[digits..]))
}
