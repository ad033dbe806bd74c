//! Two-stage feature-discovery dialogue: the stage-1 prompt asks for feature
//! ideas, the stage-2 prompt asks for code implementing them. Also parses
//! both assistant responses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_lang::source::{bracket_depth_delta, strip_comment};
use crate::task::TaskSpec;

/// Version tag of the bundled prompt templates.
pub const TEMPLATE_VERSION: &str = "v1";

const SYSTEM_TEMPLATE: &str = include_str!("../resources/prompts/v1/system.txt");
const STAGE1_TEMPLATE: &str = include_str!("../resources/prompts/v1/stage1.txt");
const STAGE2_TEMPLATE: &str = include_str!("../resources/prompts/v1/stage2.txt");

const DEFINITION_MARKER: &str = "definition:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseParseError {
    #[error("response contains no `definition:` item")]
    NoDefinitions,
    #[error("response contains no feature code")]
    NoCode,
    #[error("rationale is empty")]
    EmptyRationale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    pub text: String,
}

impl DialogueTurn {
    fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        DialogueTurn {
            speaker,
            text: text.into(),
        }
    }
}

/// Dialogue state. After stage 1 only the system and first user turn are
/// set; stage 2 adds the assistant's rationale and the code request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub system_instruction: String,
    pub stage1_user: String,
    pub assistant_rationale: Option<String>,
    pub stage2_user: Option<String>,
}

impl PromptContext {
    pub fn turns(&self) -> Vec<DialogueTurn> {
        let mut turns = vec![
            DialogueTurn::new(Speaker::System, &self.system_instruction),
            DialogueTurn::new(Speaker::User, &self.stage1_user),
        ];
        if let (Some(rationale), Some(stage2)) = (&self.assistant_rationale, &self.stage2_user) {
            turns.push(DialogueTurn::new(Speaker::Assistant, rationale));
            turns.push(DialogueTurn::new(Speaker::User, stage2));
        }
        turns
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleItem {
    pub definition: String,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub items: Vec<RationaleItem>,
    /// The response exactly as received.
    pub raw_text: String,
}

/// Fills `{name}` placeholders in one left-to-right pass, so substituted text
/// is never rescanned.
fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}').and_then(|end| {
            let key = &after[..end];
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (end, *v))
        }) {
            Some((end, value)) => {
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Stage-1 prompt: domain, task type, one `name: description` line per
/// feature column, the idea request and the problem line. The label column
/// is not listed.
pub fn build_stage1_prompt(task: &TaskSpec) -> PromptContext {
    let columns = task
        .feature_columns()
        .map(|c| format!("{}: {}", c.name, c.description))
        .collect::<Vec<_>>()
        .join("\n");
    let task_type = task.task_type.to_string();
    let stage1_user = render(
        STAGE1_TEMPLATE.trim_end(),
        &[
            ("domain", &task.domain),
            ("task_type", &task_type),
            ("columns", &columns),
            ("problem_statement", &task.problem_statement),
        ],
    );
    PromptContext {
        system_instruction: SYSTEM_TEMPLATE.trim_end().to_string(),
        stage1_user,
        assistant_rationale: None,
        stage2_user: None,
    }
}

/// Stage-2 prompt: appends the rationale verbatim as the assistant turn and
/// the code request, which names the accepted expression grammar.
pub fn build_stage2_prompt(
    ctx: &PromptContext,
    rationale: &Rationale,
) -> Result<PromptContext, ResponseParseError> {
    if rationale.items.is_empty() || rationale.raw_text.trim().is_empty() {
        return Err(ResponseParseError::EmptyRationale);
    }
    Ok(PromptContext {
        assistant_rationale: Some(rationale.raw_text.clone()),
        stage2_user: Some(STAGE2_TEMPLATE.trim_end().to_string()),
        ..ctx.clone()
    })
}

fn definition_start(line: &str) -> Option<usize> {
    line.to_ascii_lowercase()
        .find(DEFINITION_MARKER)
        .map(|pos| pos + DEFINITION_MARKER.len())
}

fn strip_bullet(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['-', '*', '•', '–', '·'])
        .trim()
}

/// Splits a stage-1 response into `definition:` items. Lines after a
/// definition, up to the next one, form its justification.
pub fn parse_rationale(text: &str) -> Result<Rationale, ResponseParseError> {
    let mut items: Vec<RationaleItem> = Vec::new();
    let mut justification: Vec<&str> = Vec::new();
    for line in text.lines() {
        if let Some(start) = definition_start(line) {
            if let Some(last) = items.last_mut() {
                last.justification = justification.join("\n");
            }
            justification.clear();
            let definition = line[start..]
                .trim()
                .trim_start_matches('*')
                .trim()
                .to_string();
            items.push(RationaleItem {
                definition,
                justification: String::new(),
            });
        } else if !items.is_empty() {
            let body = strip_bullet(line);
            if !body.is_empty() {
                justification.push(body);
            }
        }
    }
    match items.last_mut() {
        Some(last) => last.justification = justification.join("\n"),
        None => return Err(ResponseParseError::NoDefinitions),
    }
    Ok(Rationale {
        items,
        raw_text: text.to_string(),
    })
}

/// Isolates feature code from a stage-2 response.
///
/// Fenced blocks win when present; otherwise statements starting with `df[`
/// are taken, together with continuation lines while brackets are open.
/// `#` comments and blank lines are dropped.
pub fn extract_code_block(text: &str) -> Result<String, ResponseParseError> {
    let mut lines: Vec<String> = Vec::new();
    if text.contains("```") {
        let mut inside = false;
        for line in text.lines() {
            if line.trim_start().starts_with("```") {
                inside = !inside;
                continue;
            }
            if inside {
                push_code_line(&mut lines, line);
            }
        }
    } else {
        let mut depth = 0i32;
        for line in text.lines() {
            let code = strip_comment(line);
            if depth > 0 || code.trim_start().starts_with("df[") {
                depth = (depth + bracket_depth_delta(code)).max(0);
                push_code_line(&mut lines, line);
            }
        }
    }
    if lines.is_empty() {
        return Err(ResponseParseError::NoCode);
    }
    Ok(lines.join("\n"))
}

fn push_code_line(lines: &mut Vec<String>, line: &str) {
    let code = strip_comment(line).trim_end();
    if !code.trim().is_empty() {
        lines.push(code.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{ColumnKind, ColumnSpec, TaskType};

    fn nhanes() -> TaskSpec {
        let cols = [
            ("riagendr", "Respondents Gender"),
            ("bmxbmi", "Respondents Body Mass Index"),
            ("lbxglu", "Respondents Blood Glucose after fasting"),
            ("age_group", "Age group"),
        ];
        TaskSpec {
            domain: "Medical".into(),
            task_type: TaskType::Classification,
            problem_statement: "for predicting the given person's age group from the record."
                .into(),
            label_column: "age_group".into(),
            columns: cols
                .iter()
                .map(|(n, d)| ColumnSpec {
                    name: n.to_string(),
                    description: d.to_string(),
                    kind: if *n == "age_group" {
                        ColumnKind::Binary
                    } else {
                        ColumnKind::Numeric
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn stage1_layout() {
        let ctx = build_stage1_prompt(&nhanes());
        let text = &ctx.stage1_user;
        assert!(text.contains("riagendr: Respondents Gender"));
        assert!(text.ends_with(
            "Machine Learning PROBLEM: for predicting the given person's age group from the record."
        ));
        let domain = text.find("domain: Medical").unwrap();
        let ty = text.find("type: classification").unwrap();
        let vars = text.find("present variable in dataframe:").unwrap();
        let col = text.find("lbxglu:").unwrap();
        let ask = text.find("Provide key ideas").unwrap();
        let problem = text.find("Machine Learning PROBLEM").unwrap();
        assert!(domain < ty && ty < vars && vars < col && col < ask && ask < problem);
        assert!(!text.contains("age_group:"));
        assert!(ctx
            .system_instruction
            .starts_with("You are an automated ML engineer"));
        assert_eq!(ctx.turns().len(), 2);
    }

    #[test]
    fn problem_statement_only_changes_problem_line() {
        let a = build_stage1_prompt(&nhanes());
        let mut other = nhanes();
        other.problem_statement = "something else".into();
        let b = build_stage1_prompt(&other);
        let diff: Vec<_> = a
            .stage1_user
            .lines()
            .zip(b.stage1_user.lines())
            .filter(|(x, y)| x != y)
            .collect();
        assert_eq!(diff.len(), 1);
        assert!(diff[0].0.starts_with("Machine Learning PROBLEM:"));
    }

    #[test]
    fn placeholders_in_values_are_not_expanded() {
        let mut task = nhanes();
        task.domain = "{problem_statement}".into();
        let ctx = build_stage1_prompt(&task);
        assert!(ctx.stage1_user.starts_with("domain: {problem_statement}\n"));
    }

    #[test]
    fn stage2_has_four_turns_with_rationale() {
        let ctx = build_stage1_prompt(&nhanes());
        let text = "1. definition: a\n- why a\n2. definition: b\n3. definition: c\n- why c";
        let rationale = parse_rationale(text).unwrap();
        assert_eq!(rationale.items.len(), 3);
        let ctx2 = build_stage2_prompt(&ctx, &rationale).unwrap();
        let turns = ctx2.turns();
        let speakers: Vec<_> = turns.iter().map(|t| t.speaker).collect();
        assert_eq!(
            speakers,
            [
                Speaker::System,
                Speaker::User,
                Speaker::Assistant,
                Speaker::User
            ]
        );
        assert_eq!(turns[2].text, text);
        assert!(turns[3]
            .text
            .starts_with("Create new features in Python code"));
    }

    #[test]
    fn empty_rationale_is_rejected() {
        let ctx = build_stage1_prompt(&nhanes());
        let empty = Rationale {
            items: vec![],
            raw_text: String::new(),
        };
        assert_eq!(
            build_stage2_prompt(&ctx, &empty),
            Err(ResponseParseError::EmptyRationale)
        );
    }

    #[test]
    fn single_item_with_bullet() {
        let r = parse_rationale("definition: X\n- Y").unwrap();
        assert_eq!(
            r.items,
            vec![RationaleItem {
                definition: "X".into(),
                justification: "Y".into()
            }]
        );
    }

    #[test]
    fn marker_is_case_insensitive_and_text_preserved() {
        let text = "Ideas:\n**1. Definition:** Ratio of A to B\n   • Helps\n\n";
        let r = parse_rationale(text).unwrap();
        assert_eq!(r.items[0].definition, "Ratio of A to B");
        assert_eq!(r.items[0].justification, "Helps");
        assert_eq!(r.raw_text, text);
    }

    #[test]
    fn prose_without_marker_fails() {
        assert_eq!(
            parse_rationale("no ideas"),
            Err(ResponseParseError::NoDefinitions)
        );
    }

    #[test]
    fn fenced_block_drops_comments() {
        let text = "Here you go:\n```python\n# first\ndf['x'] = df['a'] / df['b']  # ratio\n\ndf['y'] = df['a'] * 2\n```\nDone.";
        assert_eq!(
            extract_code_block(text).unwrap(),
            "df['x'] = df['a'] / df['b']\ndf['y'] = df['a'] * 2"
        );
    }

    #[test]
    fn unfenced_lines_with_continuations() {
        let text = "Sure.\ndf['s'] = (df['a'] +\n    df['b'])\nThat is all.";
        assert_eq!(
            extract_code_block(text).unwrap(),
            "df['s'] = (df['a'] +\n    df['b'])"
        );
    }

    #[test]
    fn prose_has_no_code() {
        assert_eq!(
            extract_code_block("I would add a ratio feature."),
            Err(ResponseParseError::NoCode)
        );
    }
}
