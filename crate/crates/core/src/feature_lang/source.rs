//! Line-level handling of Python-like source: comments, string literals and
//! bracket continuation.

/// Removes a trailing `#` comment, ignoring `#` inside string literals.
pub(crate) fn strip_comment(line: &str) -> &str {
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, ch) in line.char_indices() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if ch == '\\' {
                    escaped = true;
                } else if ch == q {
                    quote = None;
                }
            }
            None => match ch {
                '\'' | '"' => quote = Some(ch),
                '#' => return &line[..i],
                _ => {}
            },
        }
    }
    line
}

/// Net change in bracket nesting over a comment-free line.
pub(crate) fn bracket_depth_delta(line: &str) -> i32 {
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut depth = 0;
    for ch in line.chars() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if ch == '\\' {
                    escaped = true;
                } else if ch == q {
                    quote = None;
                }
            }
            None => match ch {
                '\'' | '"' => quote = Some(ch),
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth -= 1,
                _ => {}
            },
        }
    }
    depth
}

/// A logical statement and the 1-based line it starts on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Statement {
    pub line: usize,
    pub text: String,
}

/// Splits code into logical statements, joining physical lines while
/// brackets are open or a line ends with `\`. Comments and blank lines are
/// dropped.
pub(crate) fn statements(code: &str) -> Vec<Statement> {
    let mut out = Vec::new();
    let mut current: Option<Statement> = None;
    let mut depth = 0i32;
    for (idx, raw) in code.lines().enumerate() {
        let line = strip_comment(raw).trim_end();
        if line.trim().is_empty() && current.is_none() {
            continue;
        }
        let (body, continued) = match line.strip_suffix('\\') {
            Some(body) => (body, true),
            None => (line, false),
        };
        depth += bracket_depth_delta(body);
        let stmt = current.get_or_insert_with(|| Statement {
            line: idx + 1,
            text: String::new(),
        });
        if !stmt.text.is_empty() {
            stmt.text.push(' ');
        }
        stmt.text.push_str(body.trim());
        if depth <= 0 && !continued {
            depth = 0;
            out.extend(current.take());
        }
    }
    out.extend(current);
    out
}
