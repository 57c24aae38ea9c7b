//! Canonicalization of mathematical answer strings.

/// Normalizes an answer string into a canonical comparable form.
///
/// Applied in order: trim; strip surrounding `$...$` / `\(...\)` /
/// `\[...\]`; drop `\left`/`\right`; remove thousands-separator commas in
/// digit runs; rewrite `\frac{a}{b}`/`\dfrac{a}{b}` to `a/b` and
/// `\sqrt{x}` to `sqrt(x)`; rewrite `%` to `/100` and drop degree marks;
/// strip trailing punctuation; remove whitespace; lowercase.
///
/// Idempotent: `normalize_math(normalize_math(s)) == normalize_math(s)`.
pub fn normalize_math(s: &str) -> String {
    let mut out = s.trim().to_string();
    out = strip_math_delimiters(&out);
    out = out.replace("\\left", "").replace("\\right", "");
    out = strip_digit_commas(&out);
    out = rewrite_frac(&out);
    out = rewrite_sqrt(&out);
    out = out.replace("\\pi", "pi").replace("\\%", "/100").replace('%', "/100");
    out = out.replace("\u{00b0}", "");
    // unit word
    out = strip_word_suffix(&out, "degrees");
    let mut trimmed = out.trim_end();
    while let Some(stripped) = trimmed.strip_suffix(['.', ',', ';', ':', '!', '?']) {
        trimmed = stripped.trim_end();
    }
    let collapsed: String = trimmed.chars().filter(|c| !c.is_whitespace()).collect();
    collapsed.to_lowercase()
}

fn strip_math_delimiters(s: &str) -> String {
    let mut cur = s.trim().to_string();
    loop {
        let next = if cur.len() >= 2 && cur.starts_with('$') && cur.ends_with('$') {
            cur[1..cur.len() - 1].trim().to_string()
        } else if cur.len() >= 4 && cur.starts_with("\\(") && cur.ends_with("\\)") {
            cur[2..cur.len() - 2].trim().to_string()
        } else if cur.len() >= 4 && cur.starts_with("\\[") && cur.ends_with("\\]") {
            cur[2..cur.len() - 2].trim().to_string()
        } else {
            return cur;
        };
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// Removes commas that act as thousands separators inside digit runs.
fn strip_digit_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let digit = |i: usize| chars.get(i).is_some_and(|c| c.is_ascii_digit());
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ','
            && i > 0
            && digit(i - 1)
            && digit(i + 1)
            && digit(i + 2)
            && digit(i + 3)
            && !digit(i + 4)
        {
            continue;
        }
        out.push(c);
    }
    out
}

fn strip_word_suffix(s: &str, word: &str) -> String {
    let t = s.trim_end();
    if let Some(stripped) = t.to_lowercase().strip_suffix(word) {
        let keep = stripped.len();
        return s[..keep].trim_end().to_string();
    }
    t.to_string()
}

/// Reads one brace group `{...}` starting at `i` (which must point at
/// `{`), returning the inner body and the index just past the closing
/// brace. Nesting-safe.
pub(crate) fn brace_group(s: &str, i: usize) -> Option<(&str, usize)> {
    let bytes = s.as_bytes();
    if bytes.get(i) != Some(&b'{') {
        return None;
    }
    let mut depth = 0usize;
    for (j, &b) in bytes.iter().enumerate().skip(i) {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((&s[i + 1..j], j + 1));
                }
            }
            _ => {}
        }
    }
    None
}

fn needs_parens(s: &str) -> bool {
    let mut depth = 0i32;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            '+' | '-' | '*' | '/' | '^' if depth == 0 => return true,
            _ => {}
        }
    }
    false
}

fn rewrite_frac(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    loop {
        let (cmd_pos, cmd_len) = match (rest.find("\\dfrac"), rest.find("\\frac")) {
            (Some(d), Some(f)) if d < f => (d, 6),
            (Some(d), None) => (d, 6),
            (_, Some(f)) => (f, 5),
            (None, None) => {
                out.push_str(rest);
                return out;
            }
        };
        out.push_str(&rest[..cmd_pos]);
        let after = &rest[cmd_pos + cmd_len..];
        let body_start = after.len() - after.trim_start().len();
        if let Some((num, next)) = brace_group(after, body_start) {
            let after2 = &after[next..];
            let den_start = after2.len() - after2.trim_start().len();
            if let Some((den, next2)) = brace_group(after2, den_start) {
                let num = rewrite_frac(num);
                let den = rewrite_frac(den);
                let num = if needs_parens(&num) { format!("({num})") } else { num };
                let den = if needs_parens(&den) { format!("({den})") } else { den };
                out.push_str(&format!("{num}/{den}"));
                rest = &after2[next2..];
                continue;
            }
        }
        // malformed frac: emit as-is and move past the command token
        out.push_str(&rest[cmd_pos..cmd_pos + cmd_len]);
        rest = &rest[cmd_pos + cmd_len..];
    }
}

fn rewrite_sqrt(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find("\\sqrt") {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 5..];
        let body_start = after.len() - after.trim_start().len();
        if let Some((body, next)) = brace_group(after, body_start) {
            out.push_str(&format!("sqrt({})", rewrite_sqrt(body)));
            rest = &after[next..];
        } else {
            out.push_str("sqrt");
            rest = after;
        }
    }
    out.push_str(rest);
    out
}
