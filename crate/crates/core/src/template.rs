/// Substitutes `{name}` placeholders in a single left-to-right pass, so
/// braces inside substituted values are never expanded. Unknown
/// placeholders and stray braces are copied through unchanged.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let extra: usize = vars.iter().map(|(_, v)| v.len()).sum();
    let mut out = String::with_capacity(template.len() + extra);
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + 1..];
        for (name, value) in vars {
            if let Some(after) = tail.strip_prefix(name).and_then(|t| t.strip_prefix('}')) {
                out.push_str(value);
                rest = after;
                continue 'scan;
            }
        }
        out.push('{');
        rest = tail;
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::fill;

    #[test]
    fn fills_known_placeholders_once() {
        let t = "Q: {q}\nA: {a} {unknown} {";
        assert_eq!(
            fill(t, &[("q", "{a}"), ("a", "x")]),
            "Q: {a}\nA: x {unknown} {"
        );
    }

    #[test]
    fn prefix_names_do_not_collide() {
        assert_eq!(fill("{ab}{a}", &[("a", "1"), ("ab", "2")]), "21");
    }
}
