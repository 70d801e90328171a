//! Prompt templates with named `{PLACEHOLDER}` substitution.
//!
//! Built-in templates ship with the crate; a directory of same-named `.txt`
//! files overrides them so operators can tune prompts without rebuilding.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{template}` leaves placeholder {{{name}}} unsubstituted")]
    MissingPlaceholder { template: String, name: String },
    #[error("prompt directory is missing `{0}`")]
    MissingFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Review criteria inserted at `{RULES}`; overridable via config.
pub const DEFAULT_REVIEW_RULES: &str = "\
1. Weigh overlap in research scope, technical approach, and intended application outcomes.\n\
2. Prefer overlap in core contributions over shared boilerplate or common domain vocabulary.\n\
3. Treat reworded but equivalent content as overlap; wording tricks do not reduce duplication.\n\
4. A single highly duplicative reference outweighs several weak partial matches.";

/// The full template set used across the debate and feedback stages.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub initial: String,
    pub debate: String,
    pub judge: String,
    pub score: String,
    pub pairwise: String,
    pub summary: String,
    pub comparison: String,
    pub rules: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::builtin()
    }
}

const TEMPLATE_FILES: [&str; 7] =
    ["initial", "debate", "judge", "score", "pairwise", "summary", "comparison"];

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet {
            initial: include_str!("../templates/initial.txt").to_string(),
            debate: include_str!("../templates/debate.txt").to_string(),
            judge: include_str!("../templates/judge.txt").to_string(),
            score: include_str!("../templates/score.txt").to_string(),
            pairwise: include_str!("../templates/pairwise.txt").to_string(),
            summary: include_str!("../templates/summary.txt").to_string(),
            comparison: include_str!("../templates/comparison.txt").to_string(),
            rules: DEFAULT_REVIEW_RULES.to_string(),
        }
    }

    /// Loads `<name>.txt` for every template from a directory; all seven
    /// files must be present. An optional `rules.txt` overrides the rules.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = PromptSet::builtin();
        for name in TEMPLATE_FILES {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                return Err(PromptError::MissingFile(format!("{name}.txt")));
            }
            let text = std::fs::read_to_string(&path)?;
            match name {
                "initial" => set.initial = text,
                "debate" => set.debate = text,
                "judge" => set.judge = text,
                "score" => set.score = text,
                "pairwise" => set.pairwise = text,
                "summary" => set.summary = text,
                "comparison" => set.comparison = text,
                _ => unreachable!(),
            }
        }
        let rules = dir.join("rules.txt");
        if rules.exists() {
            set.rules = std::fs::read_to_string(rules)?;
        }
        Ok(set)
    }
}

/// Substitutes `{NAME}` placeholders in a single left-to-right pass, so
/// placeholder-like text inside substituted values is never re-expanded.
/// Errors if an ALL-CAPS placeholder has no binding.
pub fn render(
    template_name: &str,
    template: &str,
    vars: &[(&str, &str)],
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if let Some((_, value)) = vars.iter().find(|(k, _)| *k == name) {
                    out.push_str(value);
                } else if !name.is_empty()
                    && name.chars().all(|c| c.is_ascii_uppercase() || c == '_')
                {
                    return Err(PromptError::MissingPlaceholder {
                        template: template_name.to_string(),
                        name: name.to_string(),
                    });
                } else {
                    out.push('{');
                    out.push_str(name);
                    out.push('}');
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_bound_placeholders() {
        let got = render("t", "hello {NAME}, round {ROUND}", &[("NAME", "x"), ("ROUND", "2")])
            .unwrap();
        assert_eq!(got, "hello x, round 2");
    }

    #[test]
    fn render_errors_on_missing_uppercase_placeholder() {
        let err = render("t", "hello {NAME}", &[]).unwrap_err();
        assert!(matches!(err, PromptError::MissingPlaceholder { name, .. } if name == "NAME"));
    }

    #[test]
    fn render_leaves_non_placeholder_braces_alone() {
        let got = render("t", "json {\"k\": 1} and {lower} stay", &[]).unwrap();
        assert_eq!(got, "json {\"k\": 1} and {lower} stay");
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        // A body containing placeholder-like text must come through verbatim.
        let got = render("t", "body: {BODY}", &[("BODY", "contains {RULES} literally")]).unwrap();
        assert_eq!(got, "body: contains {RULES} literally");
    }

    #[test]
    fn builtin_templates_render_with_their_documented_placeholders() {
        let set = PromptSet::builtin();
        let common = [
            ("AGENT_NAME", "Expert 1 of 3"),
            ("ROUND", "1 of 2"),
            ("PROJECT_UNDER_DETECTION", "p"),
            ("CANDIDATES", "c"),
            ("RULES", "r"),
            ("TRANSCRIPT", "t"),
        ];
        render("initial", &set.initial, &common).unwrap();
        render("debate", &set.debate, &common).unwrap();
        render("judge", &set.judge, &common).unwrap();
        render(
            "score",
            &set.score,
            &[
                ("PROJECT_UNDER_DETECTION", "p"),
                ("REFERENCES", "r"),
                ("CONCLUSION_SECTION", ""),
                ("RULES", "r"),
            ],
        )
        .unwrap();
        render("pairwise", &set.pairwise, &[("PROJECT_UNDER_DETECTION", "p"), ("REFERENCE", "r")])
            .unwrap();
        render("summary", &set.summary, &[("PROJECT_UNDER_DETECTION", "p"), ("ANALYSES", "a")])
            .unwrap();
        render(
            "comparison",
            &set.comparison,
            &[("PROJECT_UNDER_DETECTION", "p"), ("REFERENCE", "r"), ("CONCLUSION", "c")],
        )
        .unwrap();
    }

    #[test]
    fn from_dir_overrides_and_requires_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let err = PromptSet::from_dir(dir.path()).unwrap_err();
        assert!(matches!(err, PromptError::MissingFile(_)));

        for name in TEMPLATE_FILES {
            std::fs::write(dir.path().join(format!("{name}.txt")), format!("custom {name}"))
                .unwrap();
        }
        let set = PromptSet::from_dir(dir.path()).unwrap();
        assert_eq!(set.initial, "custom initial");
        assert_eq!(set.comparison, "custom comparison");
        assert_eq!(set.rules, DEFAULT_REVIEW_RULES);
    }
}
