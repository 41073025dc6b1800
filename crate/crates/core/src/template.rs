//! `{{placeholder}}` substitution for prompt templates.

use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template}: no value for placeholder {{{{{name}}}}}")]
    MissingValue { template: String, name: String },
    #[error("template {template}: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
}

/// A parsed prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    source: String,
}

impl Template {
    pub fn new(name: impl Into<String>, source: impl Into<String>) -> Result<Self, TemplateError> {
        let t = Template {
            name: name.into(),
            source: source.into(),
        };
        // Surface syntax errors at load time rather than on first render.
        t.placeholders()?;
        Ok(t)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn placeholders(&self) -> Result<BTreeSet<String>, TemplateError> {
        let mut out = BTreeSet::new();
        let mut rest = self.source.as_str();
        let mut offset = 0;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                return Err(TemplateError::Unterminated {
                    template: self.name.clone(),
                    offset: offset + start,
                });
            };
            out.insert(after[..end].trim().to_string());
            let consumed = start + 2 + end + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        Ok(out)
    }

    /// Substitute every placeholder. Values are inserted verbatim and are not
    /// themselves scanned for placeholders.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.source.len() + 256);
        let mut rest = self.source.as_str();
        let mut offset = 0;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| TemplateError::Unterminated {
                    template: self.name.clone(),
                    offset: offset + start,
                })?;
            let key = after[..end].trim();
            let value = vars
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::MissingValue {
                    template: self.name.clone(),
                    name: key.to_string(),
                })?;
            out.push_str(value);
            let consumed = start + 2 + end + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_trims_keys() {
        let t = Template::new("t", "Hi {{ name }}, stage {{stage}}.").unwrap();
        assert_eq!(
            t.render(&[("name", "Ana"), ("stage", "3")]).unwrap(),
            "Hi Ana, stage 3."
        );
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = Template::new("t", "{{a}}").unwrap();
        assert_eq!(t.render(&[("a", "{{b}}")]).unwrap(), "{{b}}");
    }

    #[test]
    fn missing_value_is_an_error() {
        let t = Template::new("t", "{{a}} {{b}}").unwrap();
        assert_eq!(
            t.render(&[("a", "x")]),
            Err(TemplateError::MissingValue {
                template: "t".into(),
                name: "b".into()
            })
        );
    }

    #[test]
    fn unterminated_placeholder_rejected_at_load() {
        assert!(matches!(
            Template::new("t", "hello {{oops"),
            Err(TemplateError::Unterminated { offset: 6, .. })
        ));
    }
}
