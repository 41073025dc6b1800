//! Prompt template set: controller, mentor and evaluation templates.
//!
//! Templates live under a prompts directory laid out as
//! `controller/{stage_decision,state_determine,strategy_select}.txt`,
//! `mentor/{character,nudge,stage_<n>}.txt` and
//! `evalkit/{turn_coding,report_scoring}.txt`. The repository copies are
//! compiled in as defaults.

use std::path::Path;

use crate::template::{Template, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("cannot read prompt template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone)]
pub struct ControllerPrompts {
    pub stage_decision: Template,
    pub state_determine: Template,
    pub strategy_select: Template,
}

#[derive(Debug, Clone)]
pub struct MentorPrompts {
    pub character: Template,
    pub nudge: Template,
    /// Indexed by stage ordinal − 1.
    pub stages: [Template; 6],
}

#[derive(Debug, Clone)]
pub struct EvalPrompts {
    pub turn_coding: Template,
    pub report_scoring: Template,
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    pub controller: ControllerPrompts,
    pub mentor: MentorPrompts,
    pub eval: EvalPrompts,
}

macro_rules! bundled {
    ($rel:literal) => {
        ($rel, include_str!(concat!("../../../prompts/", $rel)))
    };
}

const BUNDLED: [(&str, &str); 13] = [
    bundled!("controller/stage_decision.txt"),
    bundled!("controller/state_determine.txt"),
    bundled!("controller/strategy_select.txt"),
    bundled!("mentor/character.txt"),
    bundled!("mentor/nudge.txt"),
    bundled!("mentor/stage_1.txt"),
    bundled!("mentor/stage_2.txt"),
    bundled!("mentor/stage_3.txt"),
    bundled!("mentor/stage_4.txt"),
    bundled!("mentor/stage_5.txt"),
    bundled!("mentor/stage_6.txt"),
    bundled!("evalkit/turn_coding.txt"),
    bundled!("evalkit/report_scoring.txt"),
];

impl PromptSet {
    /// The templates shipped with the crate.
    pub fn bundled() -> Self {
        Self::build(|rel| {
            BUNDLED
                .iter()
                .find(|(name, _)| *name == rel)
                .map(|(_, text)| text.to_string())
                .ok_or_else(|| PromptError::Io {
                    path: rel.to_string(),
                    source: std::io::Error::from(std::io::ErrorKind::NotFound),
                })
        })
        .expect("bundled prompt templates are valid")
    }

    /// Load every template from `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        Self::build(|rel| {
            let path = dir.join(rel);
            std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        })
    }

    fn build(read: impl Fn(&str) -> Result<String, PromptError>) -> Result<Self, PromptError> {
        let load =
            |rel: &str| -> Result<Template, PromptError> { Ok(Template::new(rel, read(rel)?)?) };
        let stage = |n: u8| load(&format!("mentor/stage_{n}.txt"));
        Ok(PromptSet {
            controller: ControllerPrompts {
                stage_decision: load("controller/stage_decision.txt")?,
                state_determine: load("controller/state_determine.txt")?,
                strategy_select: load("controller/strategy_select.txt")?,
            },
            mentor: MentorPrompts {
                character: load("mentor/character.txt")?,
                nudge: load("mentor/nudge.txt")?,
                stages: [
                    stage(1)?,
                    stage(2)?,
                    stage(3)?,
                    stage(4)?,
                    stage(5)?,
                    stage(6)?,
                ],
            },
            eval: EvalPrompts {
                turn_coding: load("evalkit/turn_coding.txt")?,
                report_scoring: load("evalkit/report_scoring.txt")?,
            },
        })
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::bundled()
    }
}
