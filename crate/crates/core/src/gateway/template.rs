use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    MergeParallel,
    MergeSequential,
    Denoise,
    ExtractUnits,
    GenerateQuestions,
    GuideFirstPerson,
    GuideSubsequent,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::MergeParallel,
        TemplateId::MergeSequential,
        TemplateId::Denoise,
        TemplateId::ExtractUnits,
        TemplateId::GenerateQuestions,
        TemplateId::GuideFirstPerson,
        TemplateId::GuideSubsequent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::MergeParallel => "merge_parallel",
            TemplateId::MergeSequential => "merge_sequential",
            TemplateId::Denoise => "denoise",
            TemplateId::ExtractUnits => "extract_units",
            TemplateId::GenerateQuestions => "generate_questions",
            TemplateId::GuideFirstPerson => "guide_first_person",
            TemplateId::GuideSubsequent => "guide_subsequent",
        }
    }

    fn source(self) -> &'static str {
        match self {
            TemplateId::MergeParallel => include_str!("../../prompts/v1/merge_parallel.toml"),
            TemplateId::MergeSequential => include_str!("../../prompts/v1/merge_sequential.toml"),
            TemplateId::Denoise => include_str!("../../prompts/v1/denoise.toml"),
            TemplateId::ExtractUnits => include_str!("../../prompts/v1/extract_units.toml"),
            TemplateId::GenerateQuestions => include_str!("../../prompts/v1/generate_questions.toml"),
            TemplateId::GuideFirstPerson => include_str!("../../prompts/v1/guide_first_person.toml"),
            TemplateId::GuideSubsequent => include_str!("../../prompts/v1/guide_subsequent.toml"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| GatewayError::InvalidInput(format!("unknown template {s:?}")))
    }
}

/// A versioned prompt resource.
///
/// `user` binds positional slots `{1}`, `{2}`, ... ; `user_each` is repeated
/// once per input with `{index}` and `{text}`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub version: u32,
    pub system: String,
    #[serde(default)]
    pub user: Option<String>,
    #[serde(default)]
    pub user_each: Option<String>,
    #[serde(default)]
    pub assistant_prefix: Option<String>,
    #[serde(default)]
    pub slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    pub assistant_prefix: Option<String>,
}

impl PromptTemplate {
    pub fn get(id: TemplateId) -> &'static PromptTemplate {
        static ALL: OnceLock<Vec<PromptTemplate>> = OnceLock::new();
        let all = ALL.get_or_init(|| {
            TemplateId::ALL
                .into_iter()
                .map(|id| {
                    let parsed: PromptTemplate =
                        toml::from_str(id.source()).unwrap_or_else(|e| panic!("prompt resource {id}: {e}"));
                    assert_eq!(parsed.id, id, "prompt resource id mismatch");
                    parsed
                })
                .collect()
        });
        all.iter().find(|t| t.id == id).expect("every template id has a resource")
    }

    pub fn render(&self, inputs: &[String]) -> Result<RenderedPrompt, GatewayError> {
        let user = if let Some(each) = &self.user_each {
            inputs
                .iter()
                .enumerate()
                .map(|(i, text)| each.replace("{index}", &(i + 1).to_string()).replace("{text}", text))
                .collect::<Vec<_>>()
                .join("\n")
        } else if let Some(user) = &self.user {
            if inputs.len() != self.slots.len() {
                return Err(GatewayError::InvalidInput(format!(
                    "template {} takes {} input(s), got {}",
                    self.id,
                    self.slots.len(),
                    inputs.len()
                )));
            }
            // Bind from the last slot down so "{1}" never matches inside "{10}".
            inputs
                .iter()
                .enumerate()
                .rev()
                .fold(user.clone(), |acc, (i, text)| acc.replace(&format!("{{{}}}", i + 1), text))
        } else {
            String::new()
        };
        Ok(RenderedPrompt {
            system: self.system.trim().to_string(),
            user,
            assistant_prefix: self.assistant_prefix.clone(),
        })
    }
}
