//! Built-in label specs, personas and the two request templates.

use serde::{Deserialize, Serialize};

use crate::features::FactorId;
use crate::model::{Prompt, Response};

use super::AnnotatorError;

pub const MAX_BATCH: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelExample {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyLabelSpec {
    pub label: FactorId,
    pub definition: String,
    pub guidelines: String,
    pub ambiguity_notes: String,
    pub examples: Vec<LabelExample>,
}

// (label, definition, guidelines, ambiguity notes)
const LABEL_TABLE: [(&str, &str, &str, &str); 11] = [
    (
        "wordplay",
        "Manipulates surface linguistic features (sound, characters, syntax) to create humor through puns, double meanings, or rhythm.",
        "Check for phonetic substitutions, puns, or rhythmic structure. Use this label when surface-level manipulation is primary.",
        "If the humor comes solely from meaning inversion, consider incongruity. Focus on \"surface-level linguistic manipulation.\"",
    ),
    (
        "shared_experience",
        "Draws on shared everyday experiences, eliciting laughter through empathy.",
        "Confirm empathy is primary; exaggeration is secondary.",
        "If the humor relies primarily on impact, use exaggeration.",
    ),
    (
        "exaggeration",
        "Exaggerates or downplays quantity, emotion, or scale to an extreme.",
        "Determine whether exaggeration is the primary goal.",
        "If empathy is core, use shared_experience.",
    ),
    (
        "black_joke_satire",
        "Engages with social norms or taboos, creating humor through irony and taboo language.",
        "Record the source and target categories (i.e., what is being referenced vs. what is being targeted). Distinguish it from exaggeration and incongruity.",
        "If the humor primarily stems from the prompt's absurdity, consider surreal_nonsense. If it relies only on expectation reversal, consider incongruity.",
    ),
    (
        "surreal_nonsense",
        "Severs contextual connections, making absurdity itself the source of humor.",
        "Confirm that the logical leap is intentional.",
        "Context destruction is required; eccentricity alone is insufficient.",
    ),
    (
        "incongruity",
        "Uses a reversal of an expected development/premise as the punchline.",
        "Confirm that the response sets up an expectation and then reverses it. Check whether the reason for the reversal is explicit.",
        "If the target is the oogiri framework or the prompt itself, use meta. If ethical criticism is primary, consider black_joke_satire.",
    ),
    (
        "meta",
        "Refers to contradictions in the oogiri framework, its rules, or the prompt itself, creating humor from an external perspective.",
        "Check whether framework elements (recording, host, format) are used. Use when pointing out flaws in the prompt.",
        "If the humor is purely meaning inversion or expectation violation, consider incongruity. If it includes an overview of the framework, prioritize meta.",
    ),
    (
        "self_reference",
        "Uses the responder's own shortcomings as material, creating humor from a first-person perspective.",
        "Check for first-person pronouns and whether the responder's own characteristics/failures are central to the punchline.",
        "If the response primarily criticizes the framework or the prompt, prioritize meta.",
    ),
    (
        "personification",
        "Gives human-like emotions or a voice to inanimate objects, creating humor through characterization.",
        "Check whether the target is clearly personified. Judge whether the character's voice is the primary driver of the humor.",
        "If borrowing entire settings/stories, use parody as primary, personification as secondary.",
    ),
    (
        "parody",
        "Borrows or transforms settings/stories from external content, creating humor through the gap between the response and the source material.",
        "Explicitly identify the source material. Confirm structural borrowing (not just proper nouns).",
        "Proper nouns alone do not constitute parody. Use structural, setting, or story borrowing as the criterion.",
    ),
    (
        "mini_story",
        "Depicts a short story/scene, creating humor in the conclusion.",
        "Check whether a specific situation/scene is described and ends with a punchline. Confirm that the narrative structure is primary.",
        "If story elements are primary, use mini_story as the main label. If the response is a one-liner or primarily wordplay, prioritize other labels.",
    ),
];

// (label, prompt, response), English renderings of annotated samples.
const EXAMPLES: [(&str, &str, &str); 5] = [
    (
        "shared_experience",
        "Build suspense in one line.",
        "You know why you were called in, right?",
    ),
    (
        "self_reference",
        "Tell me the most pointless trivia in the world.",
        "I am in a bad mood when I wake up.",
    ),
    (
        "exaggeration",
        "What is a wedding you would hate like?",
        "It is held every day.",
    ),
    (
        "surreal_nonsense",
        "Slimy horse racing: what is it like?",
        "Every horse is newborn.",
    ),
    (
        "incongruity",
        "We are recruiting heroes. What are the eligibility requirements?",
        "Someone whose hometown was destroyed.",
    ),
];

pub fn builtin_label_specs() -> Vec<StrategyLabelSpec> {
    LABEL_TABLE
        .iter()
        .map(|&(label, definition, guidelines, notes)| StrategyLabelSpec {
            label: FactorId::parse(label).expect("built-in strategy label"),
            definition: definition.into(),
            guidelines: guidelines.into(),
            ambiguity_notes: notes.into(),
            examples: EXAMPLES
                .iter()
                .filter(|(l, _, _)| *l == label)
                .map(|&(_, p, r)| LabelExample {
                    prompt: p.into(),
                    response: r.into(),
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub description: String,
}

pub const PERSONA_NAMES: [&str; 7] = [
    "no_persona",
    "female_20",
    "male_20",
    "female_45",
    "male_45",
    "female_65",
    "male_65",
];

const PERSONA_TEXT: [&str; 7] = [
    "Please evaluate the Ogiri responses.",
    "You are a 20-year-old female born in 2005. You are a university student who enjoys comedy variety shows. You are sensitive to cute and emotionally resonant things, and you like relatable content. Please evaluate the Ogiri responses with a young woman's sensibility.",
    "You are a 20-year-old male born in 2005. You are a university student who frequently uses SNS and watches YouTube. You are well-versed in trending topics, memes, and internet slang. Please evaluate the Ogiri responses with a youthful sensibility.",
    "You are a 45-year-old female born in 1980. You work as a company employee and have a family (husband and two children). You are knowledgeable about Showa and Heisei era comedy and current affairs. Please evaluate based on the common sense and experience you have cultivated as a working professional.",
    "You are a 45-year-old male born in 1980. You work as a company employee and have a family (wife and two children). You are knowledgeable about Showa and Heisei era comedy and current affairs. Please evaluate based on the common sense and experience you have cultivated as a working professional.",
    "You are a 65-year-old female born in 1959. After retirement, you enjoy pursuing hobbies. You enjoy traditional comedy such as rakugo and manzai. Please evaluate the Ogiri responses from a perspective enriched by life experience.",
    "You are a 65-year-old male born in 1959. After retirement, you enjoy pursuing hobbies. You enjoy traditional comedy such as rakugo and manzai. Please evaluate the Ogiri responses from a perspective enriched by life experience.",
];

pub fn builtin_personas() -> Vec<Persona> {
    PERSONA_NAMES
        .iter()
        .zip(PERSONA_TEXT)
        .map(|(n, d)| Persona {
            name: n.to_string(),
            description: d.to_string(),
        })
        .collect()
}

pub fn persona(name: &str) -> Option<Persona> {
    builtin_personas().into_iter().find(|p| p.name == name)
}

const LABEL_HEADER: &str = "\
You are an annotator for Ogiri responses. Read the given prompt and response, and assign predefined response strategy labels accurately and consistently. Think carefully so you can explain all decision rationale, and select a confidence level that represents the reliability of your judgment.

## Task Overview
Read the given Ogiri prompt and response pairs, and based on the strategy label definitions below, annotate each response with the most appropriate strategy label. Multiple label assignments are permitted. Labels must be assigned based on the label definitions.

## Strategy Label Definitions
";

const LABEL_BLOCK: &str = "\
- Label: {{label_name}}
  Definition: {{definition}}
  Guidelines: {{guidelines}}
  Ambiguity Notes: {{ambiguity_notes}}
  Examples: {{examples}}
";

const LABEL_FOOTER: &str = r#"
## Confidence Levels
- Available confidence: high, medium, low

## Output Format
{
  "items": [
    {
      "prompt_id": "string",
      "response_id": "string",
      "selected_labels": [
        {
          "reason": "string",
          "label": "string",
          "confidence": "string"
        }
      ]
    }
  ]
}

## Annotation Target
"#;

const TARGET_BLOCK: &str = "\
prompt_id: {{prompt_id}}
response_id: {{response_id}}
Prompt: {{prompt}}
Response: {{response}}
";

const SELECTION_BODY: &str = r#"Your role is to look at multiple responses to a given Ogiri prompt, and select the response you truly find funny based on your own unique sensibility. Your task is to choose the response you find funny.

## Evaluation Rules
1. Select at most 1 response that you find funny
2. If there are no responses you find funny, you must not select any. (0 selections is acceptable)
3. For the response you select, provide a brief explanation of why you found it funny

## Prompt
{{ prompt }}

## Response_candidates
{{ response_candidates }}

## Output Format
Please output in the following JSON format.
Do not include any text other than JSON.

{
  "selected_responses": [
    {
      "reasoning": "Reason for selecting that response (approximately 50 characters)",
      "response_id": "Response ID"
    }
  ]
}

Notes:
- Include only the selected response(s) in selected_responses (maximum 1)
- If there are no responses you find funny, set selected_responses to an empty array `[]`.
- Use the exact IDs listed in the response candidates above for response_id
"#;

/// Substitutes `{{slot}}` markers in one pass; substituted text is never
/// rescanned. Panics on a slot without a value, which is a template bug.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let end = rest[start..]
            .find("}}")
            .map(|e| start + e)
            .expect("unterminated template slot");
        let key = rest[start + 2..end].trim();
        let value = values
            .iter()
            .find(|(k, _)| *k == key)
            .unwrap_or_else(|| panic!("no value for template slot `{key}`"))
            .1;
        out.push_str(value);
        rest = &rest[end + 2..];
    }
    out.push_str(rest);
    out
}

fn render_examples(examples: &[LabelExample]) -> String {
    if examples.is_empty() {
        return "(none)".into();
    }
    examples
        .iter()
        .map(|e| format!("Prompt: {} / Response: {}", e.prompt, e.response))
        .collect::<Vec<_>>()
        .join(" | ")
}

pub fn render_label_prompt(
    batch: &[(&Prompt, &Response)],
    specs: &[StrategyLabelSpec],
) -> Result<String, AnnotatorError> {
    if batch.is_empty() || batch.len() > MAX_BATCH {
        return Err(AnnotatorError::BatchSize(batch.len()));
    }
    let mut out = String::from(LABEL_HEADER);
    for spec in specs {
        let examples = render_examples(&spec.examples);
        out.push_str(&fill(
            LABEL_BLOCK,
            &[
                ("label_name", spec.label.name()),
                ("definition", &spec.definition),
                ("guidelines", &spec.guidelines),
                ("ambiguity_notes", &spec.ambiguity_notes),
                ("examples", &examples),
            ],
        ));
    }
    out.push_str(LABEL_FOOTER);
    for (i, (p, r)) in batch.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&fill(
            TARGET_BLOCK,
            &[
                ("prompt_id", &p.prompt_id),
                ("response_id", &r.response_id),
                ("prompt", &p.text),
                ("response", &r.text),
            ],
        ));
    }
    Ok(out)
}

/// A selection request split into the persona system message and the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionRequest {
    pub system: String,
    pub user: String,
}

impl SelectionRequest {
    /// The template rendered as a single text.
    pub fn full_text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

/// One candidate line: `- [<response_id>] <text>`.
pub fn candidate_line(r: &Response) -> String {
    format!("- [{}] {}", r.response_id, r.text.replace('\n', " "))
}

pub fn render_selection_prompt(
    persona: &Persona,
    prompt: &Prompt,
    candidates: &[&Response],
) -> SelectionRequest {
    let lines: Vec<String> = candidates.iter().map(|r| candidate_line(r)).collect();
    SelectionRequest {
        system: persona.description.clone(),
        user: fill(
            SELECTION_BODY,
            &[
                ("prompt", &prompt.text),
                ("response_candidates", &lines.join("\n")),
            ],
        ),
    }
}
