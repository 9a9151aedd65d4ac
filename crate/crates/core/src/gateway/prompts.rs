//! The five prompt protocols and their rendering.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::images::ImageRef;
use crate::qa::{segments, Segment};
use crate::text::stable_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    Refine,
    Mcq,
    Truefalse,
    VqaFilter,
    McqFilter,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::Refine,
        PromptKind::Mcq,
        PromptKind::Truefalse,
        PromptKind::VqaFilter,
        PromptKind::McqFilter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Refine => "refine",
            PromptKind::Mcq => "mcq",
            PromptKind::Truefalse => "truefalse",
            PromptKind::VqaFilter => "vqa-filter",
            PromptKind::McqFilter => "mcq-filter",
        }
    }

    pub fn system_text(self) -> &'static str {
        match self {
            PromptKind::Refine => REFINE_SYSTEM,
            PromptKind::Mcq => MCQ_SYSTEM,
            PromptKind::Truefalse => TF_SYSTEM,
            PromptKind::VqaFilter => VQA_FILTER_SYSTEM,
            PromptKind::McqFilter => MCQ_FILTER_SYSTEM,
        }
    }

    pub fn user_template(self) -> &'static str {
        match self {
            PromptKind::Refine => REFINE_USER,
            PromptKind::Mcq => MCQ_USER,
            PromptKind::Truefalse => TF_USER,
            PromptKind::VqaFilter => VQA_FILTER_USER,
            PromptKind::McqFilter => MCQ_FILTER_USER,
        }
    }

    pub fn is_filter(self) -> bool {
        matches!(self, PromptKind::VqaFilter | PromptKind::McqFilter)
    }

    /// Placeholders the user template references, in first-use order.
    pub fn fields(self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for seg in segments(self.user_template()).expect("static template") {
            if let Segment::Placeholder(p) = seg {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        out
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const REFINE_SYSTEM: &str = "You are a cultural expert specializing in creating high-quality, culturally sensitive questions and answers about diverse entities from around the world. Your goal is to create natural-sounding questions and factually accurate answers that respect cultural nuances while maintaining value about important properties of entities such as location, category, administrative territory, and other key attributes.";

pub const REFINE_USER: &str = "\
Given this entity and context in {language_name}:
Entity: {label}
Description: {description}
Entity Region(Country): {region}
Original Question: {question}
Original Answer: {answer}

Task: Create both a natural question and an answer for a visual question answering dataset focused on cultural recognition of entities in multilingual contexts.

For the question:
1. Maintain the precise property being asked about in the original question (like location, category, administrative territory, awards, etc.)
2. Use natural, conversational phrasing in authentic {language_name} that a native speaker would use
3. Do NOT reveal specific details about the entity in the question unless absolutely necessary
4. Ensure cultural sensitivity and respect for local naming conventions and terminology
5. Make the question grammatically correct, clear, and unambiguous
6. Phrase it as if someone is looking at an image of this entity and asking about it
7. Avoid awkward phrasing or other template artifacts

For the answer:
1. Ensure complete factual accuracy based on the provided information
2. Use natural language appropriate for {language_name} with proper cultural context
3. Include key factual details from the original answer and leave out any unnecessary information
4. When appropriate, provide brief additional cultural context or significance of the entity
5. Make sure to include the full entity name and keep the answer around the property being asked about
6. Avoid vague phrases - be specific and informative. Ensure the answer is clear, concise, relevant, don't include unnecessary details.
7. It is best to avoid adding new information unless it is a well-known fact about the entity that enhances understanding.
8. We are grounding the model to cultural knowledge, so it is really important to be accurate and keep answers factually correct.
9. The region/country of the entity {region} is provided to you for context, so please don't confuse the entity with other regions or countries.

Format your response exactly as:
Q: [your reformulated question]
A: [your reformulated answer]";

pub const MCQ_SYSTEM: &str = "You are a cultural expert who creates high-quality multiple-choice questions about entities while preserving cultural context, and authenticity.";

pub const MCQ_USER: &str = "\
Given this entity and context in {language_name}:
Entity: {label}
Description: {description}
Original Question: {question}
Original Answer: {answer}
Region/Country: {region}

Task: Create a multiple-choice question with four options (A, B, C, D) based on the cultural entity.

For the multiple-choice question:
1. Maintain the original topic but use natural, engaging phrasing in {language_name}
2. NEVER reveal specific details about the entity in the question unless necessary
3. Respect cultural context and sensitivity
4. Make it grammatically correct, clear, and culturally relevant
5. Vary question formats beyond basic identification
6. Create questions with appropriate difficulty level
7. Aim for questions that test deeper cultural knowledge
8. Keep the entity as the grounding point

For the options:
1. Option A should ALWAYS be the correct answer
2. Create three plausible but incorrect options (B, C, D)
3. All options should be culturally accurate, sensible, and realistic
4. Ensure all options are similar in length and format
5. All incorrect options should be from the same general category
6. Options should represent meaningful distinctions but yet plausible and challenging within the cultural/regional context

For the explanation:
1. Briefly explain why option A is correct
2. Include relevant cultural or historical context
3. Keep explanation concise but informative (1-3 sentences)
4. Keep the entity as the grounding point

Example format will be provided based on language context.

Create a multiple-choice question for this entity in exactly this format:
Q: [your multiple-choice question]
A) [correct answer]
B) [plausible incorrect option]
C) [plausible incorrect option]
D) [plausible incorrect option]
Correct: A
Explanation: [brief explanation with cultural context]";

pub const TF_SYSTEM: &str = "You are a cultural expert who creates clear and culturally-sensitive true/false statements/questions about entities that test understanding while preserving authenticity.";

pub const TF_USER: &str = "\
Given this entity and context in {language_name}:
Entity: {label}
Description: {description}
Original Question: {question}
Original Answer: {answer}
Region/Country: {region}

Task: Create a true/false statement based on the cultural entity.

For the statement/question:
1. Create either a clear statement OR a yes/no question about the entity in {language_name}
2. Mix between statements and questions for variety
3. Make it unambiguous - clearly either true or false
4. Test meaningful cultural knowledge, not trivial details
5. Respect cultural sensitivity
6. Keep the entity as the central focus
7. Vary between true and false answers for diversity

For the explanation:
1. Briefly explain why the statement is true or false
2. Include relevant cultural or historical context
3. Keep it concise (1-2 sentences)

Example format will be provided based on language context.

Create a true/false item for this entity in exactly this format:
Statement: [your true/false statement]
Answer: [True/False]
Explanation: [brief explanation]

OR

Question: [your true/false question]
Answer: [True/False]
Explanation: [brief explanation]";

pub const VQA_FILTER_SYSTEM: &str = "You are an expert at evaluating whether images match with cultural entities and their descriptions. You assess alignment between visual content and textual information.";

pub const VQA_FILTER_USER: &str = "\
Evaluate this VQA sample for quality and alignment.

Entity Information:
Label: {label}
Description: {description}
Region/Country: {region}
Language: {language}
Question: {question}
Answer: {answer}

Your task is to determine:
1. Does the image show or reasonably represent the entity described?
2. Are there any quality issues with this sample?

Common issues to check for:
1. Image completely unrelated to the entity (e.g., entity is about a person, but image is of animal. Or entity is about park but image show city, or entity is about a person but image is of a building)
2. Mixed languages in question or answer
3. Obvious factual errors in the answer that you can confirm and very sure about
4. Question and answer mismatch
5. Corrupted or incomplete answer

If you are not sure about the answer:
1. Treat sample as match and no issue
2. We are mostly concerned with the image being completely irrelevant to the entity and we understand some models may not know some long-tail entities
3. So unless there is a clear mismatch or quality issue in rephrased question/answer, treat it as match

Other considerations:
1. If the question asks about education or birth place or other entity properties, treat it as a match if the image is related to the entity, even if it does not show the specific property
2. If the image is not provided, treat it as match unless the answer is clearly unrelated to the entity or has problematic issues mentioned above
3. I repeat, if you are not sure about your answer and can not confirm it which might happen alot with long-tail entities, treat it as match and no issue

Format your response exactly as (Notice and keep the line breaks):
MATCH: [True/False]
ISSUE: [None/ImageMismatch/MixedLanguage/FactualError/QAMismatch/Unclear]
EXPLANATION: [Brief explanation of your assessment]";

pub const MCQ_FILTER_SYSTEM: &str = "You are an expert at evaluating MCQ quality and cultural alignment. You assess whether questions match with cultural entities and check for quality issues.";

pub const MCQ_FILTER_USER: &str = "\
Evaluate this MCQ sample for quality and alignment.

Entity Information:
Label: {label}
Description: {description}
Region/Country: {region}
Language: {language}
Question Type: {question_type}
Question: {question}
Options: {options_text}
Correct Answer: {correct_answer}
Explanation: {explanation}

Your task is to determine:
1. Does the image (if present) reasonably represent the entity described?
2. Is the question culturally relevant to the specified region?
3. Are there any quality issues with this MCQ?

Common issues to check for:
1. Image completely unrelated to the entity or question
2. Question not relevant to the cultural context or region
3. Incorrect answer or poor explanation
4. Mixed languages in question, options, or explanation
5. Poorly formed question or confusing options
6. Factual errors you can confirm

Guidelines:
1. If you are not sure about cultural relevance or correctness, treat it as acceptable
2. Focus on obvious mismatches and clear quality issues
3. For questions without images, focus on cultural relevance and question quality
4. Consider regional context when evaluating cultural appropriateness

Format your response exactly as:
MATCH: [True/False]
CULTURALLY_RELEVANT: [True/False]
ISSUE: [None/ImageMismatch/CulturalMismatch/IncorrectAnswer/MixedLanguage/PoorQuestion/FactualError/Other]
EXPLANATION: [Brief explanation of your assessment]";

/// Named values substituted into a prompt template.
pub type PromptContext = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub entity_id: String,
    pub language: String,
    pub region: String,
    pub qa_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub kind: PromptKind,
    pub system_text: String,
    pub user_text: String,
    pub image: Option<ImageRef>,
    pub meta: PromptMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("missing prompt field {0}")]
    MissingField(String),
    #[error("{0} prompts carry no image")]
    UnexpectedImage(PromptKind),
}

pub fn render_prompt(kind: PromptKind, ctx: &PromptContext) -> Result<PromptRequest, PromptError> {
    let mut user = String::with_capacity(kind.user_template().len() + 256);
    for seg in segments(kind.user_template()).expect("static template") {
        match seg {
            Segment::Literal(s) => user.push_str(s),
            Segment::Placeholder(p) => match ctx.get(p) {
                Some(v) => user.push_str(v),
                None => return Err(PromptError::MissingField(p.to_owned())),
            },
        }
    }
    Ok(PromptRequest {
        kind,
        system_text: kind.system_text().to_owned(),
        user_text: user,
        image: None,
        meta: PromptMeta::default(),
    })
}

impl PromptRequest {
    pub fn with_image(mut self, image: Option<ImageRef>) -> Result<Self, PromptError> {
        if image.is_some() && !self.kind.is_filter() {
            return Err(PromptError::UnexpectedImage(self.kind));
        }
        self.image = image;
        Ok(self)
    }

    pub fn with_meta(mut self, meta: PromptMeta) -> Self {
        self.meta = meta;
        self
    }

    /// Replay key over (kind, system text, user text, image title). Retries
    /// after a malformed response use a distinct key per attempt.
    pub fn request_hash(&self, attempt: u32) -> String {
        let image = self.image.as_ref().map(|i| i.commons_title.as_str()).unwrap_or("");
        let attempt = attempt.to_string();
        let mut fields = vec![self.kind.as_str(), &self.system_text, &self.user_text, image];
        if attempt != "0" {
            fields.push(&attempt);
        }
        stable_hash(fields)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn einstein_ctx() -> PromptContext {
        [
            ("language_name", "English"),
            ("label", "Albert Einstein"),
            ("description", "German-born theoretical physicist"),
            ("region", "Germany"),
            ("question", "Where was this person born?"),
            ("answer", "Albert Einstein was born in Ulm, Germany."),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    #[test]
    fn refine_prompt_contents() {
        let req = render_prompt(PromptKind::Refine, &einstein_ctx()).unwrap();
        assert!(req.user_text.contains("Entity: Albert Einstein\n"));
        assert!(req.user_text.contains("Do NOT reveal specific details about the entity"));
        assert!(req.user_text.starts_with("Given this entity and context in English:\n"));
        assert!(req.user_text.ends_with("Q: [your reformulated question]\nA: [your reformulated answer]"));
        assert!(req.system_text.starts_with("You are a cultural expert specializing in creating high-quality, culturally sensitive questions"));
        assert!(!req.user_text.contains('{'));
    }

    #[test]
    fn missing_field_is_named() {
        let mut ctx = einstein_ctx();
        ctx.remove("region");
        assert_eq!(
            render_prompt(PromptKind::Refine, &ctx),
            Err(PromptError::MissingField("region".into()))
        );
    }

    #[test]
    fn deterministic() {
        let a = render_prompt(PromptKind::Mcq, &einstein_ctx()).unwrap();
        let b = render_prompt(PromptKind::Mcq, &einstein_ctx()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.request_hash(0), b.request_hash(0));
        assert_ne!(a.request_hash(0), a.request_hash(1));
    }

    #[test]
    fn field_sets() {
        assert_eq!(
            PromptKind::Refine.fields(),
            vec!["language_name", "label", "description", "region", "question", "answer"]
        );
        assert_eq!(
            PromptKind::VqaFilter.fields(),
            vec!["label", "description", "region", "language", "question", "answer"]
        );
        assert_eq!(
            PromptKind::McqFilter.fields(),
            vec![
                "label",
                "description",
                "region",
                "language",
                "question_type",
                "question",
                "options_text",
                "correct_answer",
                "explanation"
            ]
        );
    }

    #[test]
    fn format_blocks_are_verbatim() {
        assert!(MCQ_USER.contains("Option A should ALWAYS be the correct answer"));
        assert!(MCQ_USER.ends_with("Correct: A\nExplanation: [brief explanation with cultural context]"));
        assert!(TF_USER.contains("Explanation: [brief explanation]\n\nOR\n\nQuestion: [your true/false question]"));
        assert!(VQA_FILTER_USER.contains("MATCH: [True/False]\nISSUE: [None/ImageMismatch/MixedLanguage/FactualError/QAMismatch/Unclear]"));
        assert!(MCQ_FILTER_USER.contains("CULTURALLY_RELEVANT: [True/False]"));
    }

    #[test]
    fn images_only_on_filters() {
        let img = ImageRef::new("a.jpg", crate::images::ImageSource::P18);
        let req = render_prompt(PromptKind::Refine, &einstein_ctx()).unwrap();
        assert!(req.with_image(img).is_err());
    }
}
