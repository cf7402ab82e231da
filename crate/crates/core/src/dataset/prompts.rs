use crate::error::{Error, Result};
use crate::toyworld::SoundCategory;

use super::PromptPair;

/// Request for new source descriptions; `N` is replaced by the count.
pub const SOURCE_TEMPLATE: &str = include_str!("../../fixtures/source_prompt_template.txt");
/// Few-shot request for a target prompt; placeholders `{Source prompt}` and
/// `{Audio Keywords}`.
pub const TARGET_TEMPLATE: &str = include_str!("../../fixtures/target_prompt_template.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientFailure {
    pub message: String,
    pub retriable: bool,
}

/// A text-completion service answering the two prompt templates.
pub trait PromptClient {
    fn complete(&self, request: &str) -> std::result::Result<String, ClientFailure>;
}

pub fn fill_source_template(n: usize) -> String {
    SOURCE_TEMPLATE.replacen("Make N new", &format!("Make {n} new"), 1)
}

pub fn fill_target_template(source: &str, keyword: &str) -> String {
    TARGET_TEMPLATE
        .replacen("{Source prompt}", source, 1)
        .replacen("{Audio Keywords}", keyword, 1)
}

const PLACES: &[&str] = &[
    "city street",
    "mountain lake",
    "harbor",
    "village square",
    "desert road",
    "forest trail",
    "beach boardwalk",
    "park bridge",
    "farm field",
    "castle courtyard",
    "train station",
    "river bank",
];
const LANDMARKS: &[&str] = &["old lighthouse", "clock tower", "stone bridge", "windmill"];
const WEATHER: &[&str] = &["sunny", "clear", "bright", "cloudy", "calm"];

/// Deterministic client: numbered place descriptions for source requests,
/// keyword splicing for target requests.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToyPromptClient;

impl ToyPromptClient {
    pub fn source_description(i: usize) -> String {
        let weather = if i % 4 == 3 { "Cloudy" } else { "Sunny" };
        let place = PLACES[i % PLACES.len()];
        match i / PLACES.len() {
            0 => format!("{weather} {place}"),
            k => format!("{weather} {place} by the {}", LANDMARKS[(k - 1) % LANDMARKS.len()]),
        }
    }

    /// Replaces the first weather word with the keyword, or prefixes it.
    pub fn splice(source: &str, keyword: &str) -> String {
        let words: Vec<&str> = source.split_whitespace().collect();
        let is_weather = |w: &str| {
            let bare: String = w.chars().filter(|c| c.is_alphanumeric()).collect();
            WEATHER.contains(&bare.to_lowercase().as_str())
        };
        let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        match words.iter().position(|w| is_weather(w)) {
            Some(0) => out[0] = capitalize(keyword),
            Some(j) => out[j] = keyword.to_lowercase(),
            None => {
                if let Some(first) = out.first_mut() {
                    *first = decapitalize(first);
                }
                out.insert(0, capitalize(keyword));
            }
        }
        out.join(" ")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn decapitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn last_field<'a>(request: &'a str, label: &str) -> Option<&'a str> {
    request
        .lines()
        .rev()
        .filter_map(|l| l.trim().strip_prefix('-'))
        .map(str::trim)
        .filter_map(|l| l.strip_prefix(label))
        .map(|rest| rest.trim_start().trim_start_matches(':').trim())
        .next()
}

impl PromptClient for ToyPromptClient {
    fn complete(&self, request: &str) -> std::result::Result<String, ClientFailure> {
        if request.contains("/// Fill in ///") {
            let (source, keyword) = match (last_field(request, "Source"), last_field(request, "Keyword")) {
                (Some(s), Some(k)) if !s.is_empty() && !k.is_empty() => (s, k),
                _ => {
                    return Err(ClientFailure {
                        message: "request has no source/keyword fields".into(),
                        retriable: false,
                    })
                }
            };
            return Ok(format!("- Keyword : {keyword}\n- Target : {}", Self::splice(source, keyword)));
        }
        if let Some(rest) = request.split("Make ").nth(1) {
            if let Some(n) = rest.split_whitespace().next().and_then(|t| t.parse::<usize>().ok()) {
                return Ok((0..n)
                    .map(|i| format!("{}. {}", i + 1, Self::source_description(i)))
                    .collect::<Vec<_>>()
                    .join("\n"));
            }
        }
        Err(ClientFailure {
            message: "unrecognized request".into(),
            retriable: false,
        })
    }
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(|c: char| c.is_ascii_digit());
    let t = t.strip_prefix('.').or_else(|| t.strip_prefix(')')).unwrap_or(t);
    t.trim_start_matches('-').trim().trim_matches('"')
}

pub fn generate_source_prompts(client: &dyn PromptClient, n: usize) -> Result<Vec<String>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let reply = client.complete(&fill_source_template(n)).map_err(|f| Error::Client {
        source_prompt: String::new(),
        keyword: String::new(),
        message: f.message,
        retriable: f.retriable,
    })?;
    let prompts: Vec<String> = reply
        .lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .take(n)
        .map(String::from)
        .collect();
    Ok(prompts)
}

fn resolve_category<'a>(keyword: &str, categories: &'a [SoundCategory]) -> Option<&'a SoundCategory> {
    let k = keyword.to_lowercase();
    categories
        .iter()
        .find(|c| c.name.to_lowercase() == k || c.keywords.iter().any(|w| w.to_lowercase() == k))
}

/// One pair per `(source, keyword)`, source-major. Keywords resolve to the
/// category naming or listing them.
pub fn generate_prompt_pairs(
    sources: &[String],
    keywords: &[String],
    categories: &[SoundCategory],
    client: &dyn PromptClient,
) -> Result<Vec<PromptPair>> {
    let mut out = Vec::with_capacity(sources.len() * keywords.len());
    for source in sources {
        for keyword in keywords {
            let fail = |message: String, retriable: bool| Error::Client {
                source_prompt: source.clone(),
                keyword: keyword.clone(),
                message,
                retriable,
            };
            let cat = resolve_category(keyword, categories)
                .ok_or_else(|| fail("keyword belongs to no known category".into(), false))?;
            let reply = client
                .complete(&fill_target_template(source, keyword))
                .map_err(|f| fail(f.message, f.retriable))?;
            let target = last_field(&reply, "Target")
                .map(String::from)
                .unwrap_or_else(|| reply.trim().to_string());
            let pair = PromptPair::new(source.clone(), target, keyword.clone(), cat.name.clone())
                .map_err(|e| fail(e.to_string(), true))?;
            out.push(pair);
        }
    }
    Ok(out)
}
