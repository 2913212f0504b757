//! Prompt → action keyword classifier.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Walk,
    Run,
    Jump,
    Idle,
    Strike,
    SwimFly,
    Custom,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Walk => "walk",
            Action::Run => "run",
            Action::Jump => "jump",
            Action::Idle => "idle",
            Action::Strike => "strike",
            Action::SwimFly => "swim-fly",
            Action::Custom => "custom",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "walk" => Action::Walk,
            "run" => Action::Run,
            "jump" => Action::Jump,
            "idle" => Action::Idle,
            "strike" => Action::Strike,
            "swim-fly" | "swim" | "fly" => Action::SwimFly,
            "custom" => Action::Custom,
            other => return Err(format!("unknown action '{other}'")),
        })
    }
}

const DEFAULT_LEXICON: &str = include_str!("../../assets/actions.toml");

#[derive(Debug, Deserialize)]
struct LexiconFile {
    format_version: u32,
    actions: BTreeMap<Action, Vec<String>>,
}

/// Keyword table; each keyword is stored as lowercase word tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    entries: Vec<(Vec<String>, Action)>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::from_toml(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }
}

impl Lexicon {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let file: LexiconFile = toml::from_str(text).map_err(|e| e.to_string())?;
        if file.format_version != 1 {
            return Err(format!("unsupported lexicon format_version {}", file.format_version));
        }
        let mut entries = Vec::new();
        for (action, words) in file.actions {
            for w in words {
                let toks = tokenize(&w);
                if !toks.is_empty() {
                    entries.push((toks, action));
                }
            }
        }
        Ok(Lexicon { entries })
    }

    /// Longest keyword match wins, then the earliest position; no match is idle.
    pub fn parse(&self, prompt: &str) -> Action {
        let words = tokenize(prompt);
        let mut best: Option<(usize, usize, Action)> = None;
        for (kw, action) in &self.entries {
            let len: usize = kw.iter().map(String::len).sum::<usize>() + kw.len() - 1;
            for start in 0..words.len() {
                if !matches_at(&words, start, kw) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bl, bs, _)) => len > bl || (len == bl && start < bs),
                };
                if better {
                    best = Some((len, start, *action));
                }
                break;
            }
        }
        best.map_or(Action::Idle, |(_, _, a)| a)
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

fn matches_at(words: &[String], start: usize, kw: &[String]) -> bool {
    if start + kw.len() > words.len() {
        return false;
    }
    let last = kw.len() - 1;
    kw.iter().enumerate().all(|(i, k)| if i == last { words[start + i].starts_with(k.as_str()) } else { words[start + i] == *k })
}

/// Parses with the bundled lexicon.
pub fn parse_action(prompt: &str) -> Action {
    Lexicon::default().parse(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_hits_and_fallback() {
        assert_eq!(parse_action("a corgi walking happily"), Action::Walk);
        assert_eq!(parse_action("the robot jumps over a box"), Action::Jump);
        assert_eq!(parse_action("a serene scene"), Action::Idle);
        assert_eq!(parse_action(""), Action::Idle);
    }

    #[test]
    fn longest_keyword_wins() {
        // the longer keyword wins regardless of position
        assert_eq!(parse_action("a dog hops then sprints away"), Action::Run);
        assert_eq!(parse_action("bird flies and hops"), Action::SwimFly);
    }

    #[test]
    fn custom_lexicon() {
        let lex = Lexicon::from_toml("format_version = 1\n[actions]\ncustom = [\"moonwalk\"]\nwalk = [\"walk\"]\n").unwrap();
        assert_eq!(lex.parse("do a moonwalk"), Action::Custom);
        assert!(Lexicon::from_toml("format_version = 2\n[actions]\n").is_err());
    }

    #[test]
    fn parsing_is_pure() {
        let lex = Lexicon::default();
        assert_eq!(lex.parse("horse gallops"), lex.parse("horse gallops"));
    }
}
