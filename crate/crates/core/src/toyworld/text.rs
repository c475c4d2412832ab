//! Toy text: a fixed vocabulary and the keyword table mapping free-form shot
//! actions to motion labels.
//!
//! Keyword table, checked in order against the lower-cased action text:
//!
//! | keywords present                                   | label        |
//! |----------------------------------------------------|--------------|
//! | `wave`, `waves`, `waving`, `greet`, `hand`, `hands` | `wave`       |
//! | a walk word and `left`                              | `walk left`  |
//! | a walk word and `right`                             | `walk right` |
//! | anything else                                       | `idle`       |
//!
//! Walk words: `walk`, `walks`, `walking`, `step`, `steps`, `move`, `moves`,
//! `moving`, `stroll`, `strolls`.

use super::MotionLabel;
use crate::mmdit::TextTokens;

/// Id 0 is the null token used for text dropout; id 1 is unknown.
pub const NULL_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

pub const VOCAB: [&str; 16] = [
    "<null>", "<unk>", "idle", "walk", "left", "right", "wave", "stand", "still", "talk", "calm", "happy", "sad",
    "excited", "neutral", "and",
];

const WAVE_WORDS: [&str; 6] = ["wave", "waves", "waving", "greet", "hand", "hands"];
const WALK_WORDS: [&str; 10] = ["walk", "walks", "walking", "step", "steps", "move", "moves", "moving", "stroll", "strolls"];

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(|w| w.to_lowercase())
}

/// Applies the keyword table.
pub fn label_for_action(action: &str) -> MotionLabel {
    let ws: Vec<String> = words(action).collect();
    let has = |set: &[&str]| ws.iter().any(|w| set.contains(&w.as_str()));
    if has(&WAVE_WORDS) {
        MotionLabel::Wave
    } else if has(&WALK_WORDS) && has(&["left"]) {
        MotionLabel::WalkLeft
    } else if has(&WALK_WORDS) && has(&["right"]) {
        MotionLabel::WalkRight
    } else {
        MotionLabel::Idle
    }
}

pub fn token_id(word: &str) -> u32 {
    VOCAB.iter().position(|v| *v == word).map(|i| i as u32).unwrap_or(UNK_ID)
}

/// Word-level tokenization, truncated to `max_len`.
pub fn tokenize(text: &str, max_len: usize) -> TextTokens {
    TextTokens::sequential(words(text).map(|w| token_id(&w)).take(max_len).collect())
}

/// Canonical caption tokens of a label.
pub fn label_tokens(label: MotionLabel) -> TextTokens {
    tokenize(label.as_str(), 4)
}

/// The dropped-text condition: a single null token.
pub fn null_tokens() -> TextTokens {
    TextTokens::sequential(vec![NULL_ID])
}
