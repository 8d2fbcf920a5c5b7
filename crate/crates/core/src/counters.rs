//! Process-wide instrumentation counters.
//!
//! Cheap named counters bumped at architectural checkpoints (refinement
//! stages, text-path entry points, ...). Tests use them to assert structural
//! claims such as "this ablation variant never touches the text path".

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

fn table() -> &'static Mutex<HashMap<&'static str, u64>> {
    static TABLE: OnceLock<Mutex<HashMap<&'static str, u64>>> = OnceLock::new();
    TABLE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub fn bump(name: &'static str) {
    let mut t = table().lock().expect("counter table poisoned");
    *t.entry(name).or_insert(0) += 1;
}

pub fn get(name: &str) -> u64 {
    let t = table().lock().expect("counter table poisoned");
    t.get(name).copied().unwrap_or(0)
}

pub fn reset() {
    let mut t = table().lock().expect("counter table poisoned");
    t.clear();
}

/// Counter names bumped by the model code.
pub mod names {
    pub const TEXT_ENCODE: &str = "text.encode";
    pub const PROMPT_PREDICT: &str = "generator.predict_prompts";
    pub const FUSION_AFFINE: &str = "generator.fusion_affine";
    pub const REFINE_STAGE: &str = "generator.refine_stage";
    pub const VIT_FORWARD: &str = "vit.forward";
    pub const DISC_FORWARD: &str = "discriminator.forward";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_and_reset() {
        reset();
        bump("test.counter");
        bump("test.counter");
        assert_eq!(get("test.counter"), 2);
        assert_eq!(get("test.other"), 0);
        reset();
        assert_eq!(get("test.counter"), 0);
    }
}
