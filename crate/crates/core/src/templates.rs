//! Prompt templates shipped with the crate.
//!
//! Assistant templates are one text file per environment with `{examples}`
//! and `{trajectory}` placeholders. Their output-format section is
//! identical across environments, which keeps feedback parsing
//! environment-agnostic.

/// Assistant analysis template for the 24 game.
pub const ASSISTANT_GAME24: &str = include_str!("../templates/assistant_game24.txt");
/// Assistant analysis template for household-style remote environments.
pub const ASSISTANT_ALFWORLD: &str = include_str!("../templates/assistant_alfworld.txt");
/// Assistant analysis template for the storefront.
pub const ASSISTANT_WEBSHOP: &str = include_str!("../templates/assistant_webshop.txt");

/// Reflection request rendered between trials, with a `{trajectory}` placeholder.
pub const REFLECTION: &str = include_str!("../templates/reflection.txt");

/// Default analysis examples substituted into `{examples}`.
pub const EXAMPLES_GAME24: &str = include_str!("../templates/examples_game24.txt");
pub const EXAMPLES_ALFWORLD: &str = include_str!("../templates/examples_alfworld.txt");
pub const EXAMPLES_WEBSHOP: &str = include_str!("../templates/examples_webshop.txt");

/// Default few-shot exemplars for the generator prompt.
pub const GENERATOR_GAME24: &str = include_str!("../templates/generator_game24.txt");
pub const GENERATOR_WEBSHOP: &str = include_str!("../templates/generator_webshop.txt");

/// Substitute the `{examples}` and `{trajectory}` placeholders.
pub fn fill(template: &str, examples: &str, trajectory: &str) -> String {
    template
        .replace("{examples}", examples)
        .replace("{trajectory}", trajectory)
}
