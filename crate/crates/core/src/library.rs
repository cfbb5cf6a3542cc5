//! The bundled research strategies and their hand-written scripts.

use crate::lang::{parse_script, ScriptAst};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStrategy {
    pub name: &'static str,
    pub description: &'static str,
    /// Numbered natural-language steps.
    pub text: &'static str,
    /// Canonical script implementing `text`.
    pub script: &'static str,
}

impl SeedStrategy {
    pub fn parse(&self) -> ScriptAst {
        parse_script(self.script).expect("bundled script parses")
    }
}

pub const MINIMAL: SeedStrategy = SeedStrategy {
    name: "minimal",
    description: "Three search phrases, one search each, one report.",
    text: include_str!("../assets/strategies/minimal.txt"),
    script: include_str!("../assets/scripts/minimal.ssl"),
};

pub const EXPANSIVE: SeedStrategy = SeedStrategy {
    name: "expansive",
    description: "Splits the request into topics and searches each topic separately.",
    text: include_str!("../assets/strategies/expansive.txt"),
    script: include_str!("../assets/scripts/expansive.ssl"),
};

pub const INTENSIVE: SeedStrategy = SeedStrategy {
    name: "intensive",
    description: "Two rounds of searching, refining the phrases from what was found.",
    text: include_str!("../assets/strategies/intensive.txt"),
    script: include_str!("../assets/scripts/intensive.ssl"),
};

pub const SEEDS: [SeedStrategy; 3] = [MINIMAL, EXPANSIVE, INTENSIVE];

pub fn seed(name: &str) -> Option<SeedStrategy> {
    SEEDS.iter().copied().find(|s| s.name == name)
}
