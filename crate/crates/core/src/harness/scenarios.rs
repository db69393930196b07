//! Bundled scenario configs.

use super::{Result, ScenarioConfig};

const BUNDLED: [(&str, &str); 5] = [
    ("gaussian-blob", include_str!("../../scenarios/gaussian-blob.toml")),
    ("uniform-ball", include_str!("../../scenarios/uniform-ball.toml")),
    ("two-blob-merger", include_str!("../../scenarios/two-blob-merger.toml")),
    ("free-streaming", include_str!("../../scenarios/free-streaming.toml")),
    ("monokinetic-hubble", include_str!("../../scenarios/monokinetic-hubble.toml")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled(name: &str) -> Option<Result<ScenarioConfig>> {
    bundled_text(name).map(|t| ScenarioConfig::parse(t, &format!("{name}.toml")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_round_trip() {
        for name in bundled_names() {
            let c = bundled(name).unwrap().unwrap();
            assert_eq!(c.scenario, name);
            assert_eq!(ScenarioConfig::parse(&c.to_toml(), name).unwrap(), c);
        }
    }
}
