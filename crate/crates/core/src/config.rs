//! Retrieval hyperparameters and their TOML representation.

use serde::{Deserialize, Serialize};

use crate::attention::LayerSet;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Which CoT tokens contribute to fact scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum TokenSubset {
    All,
    /// The `s` tokens with the largest long/short KL divergence.
    KlTopS {
        s: usize,
    },
}

/// Columns over which the per-token top-k is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopkDomain {
    #[default]
    Context,
    FullPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Attended tokens kept per generated token.
    pub k: usize,
    /// Facts attended by at least this fraction of generated tokens are sinks.
    pub tau: f64,
    /// Minimum fact length in tokens.
    pub min_tokens: usize,
    /// Facts returned.
    pub max_facts: usize,
    pub layers: LayerSet,
    pub token_subset: TokenSubset,
    /// Rescale each aggregated row to sum to one over the context before
    /// ranking and scoring.
    pub renormalize: bool,
    pub topk_domain: TopkDomain,
}

pub const DEFAULT_KL_TOKENS: usize = 10;

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 50,
            tau: 0.99,
            min_tokens: 3,
            max_facts: 10,
            layers: LayerSet::default(),
            token_subset: TokenSubset::All,
            renormalize: true,
            topk_domain: TopkDomain::Context,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.min_tokens == 0 {
            return bad("min_tokens must be at least 1");
        }
        if self.max_facts == 0 {
            return bad("max_facts must be at least 1");
        }
        if let TokenSubset::KlTopS { s: 0 } = self.token_subset {
            return bad("s must be at least 1");
        }
        if let LayerSet::LastFraction(q) = self.layers {
            if !(q > 0.0 && q <= 1.0) {
                return bad("layer fraction must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RetrievalConfig::default();
        assert_eq!((c.k, c.tau, c.min_tokens, c.max_facts), (50, 0.99, 3, 10));
        assert_eq!(c.layers, LayerSet::LastFraction(0.25));
        c.validate().unwrap();
    }

    #[test]
    fn toml_partial_and_full() {
        let c: RetrievalConfig = toml::from_str("").unwrap();
        assert_eq!(c, RetrievalConfig::default());
        let c: RetrievalConfig = toml::from_str(
            r#"
            k = 20
            tau = 0.9
            layers = { explicit = [1, 2] }
            token_subset = { rule = "kl-top-s", s = 4 }
            topk_domain = "full-prompt"
            "#,
        )
        .unwrap();
        assert_eq!(c.k, 20);
        assert_eq!(c.layers, LayerSet::Explicit(vec![1, 2]));
        assert_eq!(c.token_subset, TokenSubset::KlTopS { s: 4 });
        assert_eq!(c.topk_domain, TopkDomain::FullPrompt);
        assert!(toml::from_str::<RetrievalConfig>("kk = 1").is_err());
    }

    #[test]
    fn rejects_out_of_range() {
        for c in [
            RetrievalConfig {
                k: 0,
                ..Default::default()
            },
            RetrievalConfig {
                tau: 0.0,
                ..Default::default()
            },
            RetrievalConfig {
                tau: 1.5,
                ..Default::default()
            },
            RetrievalConfig {
                min_tokens: 0,
                ..Default::default()
            },
            RetrievalConfig {
                max_facts: 0,
                ..Default::default()
            },
            RetrievalConfig {
                token_subset: TokenSubset::KlTopS { s: 0 },
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
