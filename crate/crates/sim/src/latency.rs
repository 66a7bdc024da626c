use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Reply delay: normal, clamped to `[min_secs, max_secs]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub mean_secs: f64,
    pub spread_secs: f64,
    pub min_secs: f64,
    pub max_secs: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            mean_secs: 36.6,
            spread_secs: 8.0,
            min_secs: 10.0,
            max_secs: 170.0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.mean_secs.is_finite()
            && self.spread_secs >= 0.0
            && self.min_secs >= 0.0
            && self.min_secs <= self.max_secs
            && self.max_secs.is_finite();
        ok.then_some(()).ok_or_else(|| format!("invalid latency model {self:?}"))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let raw = match Normal::new(self.mean_secs, self.spread_secs) {
            Ok(n) => n.sample(rng),
            Err(_) => self.mean_secs,
        };
        raw.clamp(self.min_secs, self.max_secs)
    }
}
