use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::InspectorConfig;

/// One sampling window, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_ms: u64,
    pub duration_ms: u64,
}

/// Endless sequence of sampling windows starting at `t0`.
#[derive(Debug, Clone)]
pub struct Schedule {
    frequency: (u64, u64, u64),
    interval: (u64, u64, u64),
    rng: ChaCha8Rng,
    next_start: u64,
}

fn draw(rng: &mut ChaCha8Rng, (fixed, lo, hi): (u64, u64, u64)) -> u64 {
    if fixed > 0 {
        fixed
    } else {
        rng.gen_range(lo..=hi)
    }
}

impl Iterator for Schedule {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        let start_ms = self.next_start;
        let duration_ms = draw(&mut self.rng, self.interval);
        let gap = draw(&mut self.rng, self.frequency);
        self.next_start = start_ms.saturating_add(gap);
        Some(Window {
            start_ms,
            duration_ms,
        })
    }
}

/// Windows start every `inspection_frequency` ms and last
/// `inspection_interval` ms; zero values are drawn per window from the
/// min/max ranges with an RNG seeded by `seed`.
pub fn schedule(config: &InspectorConfig, t0_ms: u64, seed: u64) -> Schedule {
    Schedule {
        frequency: (
            config.inspection_frequency,
            config.frequency_min,
            config.frequency_max,
        ),
        interval: (
            config.inspection_interval,
            config.interval_min,
            config.interval_max,
        ),
        rng: ChaCha8Rng::seed_from_u64(seed),
        next_start: t0_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_defaults() {
        let w: Vec<Window> = schedule(&InspectorConfig::default(), 1000, 0)
            .take(3)
            .collect();
        assert_eq!(
            w,
            [
                Window {
                    start_ms: 1000,
                    duration_ms: 20_000
                },
                Window {
                    start_ms: 121_000,
                    duration_ms: 20_000
                },
                Window {
                    start_ms: 241_000,
                    duration_ms: 20_000
                },
            ]
        );
    }

    #[test]
    fn random_gaps_stay_in_range() {
        let cfg = InspectorConfig {
            inspection_frequency: 0,
            inspection_interval: 0,
            ..Default::default()
        };
        let w: Vec<Window> = schedule(&cfg, 0, 42).take(1001).collect();
        let gaps: Vec<u64> = w
            .windows(2)
            .map(|p| p[1].start_ms - p[0].start_ms)
            .collect();
        assert!(gaps.iter().all(|g| (60_000..=300_000).contains(g)));
        assert!(w.iter().all(|x| (10_000..=30_000).contains(&x.duration_ms)));
        let mean = gaps.iter().sum::<u64>() as f64 / gaps.len() as f64;
        assert!((mean - 180_000.0).abs() <= 0.05 * 180_000.0, "{mean}");
        let again: Vec<Window> = schedule(&cfg, 0, 42).take(1001).collect();
        assert_eq!(w, again);
    }
}
