//! Two-phase mixing schedule, coupon-collector epoch sizing, and seeded
//! mixed-domain batch sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};
use crate::triplets::Domain;

/// Relative distance to the nearest integer below which the iteration count
/// is treated as that integer. A few ulps: enough to absorb rounding in the
/// float evaluation, small enough not to swallow genuine fractional parts.
pub const CEIL_SNAP: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSchedule {
    /// Epochs strictly before this are synthetic-only.
    pub warmup_epochs: u32,
    /// Epoch at which the ratio reaches `r_max`.
    pub total_epochs: u32,
    pub r_max: f64,
    /// Target fraction of synthetic items seen per epoch.
    pub coverage: f64,
    pub batch_size: usize,
    pub devices: usize,
    pub n_synthetic: usize,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            warmup_epochs: 1,
            total_epochs: 250,
            r_max: 0.30,
            coverage: 0.8,
            batch_size: 64,
            devices: 1,
            n_synthetic: 1,
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::config("warmup_epochs", "must not exceed total_epochs"));
        }
        if !(0.0..=1.0).contains(&self.r_max) {
            return Err(Error::config("r_max", "must be in [0, 1]"));
        }
        if !(self.coverage > 0.0 && self.coverage < 1.0) {
            return Err(Error::config("coverage", "must be in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.devices == 0 {
            return Err(Error::config("devices", "must be at least 1"));
        }
        if self.n_synthetic == 0 {
            return Err(Error::config("n_synthetic", "must be at least 1"));
        }
        Ok(())
    }

    /// Outdoor fraction at epoch `e`: 0 during warm-up, then a linear ramp
    /// reaching `r_max` at `total_epochs`.
    pub fn mixing_ratio(&self, epoch: u32) -> Result<f64> {
        if epoch > self.total_epochs {
            return Err(Error::invalid(format!(
                "epoch {epoch} is past the last epoch {}",
                self.total_epochs
            )));
        }
        if epoch < self.warmup_epochs {
            return Ok(0.0);
        }
        let span = self.total_epochs - self.warmup_epochs;
        if span == 0 {
            return Ok(self.r_max);
        }
        // fraction first: it is at most 1, so the product never rounds past r_max
        Ok(self.r_max * (f64::from(epoch - self.warmup_epochs) / f64::from(span)))
    }

    /// `ceil(N_syn * ln(1/(1-psi)) / (devices * B))`.
    pub fn iterations_per_epoch(&self) -> usize {
        iterations_for(self.n_synthetic, self.coverage, self.devices, self.batch_size)
    }
}

pub fn iterations_for(n_synthetic: usize, coverage: f64, devices: usize, batch_size: usize) -> usize {
    let draws = -(-coverage).ln_1p();
    let x = n_synthetic as f64 * draws / (devices as f64 * batch_size as f64);
    snapped_ceil(x).max(1.0) as usize
}

/// `ceil(x)`, except values within [`CEIL_SNAP`] (relative) of an integer
/// return that integer.
pub fn snapped_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= CEIL_SNAP * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Number of outdoor samples in a batch of `batch` at ratio `r`, rounding
/// halves up.
pub fn outdoor_count(ratio: f64, batch: usize) -> usize {
    ((ratio * batch as f64) + 0.5).floor().min(batch as f64) as usize
}

/// How the outdoor fraction evolves over training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum MixingPolicy {
    /// Warm-up then linear ramp.
    Curriculum,
    /// Constant ratio from the first epoch.
    Static { ratio: f64 },
    /// Synthetic-only until `switch_epoch`, outdoor-only from then on.
    TwoStep { switch_epoch: u32 },
    SyntheticOnly,
}

impl MixingPolicy {
    pub fn ratio(&self, schedule: &CurriculumSchedule, epoch: u32) -> Result<f64> {
        match *self {
            MixingPolicy::Curriculum => schedule.mixing_ratio(epoch),
            MixingPolicy::Static { ratio } => Ok(ratio),
            MixingPolicy::TwoStep { switch_epoch } => Ok(if epoch < switch_epoch { 0.0 } else { 1.0 }),
            MixingPolicy::SyntheticOnly => Ok(0.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MixingPolicy::Curriculum => "curriculum",
            MixingPolicy::Static { .. } => "static",
            MixingPolicy::TwoStep { .. } => "two-step",
            MixingPolicy::SyntheticOnly => "synthetic-only",
        }
    }
}

/// Mean curriculum ratio over epochs `0..=total_epochs`; a static run at this
/// ratio consumes the same total outdoor budget.
pub fn mean_curriculum_ratio(schedule: &CurriculumSchedule) -> Result<f64> {
    let mut sum = 0.0;
    for e in 0..=schedule.total_epochs {
        sum += schedule.mixing_ratio(e)?;
    }
    Ok(sum / f64::from(schedule.total_epochs + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub domain: Domain,
    pub index: usize,
}

/// Seeded mixed-domain batch sampler over two datasets of known size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSampler {
    pub seed: u64,
    pub batch_size: usize,
    pub n_synthetic: usize,
    pub n_outdoor: usize,
}

impl BatchSampler {
    /// Indices for one device batch at `(epoch, iter)`. Synthetic entries
    /// come first. Draws are i.i.d. with replacement within each domain and
    /// depend only on `(seed, device, epoch, iter)`; class labels are never
    /// consulted.
    pub fn batch(&self, ratio: f64, device: usize, epoch: u32, iter: usize) -> Result<Vec<BatchEntry>> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::invalid(format!("mixing ratio {ratio} outside [0, 1]")));
        }
        let k = outdoor_count(ratio, self.batch_size);
        if k > 0 && self.n_outdoor == 0 {
            return Err(Error::config("outdoor", "ratio is positive but the outdoor dataset is empty"));
        }
        if k < self.batch_size && self.n_synthetic == 0 {
            return Err(Error::config("synthetic", "synthetic share is positive but the dataset is empty"));
        }
        let mut rng = rng::stream(
            self.seed,
            &[label::SAMPLER, device as u64, u64::from(epoch), iter as u64],
        );
        let mut out = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size - k {
            out.push(BatchEntry {
                domain: Domain::Synthetic,
                index: rng.random_range(0..self.n_synthetic),
            });
        }
        for _ in 0..k {
            out.push(BatchEntry {
                domain: Domain::Outdoor,
                index: rng.random_range(0..self.n_outdoor),
            });
        }
        Ok(out)
    }
}

/// Fraction of `n_items` hit at least once by `draws` uniform draws.
pub fn empirical_coverage<R: Rng + ?Sized>(n_items: usize, draws: usize, rng: &mut R) -> f64 {
    let mut seen = vec![false; n_items];
    for _ in 0..draws {
        seen[rng.random_range(0..n_items)] = true;
    }
    seen.iter().filter(|s| **s).count() as f64 / n_items as f64
}

/// One CSV row per epoch: `epoch,ratio,outdoor_per_batch`.
pub fn schedule_csv(schedule: &CurriculumSchedule) -> Result<String> {
    schedule.validate()?;
    let mut out = String::from("epoch,ratio,outdoor_per_batch,iterations_per_epoch\n");
    let iters = schedule.iterations_per_epoch();
    for e in 0..=schedule.total_epochs {
        let r = schedule.mixing_ratio(e)?;
        out.push_str(&format!(
            "{e},{r},{},{iters}\n",
            outdoor_count(r, schedule.batch_size)
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_schedule() -> CurriculumSchedule {
        CurriculumSchedule::default()
    }

    #[test]
    fn ratio_examples() {
        let s = default_schedule();
        assert_eq!(s.mixing_ratio(0).unwrap(), 0.0);
        assert_eq!(s.mixing_ratio(250).unwrap(), 0.30);
        assert!((s.mixing_ratio(126).unwrap() - 0.30 * 125.0 / 249.0).abs() < 1e-15);
        assert!((s.mixing_ratio(126).unwrap() - 0.150602).abs() < 1e-6);
        assert!(s.mixing_ratio(251).is_err());
    }

    #[test]
    fn iteration_examples() {
        assert_eq!(iterations_for(100, 0.5, 1, 10), 7);
        // boundary: ln(1/(1-psi)) == devices*B/N
        let psi = 1.0 - (-(10.0f64 / 1000.0)).exp();
        assert_eq!(iterations_for(1000, psi, 1, 10), 1);
    }

    #[test]
    fn outdoor_count_rounding() {
        assert_eq!(outdoor_count(0.15060, 64), 10);
        assert_eq!(outdoor_count(0.5, 64), 32);
        assert_eq!(outdoor_count(0.0, 64), 0);
        // one sample per batch of 64 sits at r = 1/64
        assert_eq!(outdoor_count(0.0156, 64), 1);
        assert_eq!(outdoor_count(1.0 / 128.0, 64), 1);
    }

    #[test]
    fn warmup_batches_are_synthetic() {
        let s = default_schedule();
        let r = s.mixing_ratio(0).unwrap();
        let sampler = BatchSampler {
            seed: 1,
            batch_size: 64,
            n_synthetic: 10,
            n_outdoor: 0,
        };
        let b = sampler.batch(r, 0, 0, 0).unwrap();
        assert!(b.iter().all(|e| e.domain == Domain::Synthetic));
        assert_eq!(b.len(), 64);
    }

    #[test]
    fn sampling_is_deterministic_and_errors_on_empty() {
        let mut s = BatchSampler {
            seed: 7,
            batch_size: 32,
            n_synthetic: 100,
            n_outdoor: 50,
        };
        let a = s.batch(0.3, 1, 5, 2).unwrap();
        assert_eq!(a, s.batch(0.3, 1, 5, 2).unwrap());
        assert_eq!(a.iter().filter(|e| e.domain == Domain::Outdoor).count(), 10);
        assert_ne!(a, s.batch(0.3, 1, 5, 3).unwrap());
        s.n_outdoor = 0;
        assert!(matches!(s.batch(0.3, 0, 1, 0), Err(Error::Config { .. })));
        assert!(s.batch(0.0, 0, 1, 0).is_ok());
    }

    #[test]
    fn policies() {
        let s = CurriculumSchedule {
            warmup_epochs: 2,
            total_epochs: 10,
            ..default_schedule()
        };
        assert_eq!(MixingPolicy::TwoStep { switch_epoch: 5 }.ratio(&s, 4).unwrap(), 0.0);
        assert_eq!(MixingPolicy::TwoStep { switch_epoch: 5 }.ratio(&s, 5).unwrap(), 1.0);
        assert_eq!(MixingPolicy::Static { ratio: 0.2 }.ratio(&s, 0).unwrap(), 0.2);
        let mean = mean_curriculum_ratio(&s).unwrap();
        // ramp 0..=8 over 8 steps, scaled by 0.3, averaged over 11 epochs
        assert!((mean - 0.3 * 36.0 / 8.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn csv_first_row_is_warmup() {
        let csv = schedule_csv(&CurriculumSchedule {
            n_synthetic: 1000,
            ..default_schedule()
        })
        .unwrap();
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[..3], ["0", "0", "0"]);
        assert_eq!(csv.lines().count(), 252);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn ratio_is_bounded_and_non_decreasing(we in 0u32..20, span in 0u32..200, r_max in 0.0..=1.0f64) {
            let s = CurriculumSchedule {
                warmup_epochs: we,
                total_epochs: we + span,
                r_max,
                ..CurriculumSchedule::default()
            };
            let mut prev = 0.0;
            for e in 0..=s.total_epochs {
                let r = s.mixing_ratio(e).unwrap();
                prop_assert!((0.0..=r_max).contains(&r));
                prop_assert!(r >= prev);
                prev = r;
            }
        }

        #[test]
        fn iterations_monotone(n in 1usize..100_000, psi in 0.01..0.98f64, g in 1usize..8, b in 1usize..256) {
            let base = iterations_for(n, psi, g, b);
            prop_assert!(base >= 1);
            prop_assert!(iterations_for(n + 1, psi, g, b) >= base);
            prop_assert!(iterations_for(n, psi + 0.01, g, b) >= base);
            prop_assert!(iterations_for(n, psi, g, b + 1) <= base);
            prop_assert!(iterations_for(n, psi, g + 1, b) <= base);
        }

        #[test]
        fn outdoor_count_within_batch(ratio in 0.0..=1.0f64, batch in 1usize..512) {
            let k = outdoor_count(ratio, batch);
            prop_assert!(k <= batch);
            prop_assert!((k as f64 - ratio * batch as f64).abs() <= 0.5);
        }
    }
}
