use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Deserialize;

use super::{FunctionSpec, ServiceModel};
use crate::error::{Error, Result};
use crate::policy::TaskClass;

pub const NUM_BANDS: usize = 10;

/// Relative band rates: nine moderate bands and one heavy tail.
const HEAVY_TAIL_SHAPE: [f64; NUM_BANDS] = [1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 18.0, 27.0, 40.0, 150.0];

/// Spread of individual function rates around their band mean.
const RATE_JITTER_SIGMA: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct BandProfile {
    pub mean_rps: [f64; NUM_BANDS],
}

#[derive(Deserialize)]
struct ProfileRow {
    band: usize,
    mean_rps: f64,
}

impl BandProfile {
    pub fn new(mean_rps: [f64; NUM_BANDS]) -> Result<Self> {
        if mean_rps.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::MalformedProfile("band means must be finite and >= 0".into()));
        }
        if mean_rps.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::MalformedProfile(
                "band means must be non-decreasing from band 1 to 10".into(),
            ));
        }
        Ok(BandProfile { mean_rps })
    }

    /// Default profile, scaled so that `reference_density` functions per core,
    /// drawn equally from every band, demand exactly the node's capacity when
    /// each request costs `mean_work_us` of CPU.
    pub fn heavy_tailed(reference_density: f64, mean_work_us: f64) -> Self {
        let shape_sum: f64 = HEAVY_TAIL_SHAPE.iter().sum();
        let k = 1e6 * NUM_BANDS as f64 / (reference_density * shape_sum * mean_work_us);
        BandProfile {
            mean_rps: HEAVY_TAIL_SHAPE.map(|s| s * k),
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::MalformedProfile(format!("{}: {e}", path.display())))?;
        let headers = rdr
            .headers()
            .map_err(|e| Error::MalformedProfile(e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["band", "mean_rps"] {
            return Err(Error::MalformedProfile(format!(
                "expected header `band,mean_rps`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut means = [f64::NAN; NUM_BANDS];
        let mut rows = 0;
        for row in rdr.deserialize::<ProfileRow>() {
            let row = row.map_err(|e| Error::MalformedProfile(e.to_string()))?;
            if !(1..=NUM_BANDS).contains(&row.band) {
                return Err(Error::MalformedProfile(format!("band {} out of 1..=10", row.band)));
            }
            if !means[row.band - 1].is_nan() {
                return Err(Error::MalformedProfile(format!("band {} listed twice", row.band)));
            }
            means[row.band - 1] = row.mean_rps;
            rows += 1;
        }
        if rows != NUM_BANDS {
            return Err(Error::MalformedProfile(format!("expected 10 rows, got {rows}")));
        }
        BandProfile::new(means)
    }

    /// Aggregate request rate of `n` functions drawn equally from the bands.
    pub fn aggregate_rps(&self, n: usize) -> f64 {
        self.mean_rps.iter().sum::<f64>() * n as f64 / NUM_BANDS as f64
    }
}

/// `n_functions` functions drawn equally from the ten bands, each with a
/// jittered rate around its band mean. Defaults: one fair-class,
/// latency-aware sandbox per function serving fixed 100ms requests.
pub fn synth_population(n_functions: usize, profile: &BandProfile, seed: u64) -> Result<Vec<FunctionSpec>> {
    if n_functions == 0 {
        return Err(Error::invalid("workload.functions", "need at least one function"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut bands: Vec<u8> = (0..n_functions / NUM_BANDS)
        .flat_map(|_| 1..=NUM_BANDS as u8)
        .collect();
    let mut extra: Vec<u8> = (1..=NUM_BANDS as u8).collect();
    extra.shuffle(&mut rng);
    bands.extend(extra.into_iter().take(n_functions % NUM_BANDS));
    bands.shuffle(&mut rng);

    let jitter = LogNormal::new(-RATE_JITTER_SIGMA * RATE_JITTER_SIGMA / 2.0, RATE_JITTER_SIGMA)
        .expect("valid lognormal");
    Ok(bands
        .into_iter()
        .enumerate()
        .map(|(i, band)| FunctionSpec {
            id: i as u32,
            demand_band: band,
            rate_rps: profile.mean_rps[band as usize - 1] * jitter.sample(&mut rng),
            service_model: ServiceModel::Fixed { us: 100_000 },
            flagged: true,
            class: TaskClass::Fair,
            max_threads: 32,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn band_counts(specs: &[FunctionSpec]) -> [usize; NUM_BANDS] {
        let mut c = [0; NUM_BANDS];
        for s in specs {
            c[s.demand_band as usize - 1] += 1;
        }
        c
    }

    #[test]
    fn ten_functions_one_per_band() {
        let p = BandProfile::heavy_tailed(9.0, 1000.0);
        let specs = synth_population(10, &p, 3).unwrap();
        assert_eq!(band_counts(&specs), [1; NUM_BANDS]);
    }

    #[test]
    fn density_ten_on_twelve_cores() {
        let p = BandProfile::heavy_tailed(9.0, 1000.0);
        let specs = synth_population(120, &p, 3).unwrap();
        assert_eq!(band_counts(&specs), [12; NUM_BANDS]);
    }

    #[test]
    fn uneven_counts_stay_within_one() {
        let p = BandProfile::heavy_tailed(9.0, 1000.0);
        for n in [1, 7, 13, 57, 228] {
            let specs = synth_population(n, &p, n as u64).unwrap();
            let c = band_counts(&specs);
            let target = n as f64 / NUM_BANDS as f64;
            assert!(c.iter().all(|&x| (x as f64 - target).abs() <= 1.0), "{n}: {c:?}");
        }
    }

    #[test]
    fn default_profile_is_sorted_and_calibrated() {
        let p = BandProfile::heavy_tailed(9.0, 500.0);
        assert!(p.mean_rps.windows(2).all(|w| w[0] <= w[1]));
        // 108 functions at 500us each fill 12 cores.
        let demand = p.aggregate_rps(108) * 500.0;
        assert!((demand - 12e6).abs() < 1e-3 * 12e6, "{demand}");
    }

    #[test]
    fn deterministic_per_seed() {
        let p = BandProfile::heavy_tailed(9.0, 1000.0);
        assert_eq!(synth_population(50, &p, 9).unwrap(), synth_population(50, &p, 9).unwrap());
        assert_ne!(synth_population(50, &p, 9).unwrap(), synth_population(50, &p, 10).unwrap());
    }

    #[test]
    fn zero_functions_rejected() {
        let p = BandProfile::heavy_tailed(9.0, 1000.0);
        assert!(synth_population(0, &p, 1).is_err());
    }

    #[test]
    fn profile_csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        let mut f = std::fs::File::create(&good).unwrap();
        writeln!(f, "band,mean_rps").unwrap();
        for b in 1..=10 {
            writeln!(f, "{b},{}", b * 10).unwrap();
        }
        drop(f);
        let p = BandProfile::read_csv(&good).unwrap();
        assert_eq!(p.mean_rps[9], 100.0);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "band,mean_rps\n1,5\n2,3\n").unwrap();
        assert!(matches!(BandProfile::read_csv(&bad), Err(Error::MalformedProfile(_))));
        let header = dir.path().join("header.csv");
        std::fs::write(&header, "b,rps\n1,5\n").unwrap();
        assert!(matches!(BandProfile::read_csv(&header), Err(Error::MalformedProfile(_))));
    }
}
