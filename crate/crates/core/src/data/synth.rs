//! Synthetic basin networks.
//!
//! Each basin turns sparse rain bursts into local runoff through an
//! exponential unit hydrograph. Its level is that runoff plus attenuated,
//! delayed copies of its sources' levels, plus Gaussian gauge noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{Channel, DataError, SeriesStore};
use crate::region::{balanced_tree, topological_indices, RegionGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub fn fixed(v: f64) -> Self {
        ValueRange { min: v, max: v }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Standard deviation in meters.
    Absolute { std: f64 },
    /// Standard deviation as a fraction of the noise-free drain level's std.
    RelativeToDrain { fraction: f64 },
}

fn default_step() -> i64 {
    3600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub branching: usize,
    pub height: usize,
    /// Optional cross-check of the basin count implied by `branching` and `height`.
    #[serde(default)]
    pub basins: Option<usize>,
    pub steps: usize,
    #[serde(default)]
    pub start: i64,
    #[serde(default = "default_step")]
    pub step_seconds: i64,
    /// Unit-hydrograph time scale, in steps.
    pub kernel_scale: ValueRange,
    /// Routing delay to the downstream basin, in whole steps (bounds inclusive).
    pub delay: (usize, usize),
    pub attenuation: ValueRange,
    /// Probability of a rain burst per basin per step.
    pub burst_rate: f64,
    /// Mean burst depth, mm.
    pub burst_scale: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.branching == 0 || self.height == 0 {
            return bad("branching and height must be at least 1");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.step_seconds <= 0 {
            return bad("step_seconds must be positive");
        }
        let ks = self.kernel_scale;
        if !(ks.min > 0.0 && ks.min <= ks.max && ks.max.is_finite()) {
            return bad("kernel scales must be positive with min <= max");
        }
        if self.delay.0 < 1 || self.delay.0 > self.delay.1 {
            return bad("delays must be at least 1 with min <= max");
        }
        let a = self.attenuation;
        if !(a.min > 0.0 && a.min <= a.max && a.max <= 1.0) {
            return bad("attenuations must lie in (0, 1] with min <= max");
        }
        if !(0.0..=1.0).contains(&self.burst_rate) {
            return bad("burst_rate must be a probability");
        }
        if !(self.burst_scale > 0.0 && self.burst_scale.is_finite()) {
            return bad("burst_scale must be positive");
        }
        let noise_ok = match self.noise {
            NoiseSpec::Absolute { std } => std >= 0.0 && std.is_finite(),
            NoiseSpec::RelativeToDrain { fraction } => fraction >= 0.0 && fraction.is_finite(),
        };
        if !noise_ok {
            return bad("noise must be non-negative");
        }
        Ok(())
    }
}

/// Per-basin routing parameters, indexed by basin declaration order.
/// `delay` and `attenuation` describe the edge to the downstream basin.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinHydrology {
    pub kernel_scale: Vec<f64>,
    pub delay: Vec<usize>,
    pub attenuation: Vec<f64>,
}

/// `k(tau) = exp(-tau / s) / s` for `tau = 0 ..= floor(4 s)`.
pub fn kernel(scale: f64) -> Vec<f64> {
    let len = (4.0 * scale).floor() as usize + 1;
    (0..len).map(|tau| (-(tau as f64) / scale).exp() / scale).collect()
}

fn convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    (0..signal.len())
        .map(|t| {
            kernel
                .iter()
                .take(t + 1)
                .enumerate()
                .map(|(tau, k)| k * signal[t - tau])
                .sum()
        })
        .collect()
}

/// Route `precip` (indexed by basin declaration order) through the network.
///
/// Level noise is drawn from `rng` basin by basin in topological order; no
/// draws happen when `noise_std` is zero.
pub fn simulate(
    g: &RegionGraph,
    precip: &[Vec<f64>],
    hydro: &BasinHydrology,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>, DataError> {
    let order = topological_indices(g)?;
    let len = precip.first().map_or(0, Vec::len);
    let noise = if noise_std > 0.0 {
        Some(Normal::new(0.0, noise_std).map_err(|e| DataError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut levels = vec![Vec::new(); g.len()];
    for i in order {
        let mut y = convolve(&precip[i], &kernel(hydro.kernel_scale[i]));
        for &j in g.upstream_indices(i) {
            let (delay, a) = (hydro.delay[j], hydro.attenuation[j]);
            for t in delay..len {
                y[t] += a * levels[j][t - delay];
            }
        }
        if let Some(noise) = &noise {
            for v in &mut y {
                *v += noise.sample(rng);
            }
        }
        levels[i] = y;
    }
    Ok(levels)
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Build a balanced region and its series. Bit-identical for identical configs.
pub fn generate_synthetic(c: &SynthConfig) -> Result<(RegionGraph, SeriesStore), DataError> {
    c.validate()?;
    let g = balanced_tree(c.branching, c.height)?;
    if let Some(n) = c.basins {
        if n != g.len() {
            return Err(DataError::InvalidConfig(format!(
                "branching {} and height {} give {} basins, not {n}",
                c.branching,
                c.height,
                g.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let n = g.len();

    let mut hydro = BasinHydrology {
        kernel_scale: Vec::with_capacity(n),
        delay: Vec::with_capacity(n),
        attenuation: Vec::with_capacity(n),
    };
    for _ in 0..n {
        hydro.kernel_scale.push(c.kernel_scale.sample(&mut rng));
        hydro.delay.push(rng.random_range(c.delay.0..=c.delay.1));
        hydro.attenuation.push(c.attenuation.sample(&mut rng));
    }

    let burst = Exp::new(1.0 / c.burst_scale).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    let precip: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..c.steps)
                .map(|_| {
                    if rng.random::<f64>() < c.burst_rate {
                        burst.sample(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let noise_std = match c.noise {
        NoiseSpec::Absolute { std } => std,
        NoiseSpec::RelativeToDrain { fraction } => {
            let clean = simulate(&g, &precip, &hydro, 0.0, &mut rng)?;
            let drain = g.index_of(g.drain().expect("balanced tree has one drain")).unwrap();
            fraction * population_std(&clean[drain])
        }
    };
    let levels = simulate(&g, &precip, &hydro, noise_std, &mut rng)?;

    let store = SeriesStore::new(
        g.basin_ids().map(str::to_string).collect(),
        c.start,
        c.step_seconds,
        precip,
        levels,
    )?;
    debug_assert!(store.series(0, Channel::Level).len() == c.steps);
    Ok((g, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::Basin;

    fn config() -> SynthConfig {
        SynthConfig {
            branching: 2,
            height: 3,
            basins: Some(7),
            steps: 500,
            start: 0,
            step_seconds: 3600,
            kernel_scale: ValueRange { min: 1.0, max: 4.0 },
            delay: (1, 4),
            attenuation: ValueRange { min: 0.5, max: 1.0 },
            burst_rate: 0.05,
            burst_scale: 10.0,
            noise: NoiseSpec::RelativeToDrain { fraction: 0.05 },
            seed: 7,
        }
    }

    fn chain() -> RegionGraph {
        RegionGraph::new(
            vec![Basin::new("leaf"), Basin::new("drain")],
            vec![("leaf".into(), "drain".into())],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let (g1, s1) = generate_synthetic(&config()).unwrap();
        let (g2, s2) = generate_synthetic(&config()).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(s1.to_csv(), s2.to_csv());
        let other = SynthConfig { seed: 8, ..config() };
        assert_ne!(generate_synthetic(&other).unwrap().1, s1);
    }

    #[test]
    fn zero_rain_zero_noise_is_flat_zero() {
        let c = SynthConfig {
            burst_rate: 0.0,
            noise: NoiseSpec::Absolute { std: 0.0 },
            ..config()
        };
        let (g, s) = generate_synthetic(&c).unwrap();
        for b in 0..g.len() {
            assert!(s.series(b, Channel::Precip).iter().all(|&v| v == 0.0));
            assert!(s.series(b, Channel::Level).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unit_burst_traces_kernel() {
        let g = RegionGraph::new(vec![Basin::new("solo")], vec![]).unwrap();
        let mut rain = vec![0.0; 10];
        rain[0] = 1.0;
        let hydro = BasinHydrology {
            kernel_scale: vec![1.0],
            delay: vec![1],
            attenuation: vec![1.0],
        };
        let y = simulate(&g, &[rain], &hydro, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let y = &y[0];
        for t in 0..=4 {
            assert!((y[t] - (-(t as f64)).exp()).abs() < 1e-15);
        }
        assert!(y.windows(2).take(4).all(|w| w[1] < w[0]));
        assert!(y[5..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delayed_copy_along_chain() {
        let g = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let leaf_rain: Vec<f64> = (0..60).map(|t| if t % 7 == 0 { 2.0 } else { 0.0 }).collect();
        let hydro = BasinHydrology {
            kernel_scale: vec![2.0, 1.5],
            delay: vec![3, 1],
            attenuation: vec![1.0, 1.0],
        };
        let y = simulate(&g, &[leaf_rain, vec![0.0; 60]], &hydro, 0.0, &mut rng).unwrap();
        assert!(y[1][..3].iter().all(|&v| v == 0.0));
        for t in 3..60 {
            assert_eq!(y[1][t], y[0][t - 3]);
        }
    }

    #[test]
    fn kernel_support() {
        assert_eq!(kernel(1.0).len(), 5);
        assert_eq!(kernel(2.5).len(), 11);
        assert_eq!(kernel(2.0)[0], 0.5);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            SynthConfig { delay: (0, 2), ..config() },
            SynthConfig { attenuation: ValueRange { min: 0.0, max: 1.0 }, ..config() },
            SynthConfig { attenuation: ValueRange { min: 0.5, max: 1.5 }, ..config() },
            SynthConfig { kernel_scale: ValueRange::fixed(0.0), ..config() },
            SynthConfig { burst_scale: -1.0, ..config() },
            SynthConfig { basins: Some(6), ..config() },
        ];
        for c in cases {
            assert_eq!(generate_synthetic(&c).unwrap_err().code(), "invalid-config", "{c:?}");
        }
    }

    #[test]
    fn relative_noise_scales_with_drain() {
        let clean = SynthConfig { noise: NoiseSpec::Absolute { std: 0.0 }, ..config() };
        let (g, s0) = generate_synthetic(&clean).unwrap();
        let (_, s1) = generate_synthetic(&config()).unwrap();
        let drain = g.index_of(g.drain().unwrap()).unwrap();
        let sigma = 0.05 * population_std(s0.series(drain, Channel::Level));
        // Leaves only see their own noise, so the residual std is about sigma.
        let leaf = g.index_of("b07").unwrap();
        let resid: Vec<f64> = s1
            .series(leaf, Channel::Level)
            .iter()
            .zip(s0.series(leaf, Channel::Level))
            .map(|(a, b)| a - b)
            .collect();
        let r = population_std(&resid);
        assert!((r / sigma - 1.0).abs() < 0.15, "{r} vs {sigma}");
        assert_eq!(s0.series(leaf, Channel::Precip), s1.series(leaf, Channel::Precip));
    }
}
