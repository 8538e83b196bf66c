//! Reference simulators: a noisy circle map, Euler-Maruyama SDEs and
//! Lorenz 63.
//!
//! All randomness comes from `ChaCha8Rng` seeded with the spec's `seed`, so a
//! spec reproduces its trajectory bit for bit on any platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ulam::Trajectory;
use crate::{Error, Result};

/// In-place drift: writes `F(x)` into the output slice.
pub type Drift = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `2x + x(1 - x)/2`, reduced mod 1 by the caller.
pub fn lanford_map(x: f64) -> f64 {
    2.0 * x + 0.5 * x * (1.0 - x)
}

/// Noisy map on the unit circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub noise_halfwidth: f64,
    /// Number of samples including the initial point.
    pub steps: usize,
    pub initial: f64,
    pub seed: u64,
}

impl Default for MapSpec {
    fn default() -> Self {
        Self { noise_halfwidth: 0.1, steps: 10_000_000, initial: 0.1, seed: 7 }
    }
}

/// `x_{k+1} = (map(x_k) + xi_k) mod 1` with `xi_k ~ U[-h, h]`.
pub fn simulate_map<F: Fn(f64) -> f64>(map: F, spec: &MapSpec) -> Result<Trajectory> {
    if !(spec.noise_halfwidth >= 0.0) {
        return Err(Error::ParameterError("noise half-width must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.noise_halfwidth;
    let mut x = spec.initial.rem_euclid(1.0);
    let mut data = Vec::with_capacity(spec.steps);
    for _ in 0..spec.steps {
        data.push(x);
        let xi = if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
        x = (map(x) + xi).rem_euclid(1.0);
        // rem_euclid can round up to exactly 1.0 for tiny negative inputs.
        if x >= 1.0 {
            x = 0.0;
        }
    }
    Trajectory::new(1, 1.0, data)
}

pub fn simulate_lanford(spec: &MapSpec) -> Result<Trajectory> {
    simulate_map(lanford_map, spec)
}

/// Euler-Maruyama run of `dx = F(x) dt + sigma dW`.
pub struct SdeSpec {
    pub drift: Drift,
    /// One entry (shared by all axes) or one per axis.
    pub sigma: Vec<f64>,
    pub dt: f64,
    /// Integration steps after the initial point.
    pub steps: usize,
    pub initial: Vec<f64>,
    pub seed: u64,
    /// Keep every `sample_every`-th state.
    pub sample_every: usize,
    /// Abort when any coordinate exceeds this in magnitude.
    pub guard: f64,
}

impl SdeSpec {
    pub fn new(drift: Drift, initial: Vec<f64>, sigma: f64, dt: f64, steps: usize, seed: u64) -> Self {
        Self { drift, sigma: vec![sigma], dt, steps, initial, seed, sample_every: 1, guard: 1e6 }
    }
}

pub fn simulate_sde_em(spec: &SdeSpec) -> Result<Trajectory> {
    let d = spec.initial.len();
    if d == 0 || !(spec.dt > 0.0) || spec.sample_every == 0 {
        return Err(Error::ParameterError("need a nonempty initial state, dt > 0 and sample_every >= 1".into()));
    }
    let sigma: Vec<f64> = match spec.sigma.len() {
        1 => vec![spec.sigma[0]; d],
        k if k == d => spec.sigma.clone(),
        k => return Err(Error::LengthMismatch { expected: d, got: k }),
    };
    if sigma.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::ParameterError("sigma must be nonnegative".into()));
    }
    let scale: Vec<f64> = sigma.iter().map(|s| s * spec.dt.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = spec.initial.clone();
    let mut f = vec![0.0; d];
    let mut data = Vec::with_capacity((spec.steps / spec.sample_every + 1) * d);
    data.extend_from_slice(&x);
    for step in 1..=spec.steps {
        (spec.drift)(&x, &mut f);
        for k in 0..d {
            let xi: f64 = rng.sample(StandardNormal);
            x[k] += f[k] * spec.dt + scale[k] * xi;
        }
        if x.iter().any(|v| !(v.abs() <= spec.guard)) {
            return Err(Error::NumericalBlowup { step });
        }
        if step % spec.sample_every == 0 {
            data.extend_from_slice(&x);
        }
    }
    Trajectory::new(d, spec.dt * spec.sample_every as f64, data)
}

/// `x - x^3 + alpha`.
pub fn double_well_1d_field(alpha: f64) -> Drift {
    Box::new(move |x, out| out[0] = x[0] - x[0].powi(3) + alpha)
}

/// `R(x, y) = (y, x - x^3) / 2`; leaves the density of the unrotated
/// system (with `alpha = 0`) invariant.
pub fn rotation_field(x: f64, y: f64) -> [f64; 2] {
    [0.5 * y, 0.5 * (x - x.powi(3))]
}

/// `F(x, y) = (x - x^3 + alpha, -y)`, plus `R` when `with_rotation`.
pub fn double_well_2d_field(alpha: f64, with_rotation: bool) -> Drift {
    Box::new(move |p, out| {
        let (x, y) = (p[0], p[1]);
        out[0] = x - x.powi(3) + alpha;
        out[1] = -y;
        if with_rotation {
            let r = rotation_field(x, y);
            out[0] += r[0];
            out[1] += r[1];
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lorenz63Spec {
    pub s: f64,
    pub r: f64,
    pub b: f64,
    pub dt: f64,
    /// Integration steps kept after the transient.
    pub steps: usize,
    /// Time units integrated and discarded first.
    pub transient: f64,
    pub initial: [f64; 3],
    pub sample_every: usize,
    pub guard: f64,
}

impl Default for Lorenz63Spec {
    fn default() -> Self {
        Self {
            s: 10.0,
            r: 28.0,
            b: 8.0 / 3.0,
            dt: 1e-3,
            steps: 10_000_000,
            transient: 100.0,
            initial: [1.0, 1.0, 1.0],
            sample_every: 1,
            guard: 1e4,
        }
    }
}

fn lorenz(s: f64, r: f64, b: f64, v: [f64; 3]) -> [f64; 3] {
    [s * (v[1] - v[0]), v[0] * (r - v[2]) - v[1], v[0] * v[1] - b * v[2]]
}

fn rk4(spec: &Lorenz63Spec, v: [f64; 3]) -> [f64; 3] {
    let f = |w| lorenz(spec.s, spec.r, spec.b, w);
    let h = spec.dt;
    let add = |a: [f64; 3], k: [f64; 3], c: f64| [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2]];
    let k1 = f(v);
    let k2 = f(add(v, k1, h / 2.0));
    let k3 = f(add(v, k2, h / 2.0));
    let k4 = f(add(v, k3, h));
    [0, 1, 2].map(|i| v[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Fourth-order Runge-Kutta integration of Lorenz 63.
///
/// The output starts at the state reached after the transient and holds
/// `steps / sample_every + 1` samples spaced `dt * sample_every`.
pub fn simulate_lorenz63(spec: &Lorenz63Spec) -> Result<Trajectory> {
    if !(spec.dt > 0.0) || spec.sample_every == 0 || !(spec.transient >= 0.0) {
        return Err(Error::ParameterError("need dt > 0, transient >= 0 and sample_every >= 1".into()));
    }
    let mut v = spec.initial;
    let transient_steps = (spec.transient / spec.dt).round() as usize;
    let check = |v: &[f64; 3], step| {
        if v.iter().any(|x| !(x.abs() <= spec.guard)) {
            Err(Error::NumericalBlowup { step })
        } else {
            Ok(())
        }
    };
    for step in 0..transient_steps {
        v = rk4(spec, v);
        check(&v, step)?;
    }
    let mut data = Vec::with_capacity((spec.steps / spec.sample_every + 1) * 3);
    data.extend_from_slice(&v);
    for step in 1..=spec.steps {
        v = rk4(spec, v);
        check(&v, transient_steps + step)?;
        if step % spec.sample_every == 0 {
            data.extend_from_slice(&v);
        }
    }
    Trajectory::new(3, spec.dt * spec.sample_every as f64, data)
}

/// Named testbeds exposed on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Lanford,
    Dw1d,
    Dw2d,
    Dw2dRot,
    L63,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lanford" => Ok(Preset::Lanford),
            "dw1d" => Ok(Preset::Dw1d),
            "dw2d" => Ok(Preset::Dw2d),
            "dw2d-rot" => Ok(Preset::Dw2dRot),
            "l63" => Ok(Preset::L63),
            _ => Err(Error::ParameterError(format!("unknown preset `{s}` (lanford, dw1d, dw2d, dw2d-rot, l63)"))),
        }
    }
}

/// Tunable knobs shared by the presets; `None` picks the preset default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetOverrides {
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub sigma: Option<f64>,
    pub alpha: Option<f64>,
    pub sample_every: Option<usize>,
    pub transient: Option<f64>,
}

impl Preset {
    pub fn default_sigma(self) -> f64 {
        match self {
            Preset::Lanford | Preset::L63 => 0.0,
            Preset::Dw1d => 0.7,
            Preset::Dw2d | Preset::Dw2dRot => 0.4,
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            Preset::Dw1d | Preset::Dw2d => -0.1,
            _ => 0.0,
        }
    }

    pub fn default_dt(self) -> f64 {
        match self {
            Preset::Lanford => 1.0,
            Preset::L63 => 1e-3,
            _ => 1e-2,
        }
    }

    /// Default domain and grid for box partitions of this preset.
    pub fn default_grid(self) -> (Vec<[f64; 2]>, Vec<usize>) {
        match self {
            Preset::Lanford => (vec![[0.0, 1.0]], vec![256]),
            Preset::Dw1d => (vec![[-1.75, 1.75]], vec![256]),
            Preset::Dw2d | Preset::Dw2dRot => (vec![[-2.0, 2.0], [-1.5, 1.5]], vec![32, 32]),
            Preset::L63 => (vec![[-20.0, 20.0], [0.0, 50.0]], vec![64, 64]),
        }
    }

    pub fn simulate(self, o: &PresetOverrides) -> Result<Trajectory> {
        let steps = o.steps.unwrap_or(10_000_000);
        let seed = o.seed.unwrap_or(7);
        let dt = o.dt.unwrap_or(self.default_dt());
        let sigma = o.sigma.unwrap_or(self.default_sigma());
        let alpha = o.alpha.unwrap_or(self.default_alpha());
        let every = o.sample_every.unwrap_or(1);
        match self {
            Preset::Lanford => {
                let t = simulate_lanford(&MapSpec { steps, seed, ..Default::default() })?;
                Ok(if every > 1 { t.thinned(every) } else { t })
            }
            Preset::Dw1d | Preset::Dw2d | Preset::Dw2dRot => {
                let (drift, initial) = match self {
                    Preset::Dw1d => (double_well_1d_field(alpha), vec![0.0]),
                    p => (double_well_2d_field(alpha, p == Preset::Dw2dRot), vec![0.0, 0.0]),
                };
                let mut spec = SdeSpec::new(drift, initial, sigma, dt, steps, seed);
                spec.sample_every = every;
                simulate_sde_em(&spec)
            }
            Preset::L63 => simulate_lorenz63(&Lorenz63Spec {
                dt,
                steps,
                sample_every: every,
                transient: o.transient.unwrap_or(100.0),
                ..Default::default()
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanford_arithmetic() {
        let spec = MapSpec { noise_halfwidth: 0.0, steps: 3, initial: 0.0, seed: 1 };
        assert_eq!(simulate_lanford(&spec).unwrap().as_flat(), &[0.0, 0.0, 0.0]);
        let spec = MapSpec { initial: 0.5, ..spec };
        assert_eq!(simulate_lanford(&spec).unwrap().point(1), &[0.125]);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let spec = MapSpec { steps: 1000, ..Default::default() };
        assert_eq!(simulate_lanford(&spec).unwrap(), simulate_lanford(&spec).unwrap());
        let other = MapSpec { seed: 8, ..spec.clone() };
        assert_ne!(simulate_lanford(&spec).unwrap(), simulate_lanford(&other).unwrap());
        let a = simulate_sde_em(&SdeSpec::new(double_well_1d_field(-0.1), vec![0.0], 0.4, 0.01, 500, 3)).unwrap();
        let b = simulate_sde_em(&SdeSpec::new(double_well_1d_field(-0.1), vec![0.0], 0.4, 0.01, 500, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_sde() {
        let zero: Drift = Box::new(|_, out| out[0] = 0.0);
        let t = simulate_sde_em(&SdeSpec::new(zero, vec![0.3], 0.0, 0.1, 10, 0)).unwrap();
        assert!(t.as_flat().iter().all(|&x| x == 0.3));
        let decay: Drift = Box::new(|x, out| out[0] = -x[0]);
        let t = simulate_sde_em(&SdeSpec::new(decay, vec![1.0], 0.0, 1e-3, 1000, 0)).unwrap();
        assert!((t.point(1000)[0] - (-1f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn blowup_guard() {
        let explode: Drift = Box::new(|x, out| out[0] = x[0] * x[0]);
        let mut spec = SdeSpec::new(explode, vec![1.0], 0.0, 0.5, 100, 0);
        spec.guard = 1e3;
        assert!(matches!(simulate_sde_em(&spec), Err(Error::NumericalBlowup { .. })));
    }

    #[test]
    fn noise_scaling() {
        let zero = || -> Drift { Box::new(|_, out| out[0] = 0.0) };
        let sd = |sigma: f64| {
            let t = simulate_sde_em(&SdeSpec::new(zero(), vec![0.0], sigma, 0.01, 100_000, 11)).unwrap();
            let inc: Vec<f64> = t.as_flat().windows(2).map(|w| w[1] - w[0]).collect();
            let var = inc.iter().map(|x| x * x).sum::<f64>() / inc.len() as f64;
            var.sqrt()
        };
        let ratio = sd(0.8) / sd(0.4);
        // Same seed, same normals: the ratio is exact up to rounding.
        assert!((ratio - 2.0).abs() < 3.0 * 2.0 / (2.0 * 100_000f64).sqrt());
    }

    #[test]
    fn gradient_flow_energy_decays() {
        let v = |x: f64| x.powi(4) / 4.0 - x * x / 2.0 + 0.1 * x;
        let t = simulate_sde_em(&SdeSpec::new(double_well_1d_field(-0.1), vec![1.6], 0.0, 1e-3, 5000, 0)).unwrap();
        for w in t.as_flat().windows(2) {
            assert!(v(w[1]) <= v(w[0]) + 1e-5);
        }
    }

    #[test]
    fn fields() {
        let f = double_well_2d_field(0.0, false);
        let mut out = [1.0; 2];
        f(&[0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
        assert_eq!(rotation_field(1.0, 0.0), [0.0, 0.0]);
    }

    #[test]
    fn rotation_preserves_density() {
        // rho0 ∝ exp(2 (x^2/2 - x^4/4 - y^2/2) / sigma^2); check div(R rho0) = 0.
        let sigma: f64 = 0.4;
        let rho = |x: f64, y: f64| (2.0 * (x * x / 2.0 - x.powi(4) / 4.0 - y * y / 2.0) / (sigma * sigma)).exp();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in -10..=10 {
            for j in -10..=10 {
                let (x, y) = (0.15 * i as f64, 0.1 * j as f64);
                let flux = |x: f64, y: f64| {
                    let r = rotation_field(x, y);
                    [r[0] * rho(x, y), r[1] * rho(x, y)]
                };
                let div = (flux(x + h, y)[0] - flux(x - h, y)[0]) / (2.0 * h) + (flux(x, y + h)[1] - flux(x, y - h)[1]) / (2.0 * h);
                worst = worst.max(div.abs() / rho(x, y));
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn lorenz_z_axis_invariant() {
        let spec = Lorenz63Spec { initial: [0.0, 0.0, 10.0], steps: 2000, transient: 0.0, ..Default::default() };
        let t = simulate_lorenz63(&spec).unwrap();
        let last = t.point(t.len() - 1);
        assert_eq!((last[0], last[1]), (0.0, 0.0));
        assert!((last[2] - 10.0 * (-8.0f64 / 3.0 * 2.0).exp()).abs() < 1e-8);
    }

    #[test]
    fn lorenz_subcritical_decays() {
        let spec = Lorenz63Spec { r: 0.5, steps: 50_000, transient: 0.0, ..Default::default() };
        let t = simulate_lorenz63(&spec).unwrap();
        assert!(t.point(t.len() - 1).iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn presets_parse() {
        assert_eq!("dw2d-rot".parse::<Preset>().unwrap(), Preset::Dw2dRot);
        assert!("nope".parse::<Preset>().is_err());
        let t = Preset::L63.simulate(&PresetOverrides { steps: Some(100), transient: Some(1.0), ..Default::default() }).unwrap();
        assert_eq!(t.dims, 3);
        assert_eq!(t.len(), 101);
    }
}
