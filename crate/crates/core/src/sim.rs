//! Synthetic elbow trajectories and six-channel stretch-sensor responses
//! under lateral and circular pad displacement.
//!
//! The sensor model is invented: channels facing the olecranon respond
//! linearly to flexion, channels facing the chelidon respond with a smooth
//! but irregular function of angle and time plus noise. All constants are
//! exposed through [`SensorLayout`], [`UserProfile`] and [`MotionTemplate`].

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::par;
use crate::types::{Dataset, Placement, SensorFrame, Session, CHANNELS, RAW_MAX};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorLayout {
    /// Angular position of each channel around the arm, degrees.
    pub positions: [f64; CHANNELS],
    /// Direction of the olecranon, degrees.
    pub olecranon: f64,
}

impl Default for SensorLayout {
    fn default() -> Self {
        SensorLayout {
            positions: [0.0, 60.0, 120.0, 180.0, 240.0, 300.0],
            olecranon: 180.0,
        }
    }
}

impl SensorLayout {
    pub fn validate(&self) -> Result<()> {
        for i in 0..CHANNELS {
            for j in (i + 1)..CHANNELS {
                let d = (self.positions[i] - self.positions[j]).rem_euclid(360.0);
                if d < 1e-9 || d > 360.0 - 1e-9 {
                    return Err(Error::Validation(format!(
                        "channels {i} and {j} share position {} deg",
                        self.positions[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stretch weight of each channel at circular offset `beta`.
    pub fn stretch_weights(&self, beta: f64) -> [f64; CHANNELS] {
        std::array::from_fn(|k| {
            let phi = (self.positions[k] + beta).rem_euclid(360.0);
            (phi - self.olecranon).to_radians().cos().max(0.0)
        })
    }
}

/// Per-wearer sensor characteristics.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub id: String,
    /// Raw units of full-flexion stretch per channel.
    pub gain: [f64; CHANNELS],
    /// Raw reading of a relaxed channel.
    pub baseline: [f64; CHANNELS],
    /// Descriptive only; the response model does not depend on it.
    pub girth_cm: f64,
    /// Standard deviation of additive noise, raw units.
    pub noise_scale: f64,
    /// Amplitude of the irregular chelidon-side term, raw units.
    pub chaos_scale: f64,
    pub seed: u64,
}

impl Default for UserProfile {
    fn default() -> Self {
        UserProfile {
            id: "P1".into(),
            gain: [400.0; CHANNELS],
            baseline: [200.0; CHANNELS],
            girth_cm: 24.75,
            noise_scale: 4.0,
            chaos_scale: 80.0,
            seed: 1,
        }
    }
}

impl UserProfile {
    /// A wearer with gains and baselines jittered by up to ±10 % around the
    /// defaults.
    pub fn sampled(id: impl Into<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0x5eed_0f05_e5]));
        let base = UserProfile::default();
        UserProfile {
            id: id.into(),
            gain: std::array::from_fn(|k| base.gain[k] * rng.random_range(0.9..1.1)),
            baseline: std::array::from_fn(|k| base.baseline[k] * rng.random_range(0.9..1.1)),
            girth_cm: rng.random_range(20.5..28.0),
            seed,
            ..base
        }
    }

    /// Same wearer with every gain scaled by `gain` and every baseline
    /// shifted by `offset`.
    pub fn perturbed(&self, id: impl Into<String>, gain: f64, offset: f64, seed: u64) -> Self {
        UserProfile {
            id: id.into(),
            gain: self.gain.map(|g| g * gain),
            baseline: self.baseline.map(|b| (b + offset).clamp(0.0, RAW_MAX)),
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gain.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Validation(format!("gains must be > 0: {:?}", self.gain)));
        }
        if self.baseline.iter().any(|b| !(0.0..=RAW_MAX).contains(b)) {
            return Err(Error::Validation(format!(
                "baselines must lie in [0, 1023]: {:?}",
                self.baseline
            )));
        }
        if !(20.5..=28.0).contains(&self.girth_cm) {
            return Err(Error::Validation(format!(
                "arm girth {} cm outside [20.5, 28]",
                self.girth_cm
            )));
        }
        if !(self.noise_scale >= 0.0 && self.chaos_scale >= 0.0) {
            return Err(Error::Validation("noise and chaos scales must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionTemplate {
    pub name: String,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub freq_hz: f64,
    /// Per-cycle relative frequency perturbation, uniform in ±jitter.
    pub velocity_jitter: f64,
}

impl MotionTemplate {
    pub fn new(name: &str, theta_lo: f64, theta_hi: f64, freq_hz: f64, velocity_jitter: f64) -> Result<Self> {
        let t = MotionTemplate {
            name: name.into(),
            theta_lo,
            theta_hi,
            freq_hz,
            velocity_jitter,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(40.0 <= self.theta_lo && self.theta_lo < self.theta_hi && self.theta_hi <= 180.0) {
            return Err(Error::Validation(format!(
                "angle range [{}, {}] must satisfy 40 <= lo < hi <= 180",
                self.theta_lo, self.theta_hi
            )));
        }
        if !(self.freq_hz > 0.0) || !(0.0..1.0).contains(&self.velocity_jitter) {
            return Err(Error::Validation(format!(
                "motion '{}' needs freq > 0 and jitter in [0, 1)",
                self.name
            )));
        }
        Ok(())
    }

    pub fn bend() -> Self {
        MotionTemplate::new("bend", 40.0, 180.0, 0.5, 0.3).unwrap()
    }

    pub fn walk() -> Self {
        MotionTemplate::new("walk", 90.0, 160.0, 1.0, 0.15).unwrap()
    }

    pub fn run() -> Self {
        MotionTemplate::new("run", 70.0, 160.0, 2.0, 0.15).unwrap()
    }

    pub fn jump() -> Self {
        MotionTemplate::new("jump", 60.0, 170.0, 1.5, 0.2).unwrap()
    }

    pub fn clap() -> Self {
        MotionTemplate::new("clap", 40.0, 140.0, 2.5, 0.2).unwrap()
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "bend" => Ok(Self::bend()),
            "walk" => Ok(Self::walk()),
            "run" => Ok(Self::run()),
            "jump" => Ok(Self::jump()),
            "clap" => Ok(Self::clap()),
            other => Err(Error::InvalidArgument(format!("unknown motion '{other}'"))),
        }
    }
}

/// splitmix64 over a word sequence.
pub(crate) fn mix(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

fn name_hash(s: &str) -> u64 {
    mix(&s.bytes().map(u64::from).collect::<Vec<_>>())
}

/// Quasi-periodic angle series starting and ending cycles at `theta_hi`.
///
/// Each cycle is a raised cosine whose period is drawn independently, so the
/// series is C¹: the derivative vanishes at every cycle boundary.
pub fn gen_trajectory(template: &MotionTemplate, duration_s: f64, rate_hz: f64, seed: u64) -> Vec<f64> {
    let n = (duration_s * rate_hz).floor().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid = 0.5 * (template.theta_lo + template.theta_hi);
    let amp = 0.5 * (template.theta_hi - template.theta_lo);
    let next_period = |rng: &mut ChaCha8Rng| {
        let u = if template.velocity_jitter > 0.0 {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        };
        1.0 / (template.freq_hz * (1.0 + template.velocity_jitter * u))
    };
    let mut cycle_start = 0.0;
    let mut period = next_period(&mut rng);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate_hz;
        while t >= cycle_start + period {
            cycle_start += period;
            period = next_period(&mut rng);
        }
        let phase = 2.0 * PI * (t - cycle_start) / period;
        let theta = mid + amp * phase.cos();
        out.push(theta.clamp(template.theta_lo, template.theta_hi));
    }
    out
}

/// Linear attenuation of the stretch signal with lateral offset;
/// 1 at the centre, 0.6 at ±4 cm.
pub fn lateral_attenuation(eta: f64) -> f64 {
    1.0 - eta.abs() / 10.0
}

const CHAOS_ANGLE_FREQ: [f64; 2] = [9.0, 9.0 * SQRT_2];
const CHAOS_TIME_FREQ: [f64; 2] = [1.1, 1.1 * 1.618_033_988_749_895];

/// A layout and wearer with the wearer's fixed per-channel chaos phases.
#[derive(Debug, Clone)]
pub struct SensorModel {
    pub layout: SensorLayout,
    pub profile: UserProfile,
    phases: [[f64; 2]; CHANNELS],
}

impl SensorModel {
    pub fn new(layout: SensorLayout, profile: UserProfile) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[profile.seed, 0xc4a05]));
        let phases = std::array::from_fn(|_| [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)]);
        SensorModel {
            layout,
            profile,
            phases,
        }
    }

    /// Smooth irregular term for channel `k`, in [-chaos_scale, chaos_scale].
    pub fn chaos(&self, k: usize, theta: f64, t: f64) -> f64 {
        let th = theta.to_radians();
        let [p0, p1] = self.phases[k];
        0.5 * self.profile.chaos_scale
            * ((CHAOS_ANGLE_FREQ[0] * th + p0 + CHAOS_TIME_FREQ[0] * t).sin()
                + (CHAOS_ANGLE_FREQ[1] * th + p1 + CHAOS_TIME_FREQ[1] * t).sin())
    }

    /// Noise-free readings.
    pub fn response_clean(&self, theta: f64, placement: Placement, t: f64) -> [f64; CHANNELS] {
        self.response_with(theta, placement, t, |_| 0.0)
    }

    /// Readings with additive Gaussian noise drawn from `rng`.
    pub fn response<R: Rng>(&self, theta: f64, placement: Placement, t: f64, rng: &mut R) -> [f64; CHANNELS] {
        let sigma = self.profile.noise_scale;
        self.response_with(theta, placement, t, |_| {
            let z: f64 = rng.sample(StandardNormal);
            sigma * z
        })
    }

    fn response_with(
        &self,
        theta: f64,
        placement: Placement,
        t: f64,
        mut noise: impl FnMut(usize) -> f64,
    ) -> [f64; CHANNELS] {
        let w = self.layout.stretch_weights(placement.beta());
        let stretch = (180.0 - theta) / 140.0 * lateral_attenuation(placement.eta());
        std::array::from_fn(|k| {
            let p = &self.profile;
            let v = p.baseline[k] + p.gain[k] * w[k] * stretch + (1.0 - w[k]) * self.chaos(k, theta, t) + noise(k);
            v.clamp(0.0, RAW_MAX)
        })
    }
}

/// One-shot sensor response; builds a [`SensorModel`] per call.
pub fn sensor_response<R: Rng>(
    theta: f64,
    placement: Placement,
    layout: &SensorLayout,
    profile: &UserProfile,
    t: f64,
    rng: &mut R,
) -> [f64; CHANNELS] {
    SensorModel::new(*layout, profile.clone()).response(theta, placement, t, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub eta_step: f64,
    pub beta_step: f64,
}

impl Grid {
    pub fn desk() -> Self {
        Grid {
            eta_step: 4.0,
            beta_step: 45.0,
        }
    }

    /// 1 cm by 5 degrees: 9 x 72 placements.
    pub fn full() -> Self {
        Grid {
            eta_step: 1.0,
            beta_step: 5.0,
        }
    }

    pub fn placements(&self) -> Result<Vec<Placement>> {
        if !(self.eta_step > 0.0 && self.beta_step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid steps must be positive, got {} cm x {} deg",
                self.eta_step, self.beta_step
            )));
        }
        let etas: Vec<f64> = (0..)
            .map(|k| -4.0 + k as f64 * self.eta_step)
            .take_while(|e| *e <= 4.0 + 1e-9)
            .collect();
        let betas: Vec<f64> = (0..)
            .map(|k| k as f64 * self.beta_step)
            .take_while(|b| *b < 360.0 - 1e-9)
            .collect();
        let mut out = Vec::with_capacity(etas.len() * betas.len());
        for &b in &betas {
            for &e in &etas {
                out.push(Placement::new(e, b)?);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("empty placement grid".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub duration_s: f64,
    pub rate_hz: f64,
    pub layout: SensorLayout,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            duration_s: 16.0,
            rate_hz: 50.0,
            layout: SensorLayout::default(),
            seed: 0,
        }
    }
}

/// One labelled session per (placement, template, user), placements outermost.
///
/// The trajectory depends on (seed, placement, template) only, so two users
/// at the same placement perform the same motion; noise additionally
/// depends on the user's seed.
pub fn gen_sessions(
    placements: &[Placement],
    templates: &[MotionTemplate],
    users: &[UserProfile],
    spec: &SimSpec,
) -> Result<Vec<Session>> {
    if placements.is_empty() || templates.is_empty() || users.is_empty() {
        return Err(Error::InvalidArgument("nothing to simulate".into()));
    }
    if !(spec.duration_s > 0.0 && spec.rate_hz > 0.0) {
        return Err(Error::InvalidArgument("duration and rate must be positive".into()));
    }
    spec.layout.validate()?;
    for t in templates {
        t.validate()?;
    }
    let models: Vec<SensorModel> = users
        .iter()
        .map(|u| u.validate().map(|_| SensorModel::new(spec.layout, u.clone())))
        .collect::<Result<_>>()?;
    let mut jobs = Vec::with_capacity(placements.len() * templates.len() * users.len());
    for p in placements {
        for t in templates {
            for m in &models {
                jobs.push((*p, t, m));
            }
        }
    }
    par::map(&jobs, |(p, t, m)| simulate_session(*p, t, m, spec))
        .into_iter()
        .collect()
}

fn simulate_session(placement: Placement, template: &MotionTemplate, model: &SensorModel, spec: &SimSpec) -> Result<Session> {
    let key = [
        spec.seed,
        placement.eta().to_bits(),
        placement.beta().to_bits(),
        name_hash(&template.name),
    ];
    let truth = gen_trajectory(template, spec.duration_s, spec.rate_hz, mix(&key));
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[mix(&key), model.profile.seed, 0x4015e]));
    let frames = truth
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let t = i as f64 / spec.rate_hz;
            SensorFrame {
                timestamp_ms: (i as f64 * 1000.0 / spec.rate_hz).round() as u64,
                readings: model.response(theta, placement, t, &mut rng),
            }
        })
        .collect();
    Session::new(placement, frames, Some(truth), model.profile.id.clone(), template.name.clone(), spec.rate_hz)
}

/// Sessions for every placement of `grid`.
pub fn gen_dataset(grid: &Grid, templates: &[MotionTemplate], users: &[UserProfile], spec: &SimSpec) -> Result<Dataset> {
    let placements = grid.placements()?;
    Ok(Dataset::new(gen_sessions(&placements, templates, users, spec)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn local_minima(xs: &[f64]) -> usize {
        xs.windows(3).filter(|w| w[1] < w[0] && w[1] <= w[2]).count()
    }

    #[test]
    fn bend_has_eight_cycles_in_range() {
        let b = MotionTemplate::bend();
        for seed in 0..10 {
            let th = gen_trajectory(&b, 8.0 / b.freq_hz, 50.0, seed);
            assert!(th.iter().all(|v| (40.0..=180.0).contains(v)));
            let minima = local_minima(&th);
            assert!((7..=9).contains(&minima), "seed {seed}: {minima} minima");
        }
    }

    #[test]
    fn zero_jitter_is_periodic() {
        let t = MotionTemplate::new("steady", 60.0, 150.0, 1.0, 0.0).unwrap();
        let th = gen_trajectory(&t, 5.0, 50.0, 3);
        for i in 0..th.len() - 50 {
            assert!((th[i] - th[i + 50]).abs() < 1e-9);
        }
    }

    #[test]
    fn trajectory_is_deterministic_and_c1() {
        let b = MotionTemplate::bend();
        let a = gen_trajectory(&b, 16.0, 50.0, 11);
        assert_eq!(a, gen_trajectory(&b, 16.0, 50.0, 11));
        assert_ne!(a, gen_trajectory(&b, 16.0, 50.0, 12));
        // bounded second difference means no kinks
        let max_d2 = a.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).fold(0.0, f64::max);
        let max_d1 = a.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(max_d2 < 0.2 * max_d1, "d2 {max_d2} d1 {max_d1}");
    }

    fn quiet_profile() -> UserProfile {
        UserProfile {
            noise_scale: 0.0,
            chaos_scale: 0.0,
            ..UserProfile::default()
        }
    }

    #[test]
    fn straight_arm_reads_baseline() {
        let m = SensorModel::new(SensorLayout::default(), quiet_profile());
        let p = Placement::new(2.0, 30.0).unwrap();
        assert_eq!(m.response_clean(180.0, p, 1.0), m.profile.baseline);
    }

    #[test]
    fn olecranon_channel_affine_and_decreasing() {
        let m = SensorModel::new(SensorLayout::default(), quiet_profile());
        let p = Placement::new(0.0, 0.0).unwrap();
        let thetas: Vec<f64> = (0..=140).map(|i| 40.0 + i as f64).collect();
        let ys: Vec<f64> = thetas.iter().map(|&th| m.response_clean(th, p, 0.0)[3]).collect();
        assert!(ys.windows(2).all(|w| w[1] < w[0]));
        // least-squares line fit residual
        let n = thetas.len() as f64;
        let mx = thetas.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = thetas.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = thetas.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let resid = thetas
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - (my + slope * (x - mx))).abs())
            .fold(0.0, f64::max);
        assert!(resid < 1e-9, "residual {resid}");
    }

    #[test]
    fn sixty_degree_rotation_shifts_weights_by_one_channel() {
        let layout = SensorLayout::default();
        for beta in [0.0, 10.0, 45.0, 200.0] {
            let w0 = layout.stretch_weights(beta);
            let w1 = layout.stretch_weights(beta + 60.0);
            for k in 0..CHANNELS {
                assert!((w1[k] - w0[(k + 1) % CHANNELS]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn readings_clipped_to_digitizer_range() {
        let loud = UserProfile {
            gain: [2000.0; CHANNELS],
            noise_scale: 300.0,
            ..UserProfile::default()
        };
        let m = SensorModel::new(SensorLayout::default(), loud);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..500 {
            let r = m.response(40.0 + (i % 140) as f64, Placement::new(0.0, 0.0).unwrap(), i as f64 * 0.02, &mut rng);
            assert!(r.iter().all(|v| (0.0..=RAW_MAX).contains(v)));
        }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(Grid::full().placements().unwrap().len(), 648);
        assert_eq!(Grid::desk().placements().unwrap().len(), 24);
        assert!(Grid { eta_step: 0.0, beta_step: 5.0 }.placements().is_err());
    }

    #[test]
    fn users_share_trajectories() {
        let spec = SimSpec {
            duration_s: 2.0,
            ..SimSpec::default()
        };
        let p = [Placement::new(0.0, 90.0).unwrap()];
        let users = [UserProfile::default(), UserProfile::sampled("P2", 2)];
        let s = gen_sessions(&p, &[MotionTemplate::bend()], &users, &spec).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].truth, s[1].truth);
        assert_ne!(s[0].frames, s[1].frames);
        assert_eq!(s[0].user_id, "P1");
        assert_eq!(s[1].user_id, "P2");
    }
}
