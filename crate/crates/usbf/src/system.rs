//! System model: configuration, channel generation, and dataset files.
//!
//! A base station with `n_antennas` serves single-antenna users placed
//! uniformly on a ring `[d_l, d_r]` meters away. Each user's channel is a
//! circularly-symmetric complex Gaussian vector scaled by a distance-based
//! power gain `rho = 1 / (1 + (d / d_min)^path_loss_exp)`, and the noise
//! variance is fixed by the configuration (1.0 by convention), so the
//! transmit power budget in linear units is `sigma2 * 10^(snr_db / 10)`.
//!
//! Datasets are written as a small plain-text header (format version, sample
//! count, RNG name, and the full configuration as `key = value` lines)
//! followed by a binary payload of little-endian `f64`s: per sample, the K
//! user distances, then K*N*2 channel components (real, imaginary)
//! interleaved row-major by user. Serialization is bit-exact round-trip.

use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::exec::{map_indexed, ExecMode};
use crate::numerics::ComplexVector;
use crate::{Error, Result};

/// Name of the seeded generator recorded in dataset headers. Per-sample
/// substreams use the sample index as the stream id, so generation is
/// reproducible regardless of thread count.
pub const RNG_ALGORITHM: &str = "chacha8";

const DATASET_MAGIC: &str = "usbf-dataset";
const DATASET_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// How the per-user rate is computed from the SINR.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RateMode {
    /// Short-blocklength rate with the dispersion back-off term.
    FiniteBlocklength,
    /// Classical capacity `ln(1 + gamma)`; the back-off is dropped.
    Shannon,
}

impl RateMode {
    fn as_key(self) -> &'static str {
        match self {
            RateMode::FiniteBlocklength => "fbl",
            RateMode::Shannon => "shannon",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "fbl" | "finite-blocklength" => Ok(RateMode::FiniteBlocklength),
            "shannon" => Ok(RateMode::Shannon),
            other => Err(Error::InvalidArgument(format!("unknown rate_mode `{other}`"))),
        }
    }
}

/// Full description of one scheduling scenario.
///
/// `d_min` is both the reference distance of the path-loss law and the inner
/// cell radius; users must satisfy `d_min <= d_l < d_r <= d_max`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SystemConfig {
    /// Base-station antenna count N.
    pub n_antennas: usize,
    /// Candidate user count K.
    pub n_users: usize,
    /// Transmit SNR in dB; the linear power budget is `sigma2 * 10^(snr_db/10)`.
    pub snr_db: f64,
    /// Receiver noise variance (1.0 by convention).
    pub sigma2: f64,
    /// Inner radius of the user ring in meters.
    pub d_l: f64,
    /// Outer radius of the user ring in meters.
    pub d_r: f64,
    /// Path-loss reference distance / minimum cell radius in meters.
    pub d_min: f64,
    /// Maximum cell radius in meters.
    pub d_max: f64,
    /// Path-loss exponent.
    pub path_loss_exp: f64,
    /// Payload size per user in bits.
    pub data_bits: u32,
    /// Channel uses per transmission.
    pub blocklength: u32,
    /// Decoding error probability target.
    pub error_prob: f64,
    /// Relative-change convergence tolerance shared by the iterative solvers.
    pub delta: f64,
    /// Weight of the binary-promoting penalty in the relaxed objective.
    pub lambda: f64,
    /// Rate model.
    pub rate_mode: RateMode,
    /// Seed for dataset generation and any seeded downstream choice.
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_antennas: 32,
            n_users: 30,
            snr_db: 10.0,
            sigma2: 1.0,
            d_l: 60.0,
            d_r: 100.0,
            d_min: 50.0,
            d_max: 200.0,
            path_loss_exp: 3.0,
            data_bits: 256,
            blocklength: 128,
            error_prob: 1e-6,
            delta: 1e-5,
            lambda: 1e-2,
            rate_mode: RateMode::FiniteBlocklength,
            rng_seed: 1,
        }
    }
}

impl SystemConfig {
    /// Linear transmit power budget.
    pub fn power_budget(&self) -> f64 {
        self.sigma2 * 10f64.powf(self.snr_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        fn fail(msg: String) -> Result<()> {
            Err(Error::InvalidArgument(msg))
        }
        if self.n_antennas == 0 || self.n_users == 0 {
            return fail("n_antennas and n_users must be at least 1".into());
        }
        if !(self.sigma2 > 0.0) {
            return fail(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !(self.d_min > 0.0) {
            return fail(format!("d_min must be positive, got {}", self.d_min));
        }
        if !(self.d_min <= self.d_l && self.d_l < self.d_r && self.d_r <= self.d_max) {
            return fail(format!(
                "ring must satisfy d_min <= d_l < d_r <= d_max, got {} <= {} < {} <= {}",
                self.d_min, self.d_l, self.d_r, self.d_max
            ));
        }
        if !(self.path_loss_exp > 0.0) {
            return fail("path_loss_exp must be positive".into());
        }
        if self.data_bits == 0 || self.blocklength == 0 {
            return fail("data_bits and blocklength must be at least 1".into());
        }
        if !(self.error_prob > 0.0 && self.error_prob < 0.5) {
            return fail(format!(
                "error_prob must lie in (0, 0.5), got {}",
                self.error_prob
            ));
        }
        if !(self.delta > 0.0 && self.lambda > 0.0) {
            return fail("delta and lambda must be positive".into());
        }
        Ok(())
    }

    /// Serializes to the flat `key = value` text used by config files and
    /// dataset headers. Key order is fixed, and numbers print in shortest
    /// round-trip form, so re-serializing a parsed config is byte-identical.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.kv_pairs() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    fn kv_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_antennas", self.n_antennas.to_string()),
            ("n_users", self.n_users.to_string()),
            ("snr_db", self.snr_db.to_string()),
            ("sigma2", self.sigma2.to_string()),
            ("d_l", self.d_l.to_string()),
            ("d_r", self.d_r.to_string()),
            ("d_min", self.d_min.to_string()),
            ("d_max", self.d_max.to_string()),
            ("path_loss_exp", self.path_loss_exp.to_string()),
            ("data_bits", self.data_bits.to_string()),
            ("blocklength", self.blocklength.to_string()),
            ("error_prob", self.error_prob.to_string()),
            ("delta", self.delta.to_string()),
            ("lambda", self.lambda.to_string()),
            ("rate_mode", self.rate_mode.as_key().to_string()),
            ("rng_seed", self.rng_seed.to_string()),
        ]
    }

    /// Parses the flat `key = value` format. Missing keys keep their default
    /// value; unknown keys are rejected. Lines starting with `#` and blank
    /// lines are ignored.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = SystemConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "config line {} is not `key = value`: `{raw}`",
                    lineno + 1
                ))
            })?;
            cfg.apply_kv(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::InvalidArgument(format!("cannot parse `{value}` for key `{key}`"))
            })
        }
        match key {
            "n_antennas" => self.n_antennas = num(key, value)?,
            "n_users" => self.n_users = num(key, value)?,
            "snr_db" => self.snr_db = num(key, value)?,
            "sigma2" => self.sigma2 = num(key, value)?,
            "d_l" => self.d_l = num(key, value)?,
            "d_r" => self.d_r = num(key, value)?,
            "d_min" => self.d_min = num(key, value)?,
            "d_max" => self.d_max = num(key, value)?,
            "path_loss_exp" => self.path_loss_exp = num(key, value)?,
            "data_bits" => self.data_bits = num(key, value)?,
            "blocklength" => self.blocklength = num(key, value)?,
            "error_prob" => self.error_prob = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "rate_mode" => self.rate_mode = RateMode::parse(value)?,
            "rng_seed" => self.rng_seed = num(key, value)?,
            other => {
                return Err(Error::InvalidArgument(format!("unknown config key `{other}`")))
            }
        }
        Ok(())
    }
}

/// Distance-based power gain `1 / (1 + (d / d_min)^exp)`.
#[inline]
pub fn path_gain(distance_m: f64, d_min: f64, path_loss_exp: f64) -> f64 {
    1.0 / (1.0 + (distance_m / d_min).powf(path_loss_exp))
}

// ---------------------------------------------------------------------------
// Channel samples
// ---------------------------------------------------------------------------

/// One realization of all K user channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    channels: Vec<ComplexVector>,
    noise_vars: Vec<f64>,
    distances_m: Vec<f64>,
}

impl ChannelSample {
    pub fn new(
        channels: Vec<ComplexVector>,
        noise_vars: Vec<f64>,
        distances_m: Vec<f64>,
    ) -> Result<Self> {
        let k = channels.len();
        if k == 0 {
            return Err(Error::InvalidArgument("a sample needs at least one user".into()));
        }
        if noise_vars.len() != k || distances_m.len() != k {
            return Err(Error::DimensionMismatch {
                context: "channel sample per-user fields",
                expected: k,
                found: noise_vars.len().min(distances_m.len()),
            });
        }
        let n = channels[0].len();
        if channels.iter().any(|h| h.len() != n) {
            return Err(Error::InvalidArgument("all channels must share a length".into()));
        }
        if noise_vars.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("noise variances must be positive".into()));
        }
        Ok(Self { channels, noise_vars, distances_m })
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.channels.len()
    }

    #[inline]
    pub fn n_antennas(&self) -> usize {
        self.channels[0].len()
    }

    #[inline]
    pub fn channel(&self, k: usize) -> &ComplexVector {
        &self.channels[k]
    }

    #[inline]
    pub fn noise_var(&self, k: usize) -> f64 {
        self.noise_vars[k]
    }

    #[inline]
    pub fn distance_m(&self, k: usize) -> f64 {
        self.distances_m[k]
    }

    /// Noise-whitened channel `h_k / sigma_k`.
    pub fn whitened(&self, k: usize) -> ComplexVector {
        self.channels[k].scaled(1.0 / self.noise_vars[k].sqrt())
    }

    /// All whitened channels; solvers compute this once up front.
    pub fn whitened_all(&self) -> Vec<ComplexVector> {
        (0..self.n_users()).map(|k| self.whitened(k)).collect()
    }

    /// Reorders users by `perm` (new index i takes old user `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n_users());
        Self {
            channels: perm.iter().map(|&k| self.channels[k].clone()).collect(),
            noise_vars: perm.iter().map(|&k| self.noise_vars[k]).collect(),
            distances_m: perm.iter().map(|&k| self.distances_m[k]).collect(),
        }
    }
}

/// Seeded generator for sample `index` of a dataset.
fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Draws one sample: distances uniform on the ring, then per-user Gaussian
/// channels with per-entry variance `rho_k` split evenly between the real and
/// imaginary parts.
pub fn generate_sample(cfg: &SystemConfig, rng: &mut impl Rng) -> ChannelSample {
    let (k, n) = (cfg.n_users, cfg.n_antennas);
    let distances: Vec<f64> = (0..k).map(|_| rng.gen_range(cfg.d_l..cfg.d_r)).collect();
    let channels = distances
        .iter()
        .map(|&d| {
            let rho = path_gain(d, cfg.d_min, cfg.path_loss_exp);
            let scale = (rho / 2.0).sqrt();
            ComplexVector::from_vec(
                (0..n)
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(re * scale, im * scale)
                    })
                    .collect(),
            )
        })
        .collect();
    ChannelSample { channels, noise_vars: vec![cfg.sigma2; k], distances_m: distances }
}

/// Generates `count` samples on independent seeded substreams.
pub fn generate_dataset(cfg: &SystemConfig, count: usize) -> Vec<ChannelSample> {
    generate_dataset_with(cfg, count, ExecMode::default())
}

pub fn generate_dataset_with(
    cfg: &SystemConfig,
    count: usize,
    mode: ExecMode,
) -> Vec<ChannelSample> {
    map_indexed(mode, count, |i| {
        let mut rng = sample_rng(cfg.rng_seed, i as u64);
        generate_sample(cfg, &mut rng)
    })
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

/// Writes a dataset. Noise variances are not part of the payload (they are
/// fixed by the configuration), so samples with other values are rejected
/// rather than silently altered on round-trip.
pub fn write_dataset(
    path: impl AsRef<Path>,
    cfg: &SystemConfig,
    samples: &[ChannelSample],
) -> Result<()> {
    cfg.validate()?;
    for (i, s) in samples.iter().enumerate() {
        if s.n_users() != cfg.n_users || s.n_antennas() != cfg.n_antennas {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has shape ({}, {}), config says ({}, {})",
                s.n_users(),
                s.n_antennas(),
                cfg.n_users,
                cfg.n_antennas
            )));
        }
        if s.noise_vars.iter().any(|&v| v != cfg.sigma2) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has a noise variance differing from config sigma2"
            )));
        }
    }

    let mut header = String::new();
    header.push_str(&format!("{DATASET_MAGIC} {DATASET_VERSION}\n"));
    header.push_str(&format!("samples = {}\n", samples.len()));
    header.push_str(&format!("rng = {RNG_ALGORITHM}\n"));
    header.push_str(&cfg.to_kv_text());
    header.push_str("end\n");

    let mut payload =
        Vec::with_capacity(samples.len() * cfg.n_users * (1 + 2 * cfg.n_antennas) * 8);
    for s in samples {
        for &d in &s.distances_m {
            payload.extend_from_slice(&d.to_le_bytes());
        }
        for h in &s.channels {
            for z in h.iter() {
                payload.extend_from_slice(&z.re.to_le_bytes());
                payload.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(&payload)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], bit-exactly.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<(SystemConfig, Vec<ChannelSample>)> {
    let bytes = std::fs::read(path)?;

    // The header is ASCII lines up to and including `end`.
    let mut offset = 0usize;
    let mut lines: Vec<String> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| {
            Error::Format("dataset header is missing its `end` marker".into())
        })?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Format("dataset header is not valid UTF-8".into()))?
            .to_string();
        offset += nl + 1;
        if line.trim() == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.len() < 2 {
        return Err(Error::Format("dataset header is too short".into()));
    }

    let magic = &lines[0];
    let mut parts = magic.split_whitespace();
    if parts.next() != Some(DATASET_MAGIC) {
        return Err(Error::Format(format!("not a dataset file: `{magic}`")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format("dataset header has no version".into()))?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }

    let mut sample_count: Option<usize> = None;
    let mut rng_name: Option<String> = None;
    let mut cfg_text = String::new();
    for line in &lines[1..] {
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("malformed dataset header line `{line}`"))
        })?;
        match key.trim() {
            "samples" => {
                sample_count = Some(value.trim().parse().map_err(|_| {
                    Error::Format(format!("bad sample count `{}`", value.trim()))
                })?)
            }
            "rng" => rng_name = Some(value.trim().to_string()),
            _ => {
                cfg_text.push_str(line);
                cfg_text.push('\n');
            }
        }
    }
    let count =
        sample_count.ok_or_else(|| Error::Format("dataset header lacks `samples`".into()))?;
    if rng_name.as_deref() != Some(RNG_ALGORITHM) {
        return Err(Error::Format(format!(
            "dataset was generated with rng `{}`, expected `{RNG_ALGORITHM}`",
            rng_name.unwrap_or_default()
        )));
    }
    let cfg = SystemConfig::from_kv_text(&cfg_text)?;

    let (k, n) = (cfg.n_users, cfg.n_antennas);
    let floats_per_sample = k + k * n * 2;
    let expected = count * floats_per_sample * 8;
    let payload = &bytes[offset..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "dataset payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }

    let mut cursor = payload;
    let mut next = || -> f64 {
        let (head, tail) = cursor.split_at(8);
        cursor = tail;
        f64::from_le_bytes(head.try_into().unwrap())
    };
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let distances: Vec<f64> = (0..k).map(|_| next()).collect();
        let channels: Vec<ComplexVector> = (0..k)
            .map(|_| {
                ComplexVector::from_vec(
                    (0..n)
                        .map(|_| {
                            let re = next();
                            let im = next();
                            Complex64::new(re, im)
                        })
                        .collect(),
                )
            })
            .collect();
        samples.push(ChannelSample {
            channels,
            noise_vars: vec![cfg.sigma2; k],
            distances_m: distances,
        });
    }
    Ok((cfg, samples))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_cfg() -> SystemConfig {
        SystemConfig {
            n_antennas: 8,
            n_users: 10,
            d_l: 50.0,
            d_r: 100.0,
            rng_seed: 42,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn path_gain_spot_values() {
        // At the reference distance the gain is exactly one half; at twice the
        // reference distance with a cubic law it is 1/9.
        assert_eq!(path_gain(50.0, 50.0, 3.0), 0.5);
        assert!((path_gain(100.0, 50.0, 3.0) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn distances_stay_on_the_ring() {
        let cfg = desk_cfg();
        for s in generate_dataset(&cfg, 50) {
            for k in 0..s.n_users() {
                let d = s.distance_m(k);
                assert!(d >= cfg.d_l && d <= cfg.d_r);
            }
        }
    }

    #[test]
    fn channel_energy_matches_path_gain() {
        // ||h_k||^2 / rho_k averages to the antenna count.
        let cfg = desk_cfg();
        let samples = generate_dataset(&cfg, 2000);
        let mut sum = 0.0;
        let mut count = 0usize;
        for s in &samples {
            for k in 0..s.n_users() {
                let rho = path_gain(s.distance_m(k), cfg.d_min, cfg.path_loss_exp);
                sum += s.channel(k).norm_sq() / rho;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!(
            (mean - cfg.n_antennas as f64).abs() < 0.1,
            "mean normalized energy {mean}"
        );
    }

    #[test]
    fn farther_rings_are_weaker_on_average() {
        let near = SystemConfig { d_l: 50.0, d_r: 100.0, ..desk_cfg() };
        let far = SystemConfig { d_l: 100.0, d_r: 200.0, ..desk_cfg() };
        let mean_gain = |cfg: &SystemConfig| {
            let samples = generate_dataset(cfg, 1000);
            let mut sum = 0.0;
            let mut n = 0usize;
            for s in &samples {
                for k in 0..s.n_users() {
                    sum += path_gain(s.distance_m(k), cfg.d_min, cfg.path_loss_exp);
                    n += 1;
                }
            }
            sum / n as f64
        };
        assert!(mean_gain(&near) > mean_gain(&far));
    }

    #[test]
    fn generation_is_deterministic_and_streamed_per_sample() {
        let cfg = desk_cfg();
        let a = generate_dataset(&cfg, 20);
        let b = generate_dataset_with(&cfg, 20, ExecMode::Sequential);
        assert_eq!(a, b);
        // Sample 7 alone reproduces from its substream.
        let mut rng = sample_rng(cfg.rng_seed, 7);
        assert_eq!(generate_sample(&cfg, &mut rng), a[7]);
    }

    #[test]
    fn whitening_divides_by_noise_std() {
        let mut cfg = desk_cfg();
        cfg.sigma2 = 4.0;
        let s = &generate_dataset(&cfg, 1)[0];
        let hbar = s.whitened(0);
        for (a, b) in hbar.iter().zip(s.channel(0).iter()) {
            assert!((a * 2.0 - b).norm() < 1e-15);
        }
    }

    #[test]
    fn config_text_round_trips_byte_identically() {
        let cfg = desk_cfg();
        let text = cfg.to_kv_text();
        let parsed = SystemConfig::from_kv_text(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.to_kv_text(), text);
    }

    #[test]
    fn config_parser_rejects_unknown_keys_and_bad_values() {
        assert!(SystemConfig::from_kv_text("bogus = 3\n").is_err());
        assert!(SystemConfig::from_kv_text("n_users = banana\n").is_err());
        assert!(SystemConfig::from_kv_text("error_prob = 0.7\n").is_err());
        assert!(SystemConfig::from_kv_text("d_l = 10\n").is_err()); // below d_min
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let cfg = desk_cfg();
        let samples = generate_dataset(&cfg, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.usbf");

        write_dataset(&path, &cfg, &samples).unwrap();
        let first = std::fs::read(&path).unwrap();
        let (cfg2, samples2) = read_dataset(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(samples2, samples);

        write_dataset(&path, &cfg2, &samples2).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let cfg = desk_cfg();
        let samples = generate_dataset(&cfg, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.usbf");
        write_dataset(&path, &cfg, &samples).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_samples_are_rejected_on_write() {
        let cfg = desk_cfg();
        let other = SystemConfig { n_users: 4, ..desk_cfg() };
        let samples = generate_dataset(&other, 2);
        let dir = tempfile::tempdir().unwrap();
        assert!(write_dataset(dir.path().join("x"), &cfg, &samples).is_err());
    }
}
