//! Per-subcarrier received-signal synthesis at the base station.
//!
//! Every cell contributes a user->cell and cell->BS link with exact
//! spherical-wave distances, so the cascade is valid in both the near and
//! the far field. The received sample at subcarrier k is
//!
//! ```text
//! y_k = s_k + v_k + n_k
//! ```
//!
//! with `s_k = A_k sqrt(P_k kappa / (1 + kappa)) x_k` the specular
//! component through the metaprism, `v_k` the diffuse Ricean component and
//! `n_k` thermal noise of variance `N0 * delta_f`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::Position3D;
use crate::hashing::{CanonicalHasher, ContentHash};
use crate::metaprism::Metaprism;
use crate::{Error, Result, BOLTZMANN, SPEED_OF_LIGHT, T0_KELVIN};

/// Which total power enters the diffuse-component variance.
///
/// `PerSubcarrier` keeps `E|s_k + v_k|^2 = |A_k|^2 P_k` for every Rice
/// factor; `Total` uses the full transmit power in place of the
/// per-subcarrier share, making the diffuse term K times stronger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffusePowerConvention {
    #[default]
    PerSubcarrier,
    Total,
}

/// Static system parameters of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Carrier frequency f0, Hz.
    pub carrier_hz: f64,
    /// Occupied bandwidth W, Hz.
    pub bandwidth_hz: f64,
    /// Number of OFDM subcarriers K.
    pub n_subcarriers: usize,
    /// Total transmit power, W.
    pub total_power_w: f64,
    /// User antenna gain, linear.
    pub gain_user: f64,
    /// Base-station antenna gain, linear.
    pub gain_bs: f64,
    /// Receiver noise figure, linear. Zero disables thermal noise.
    pub noise_figure: f64,
    /// Rice factor kappa >= 0; `f64::INFINITY` means no fading.
    pub rice_factor: f64,
    pub diffuse_convention: DiffusePowerConvention,
    /// Pilot symbol, fixed to one.
    pub pilot: Complex64,
}

impl Default for SystemConfig {
    /// Parameters of a 28 GHz mmWave uplink with 5G-NR-like numerology:
    /// 198 MHz over 3300 subcarriers (60 kHz spacing), 20 dBm transmit
    /// power, 6 dB antenna gains, 3 dB noise figure, no fading.
    fn default() -> Self {
        Self {
            carrier_hz: 28.0e9,
            bandwidth_hz: 198.0e6,
            n_subcarriers: 3300,
            total_power_w: dbm_to_watts(20.0),
            gain_user: db_to_linear(6.0),
            gain_bs: db_to_linear(6.0),
            noise_figure: db_to_linear(3.0),
            rice_factor: f64::INFINITY,
            diffuse_convention: DiffusePowerConvention::PerSubcarrier,
            pilot: Complex64::new(1.0, 0.0),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("total_power_w", self.total_power_w),
            ("gain_user", self.gain_user),
            ("gain_bs", self.gain_bs),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_subcarriers == 0 {
            return Err(Error::Config("n_subcarriers must be at least 1".into()));
        }
        if !(self.noise_figure >= 0.0) {
            return Err(Error::Config(format!(
                "noise_figure must be non-negative, got {}",
                self.noise_figure
            )));
        }
        if self.rice_factor.is_nan() || self.rice_factor < 0.0 {
            return Err(Error::Config(format!(
                "rice_factor must be >= 0 (or infinite), got {}",
                self.rice_factor
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Subcarrier spacing delta_f = W / K.
    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.n_subcarriers as f64
    }

    /// Per-subcarrier transmit power P_k = Ptx / K.
    pub fn per_subcarrier_power(&self) -> f64 {
        self.total_power_w / self.n_subcarriers as f64
    }

    /// One-sided noise power spectral density N0 = k_B T0 F, W/Hz.
    pub fn noise_psd(&self) -> f64 {
        BOLTZMANN * T0_KELVIN * self.noise_figure
    }

    /// Frequency of subcarrier k (1-based): `f0 + (k - K/2) delta_f`,
    /// so the highest subcarrier sits at `f0 + W/2`.
    pub fn subcarrier_frequency(&self, k: usize) -> Result<f64> {
        if k < 1 || k > self.n_subcarriers {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.n_subcarriers + 1,
            });
        }
        Ok(self.carrier_hz
            + (k as f64 - self.n_subcarriers as f64 / 2.0) * self.subcarrier_spacing())
    }

    /// All K subcarrier frequencies in index order.
    pub fn subcarrier_frequencies(&self) -> Vec<f64> {
        (1..=self.n_subcarriers)
            .map(|k| self.subcarrier_frequency(k).expect("k in range"))
            .collect()
    }

    /// Fraction kappa / (1 + kappa) of the power in the specular path.
    pub fn specular_power_fraction(&self) -> f64 {
        if self.rice_factor.is_infinite() {
            1.0
        } else {
            self.rice_factor / (1.0 + self.rice_factor)
        }
    }

    /// Fraction 1 / (1 + kappa) of the power in the diffuse component.
    pub fn diffuse_power_fraction(&self) -> f64 {
        if self.rice_factor.is_infinite() {
            0.0
        } else {
            1.0 / (1.0 + self.rice_factor)
        }
    }

    /// Hash over every field that shapes the noiseless specular profile
    /// for a given BS position. Rice factor, noise figure, and the diffuse
    /// convention are deliberately excluded: one fingerprint database
    /// serves all of them.
    pub fn fingerprint_context_hash(&self, p_bs: &Position3D) -> ContentHash {
        let mut h = CanonicalHasher::new("fingerprint-context");
        h.f64(self.carrier_hz)
            .f64(self.bandwidth_hz)
            .u64(self.n_subcarriers as u64)
            .f64(self.total_power_w)
            .f64(self.gain_user)
            .f64(self.gain_bs)
            .f64(self.pilot.re)
            .f64(self.pilot.im)
            .f64(p_bs.x)
            .f64(p_bs.y)
            .f64(p_bs.z);
        h.finish()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10.0_f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10.0_f64.powf((dbm - 30.0) / 10.0)
}

/// Thermal-noise variance per subcarrier, `sigma^2 = N0 delta_f`, W.
pub fn noise_variance(config: &SystemConfig) -> f64 {
    config.noise_psd() * config.subcarrier_spacing()
}

/// Complex channel gain of one spherical-wave leg:
/// `sqrt(G) lambda / (4 pi d) * exp(-j 2 pi f_k d / c)`.
pub fn link_gain(
    p_a: &Position3D,
    p_cell: &Position3D,
    f_k: f64,
    gain: f64,
    wavelength: f64,
) -> Result<Complex64> {
    let dist = p_a.distance_to(p_cell);
    if dist == 0.0 || !dist.is_finite() {
        return Err(Error::DegenerateInput(
            "link endpoints coincide or are non-finite".into(),
        ));
    }
    let amp = gain.sqrt() * wavelength / (4.0 * PI * dist);
    let phase = -2.0 * PI * f_k * dist / SPEED_OF_LIGHT;
    Ok(Complex64::from_polar(amp, phase))
}

/// Per-subcarrier cascade gain through the metaprism,
/// `A_k = sum_nm h_nm^(k) r_nm^(k) g_nm^(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeGain {
    /// Gains indexed by subcarrier - 1.
    pub gains: Vec<Complex64>,
}

impl CascadeGain {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

fn check_endpoints(p_u: &Position3D, p_bs: &Position3D) -> Result<()> {
    for (name, p) in [("user", p_u), ("BS", p_bs)] {
        if !p.is_finite() {
            return Err(Error::DegenerateInput(format!(
                "{name} position has non-finite components"
            )));
        }
        if !p.is_in_front() {
            return Err(Error::Domain(format!(
                "{name} position must lie in front of the metasurface (z > 0), got z = {}",
                p.z
            )));
        }
    }
    Ok(())
}

/// Number of recurrence steps between trigonometric refreshes of the
/// per-cell phasor; bounds the accumulated rounding drift.
const PHASOR_RESYNC: usize = 256;

/// Cascade gain over all subcarriers.
///
/// Per cell, the phase at subcarrier k is linear in the frequency offset,
/// so the K values are generated with a complex-phasor recurrence instead
/// of K trigonometric evaluations; the phasor is refreshed periodically to
/// keep rounding drift below 1e-12.
pub fn cascade_gain(
    m: &Metaprism,
    p_u: &Position3D,
    p_bs: &Position3D,
    config: &SystemConfig,
) -> Result<CascadeGain> {
    config.validate()?;
    check_endpoints(p_u, p_bs)?;
    let k_count = config.n_subcarriers;
    let lambda = config.wavelength();
    let spacing = config.subcarrier_spacing();
    let delta_first = (1.0 - k_count as f64 / 2.0) * spacing;
    let amp_const = (config.gain_user * config.gain_bs).sqrt() * lambda * lambda
        / (4.0 * PI).powi(2);
    let mut gains = vec![Complex64::new(0.0, 0.0); k_count];
    let alphas = m.alphas();
    for n in 0..m.n_cells_x() {
        for mm in 0..m.n_cells_y() {
            let cell = m.cell_position(n, mm);
            let du = p_u.distance_to(&cell);
            let dbs = p_bs.distance_to(&cell);
            if du == 0.0 || dbs == 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "endpoint coincides with cell ({n}, {mm})"
                )));
            }
            let amp = amp_const / (du * dbs);
            let total = du + dbs;
            let alpha = alphas[n * m.n_cells_y() + mm];
            // phase(k) = phi0 + delta_k * beta, delta_k = f_k - f0
            let phi0 = -2.0 * PI * config.carrier_hz * total / SPEED_OF_LIGHT;
            let beta = alpha - 2.0 * PI * total / SPEED_OF_LIGHT;
            let step = Complex64::from_polar(1.0, spacing * beta);
            let mut w = Complex64::from_polar(amp, phi0 + delta_first * beta);
            for (j, a) in gains.iter_mut().enumerate() {
                *a += w;
                if (j + 1) % PHASOR_RESYNC == 0 {
                    let delta = delta_first + (j + 1) as f64 * spacing;
                    w = Complex64::from_polar(amp, phi0 + delta * beta);
                } else {
                    w *= step;
                }
            }
        }
    }
    Ok(CascadeGain { gains })
}

/// Direct evaluation of the cascade through [`link_gain`] and the cell
/// reflection coefficients; the oracle for [`cascade_gain`].
pub fn cascade_gain_brute(
    m: &Metaprism,
    p_u: &Position3D,
    p_bs: &Position3D,
    config: &SystemConfig,
) -> Result<CascadeGain> {
    config.validate()?;
    check_endpoints(p_u, p_bs)?;
    let lambda = config.wavelength();
    let mut gains = vec![Complex64::new(0.0, 0.0); config.n_subcarriers];
    for (idx, a) in gains.iter_mut().enumerate() {
        let f_k = config.subcarrier_frequency(idx + 1)?;
        let mut sum = Complex64::new(0.0, 0.0);
        for n in 0..m.n_cells_x() {
            for mm in 0..m.n_cells_y() {
                let cell = m.cell_position(n, mm);
                let h = link_gain(p_u, &cell, f_k, config.gain_user, lambda)?;
                let r = m.reflection_coefficient(n, mm, f_k, config.carrier_hz)?;
                let g = link_gain(p_bs, &cell, f_k, config.gain_bs, lambda)?;
                sum += h * r * g;
            }
        }
        *a = sum;
    }
    Ok(CascadeGain { gains })
}

/// Specular components `s_k = A_k sqrt(P_k kappa / (1+kappa)) x_k`.
pub fn specular_component(cascade: &CascadeGain, config: &SystemConfig) -> Vec<Complex64> {
    let scale = (config.per_subcarrier_power() * config.specular_power_fraction()).sqrt();
    cascade
        .gains
        .iter()
        .map(|a| a * scale * config.pilot)
        .collect()
}

/// Provenance of a received profile, checked against a fingerprint
/// database before matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProfileContext {
    pub metaprism_hash: ContentHash,
    pub fingerprint_hash: ContentHash,
}

/// Received per-subcarrier samples with their specular/diffuse/noise
/// decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedProfile {
    pub y: Vec<Complex64>,
    pub s: Vec<Complex64>,
    pub v: Vec<Complex64>,
    pub n: Vec<Complex64>,
    /// Thermal-noise variance sigma^2 = N0 delta_f, W.
    pub sigma2: f64,
    /// Per-subcarrier diffuse variance, W.
    pub sigma2_v: Vec<f64>,
    pub context: ProfileContext,
}

/// Draws the diffuse and noise components around the specular profile of a
/// precomputed cascade. Reproducible for a given seed.
pub fn received_from_cascade(
    cascade: &CascadeGain,
    config: &SystemConfig,
    context: ProfileContext,
    seed: u64,
) -> ReceivedProfile {
    let k_count = cascade.len();
    let s = specular_component(cascade, config);
    let sigma2 = noise_variance(config);
    let diffuse_ref_power = match config.diffuse_convention {
        DiffusePowerConvention::PerSubcarrier => config.per_subcarrier_power(),
        DiffusePowerConvention::Total => config.total_power_w,
    };
    let diffuse_fraction = config.diffuse_power_fraction();
    let sigma2_v: Vec<f64> = cascade
        .gains
        .iter()
        .map(|a| a.norm_sqr() * diffuse_ref_power * diffuse_fraction)
        .collect();

    let mut rng = seeded_rng("received-profile", seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = vec![Complex64::new(0.0, 0.0); k_count];
    let mut n = vec![Complex64::new(0.0, 0.0); k_count];
    let noise_sd = (sigma2 / 2.0).sqrt();
    for k in 0..k_count {
        // Draw order per subcarrier: diffuse (re, im) then noise (re, im).
        if diffuse_fraction > 0.0 {
            let sd = (sigma2_v[k] / 2.0).sqrt();
            v[k] = Complex64::new(sd * unit.sample(&mut rng), sd * unit.sample(&mut rng));
        }
        if sigma2 > 0.0 {
            n[k] = Complex64::new(
                noise_sd * unit.sample(&mut rng),
                noise_sd * unit.sample(&mut rng),
            );
        }
    }
    let y = (0..k_count).map(|k| s[k] + v[k] + n[k]).collect();
    ReceivedProfile {
        y,
        s,
        v,
        n,
        sigma2,
        sigma2_v,
        context,
    }
}

/// End-to-end synthesis: cascade through the metaprism, Ricean split,
/// thermal noise. Identical seeds give bitwise-identical profiles.
pub fn synthesize_received(
    m: &Metaprism,
    p_u: &Position3D,
    p_bs: &Position3D,
    config: &SystemConfig,
    seed: u64,
) -> Result<ReceivedProfile> {
    let cascade = cascade_gain(m, p_u, p_bs, config)?;
    let context = ProfileContext {
        metaprism_hash: m.content_hash(),
        fingerprint_hash: config.fingerprint_context_hash(p_bs),
    };
    Ok(received_from_cascade(&cascade, config, context, seed))
}

/// Derives a ChaCha stream from a domain label and a u64 seed.
pub fn seeded_rng(domain: &str, seed: u64) -> ChaCha8Rng {
    let mut h = CanonicalHasher::new(domain);
    h.u64(seed);
    ChaCha8Rng::from_seed(h.finish().0)
}

impl ReceivedProfile {
    /// Writes the profile as a text table with provenance headers.
    pub fn write_table<W: Write>(&self, config: &SystemConfig, w: &mut W) -> Result<()> {
        writeln!(w, "# received profile")?;
        writeln!(w, "# metaprism: {}", self.context.metaprism_hash)?;
        writeln!(w, "# context: {}", self.context.fingerprint_hash)?;
        writeln!(w, "# sigma2_w: {}", self.sigma2)?;
        writeln!(w, "# columns: k f_k_hz re_y im_y re_s im_s")?;
        for (idx, y) in self.y.iter().enumerate() {
            let f_k = config.subcarrier_frequency(idx + 1)?;
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                idx + 1,
                f_k,
                y.re,
                y.im,
                self.s[idx].re,
                self.s[idx].im
            )?;
        }
        Ok(())
    }

    /// Reads a profile table written by [`Self::write_table`]. Only the
    /// received samples and the provenance hashes are recovered; the
    /// decomposition fields of the result are zeroed.
    pub fn read_table<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut metaprism_hash = None;
        let mut fingerprint_hash = None;
        let mut sigma2 = 0.0;
        let mut y = Vec::new();
        let mut s = Vec::new();
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(h) = rest.strip_prefix("metaprism:") {
                    metaprism_hash = ContentHash::from_hex(h.trim());
                } else if let Some(h) = rest.strip_prefix("context:") {
                    fingerprint_hash = ContentHash::from_hex(h.trim());
                } else if let Some(v) = rest.strip_prefix("sigma2_w:") {
                    sigma2 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Format("bad sigma2_w header".into()))?;
                }
                continue;
            }
            let cols: Vec<&str> = t.split_whitespace().collect();
            if cols.len() < 4 {
                return Err(Error::Format(format!(
                    "profile row needs at least 4 columns, got {}",
                    cols.len()
                )));
            }
            let re: f64 = cols[2]
                .parse()
                .map_err(|_| Error::Format("bad re_y value".into()))?;
            let im: f64 = cols[3]
                .parse()
                .map_err(|_| Error::Format("bad im_y value".into()))?;
            y.push(Complex64::new(re, im));
            if cols.len() >= 6 {
                let sre: f64 = cols[4]
                    .parse()
                    .map_err(|_| Error::Format("bad re_s value".into()))?;
                let sim: f64 = cols[5]
                    .parse()
                    .map_err(|_| Error::Format("bad im_s value".into()))?;
                s.push(Complex64::new(sre, sim));
            }
        }
        if y.is_empty() {
            return Err(Error::Format("profile table has no samples".into()));
        }
        let (metaprism_hash, fingerprint_hash) = match (metaprism_hash, fingerprint_hash) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Format(
                    "profile table is missing provenance headers".into(),
                ))
            }
        };
        if s.len() != y.len() {
            s = vec![Complex64::new(0.0, 0.0); y.len()];
        }
        let k = y.len();
        Ok(Self {
            y,
            s,
            v: vec![Complex64::new(0.0, 0.0); k],
            n: vec![Complex64::new(0.0, 0.0); k],
            sigma2,
            sigma2_v: vec![0.0; k],
            context: ProfileContext {
                metaprism_hash,
                fingerprint_hash,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnglePair;

    fn small_config(k: usize) -> SystemConfig {
        SystemConfig {
            n_subcarriers: k,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn center_subcarrier_is_the_carrier() {
        let c = small_config(3300);
        assert_eq!(c.subcarrier_frequency(1650).unwrap(), c.carrier_hz);
        assert_eq!(
            c.subcarrier_frequency(3300).unwrap(),
            c.carrier_hz + c.bandwidth_hz / 2.0
        );
        assert!((c.subcarrier_spacing() - 60.0e3).abs() < 1e-9);
    }

    #[test]
    fn subcarrier_index_bounds() {
        let c = small_config(16);
        assert!(c.subcarrier_frequency(0).is_err());
        assert!(c.subcarrier_frequency(17).is_err());
        assert!(c.subcarrier_frequency(16).is_ok());
    }

    #[test]
    fn link_gain_reference_magnitude() {
        // 10 m at 6 dB gain and 28 GHz: sqrt(G) lambda / (4 pi d)
        let c = SystemConfig::default();
        let a = Position3D::new(0.0, 0.0, 10.0);
        let cell = Position3D::new(0.0, 0.0, 0.0);
        let h = link_gain(&a, &cell, c.carrier_hz, c.gain_user, c.wavelength()).unwrap();
        assert!((h.norm() - 1.699e-4).abs() < 2e-7, "|h| = {:e}", h.norm());
    }

    #[test]
    fn link_gain_amplitude_halves_with_distance() {
        let c = SystemConfig::default();
        let cell = Position3D::new(0.0, 0.0, 0.0);
        let h1 = link_gain(
            &Position3D::new(0.0, 0.0, 7.0),
            &cell,
            c.carrier_hz,
            1.0,
            c.wavelength(),
        )
        .unwrap();
        let h2 = link_gain(
            &Position3D::new(0.0, 0.0, 14.0),
            &cell,
            c.carrier_hz,
            1.0,
            c.wavelength(),
        )
        .unwrap();
        assert!((h1.norm() / h2.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn link_gain_phase_at_one_wavelength() {
        let c = SystemConfig::default();
        let cell = Position3D::new(0.0, 0.0, 0.0);
        let p = Position3D::new(0.0, 0.0, c.wavelength());
        let h = link_gain(&p, &cell, c.carrier_hz, 1.0, c.wavelength()).unwrap();
        // Exactly one wavelength at the carrier: phase = -2 pi = 0 (mod 2 pi).
        assert!(h.arg().abs() < 1e-9, "arg = {}", h.arg());
    }

    #[test]
    fn link_gain_rejects_coincident_points() {
        let p = Position3D::new(1.0, 2.0, 3.0);
        assert!(matches!(
            link_gain(&p, &p, 28.0e9, 1.0, 0.01),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn single_cell_cascade_is_link_product() {
        let mut c = small_config(8);
        c.rice_factor = f64::INFINITY;
        let m = Metaprism::build_grid(1, 1, c.wavelength()).unwrap();
        let p_u = Position3D::new(1.0, -2.0, 5.0);
        let p_bs = Position3D::new(8.0, 0.0, 8.0);
        let a = cascade_gain(&m, &p_u, &p_bs, &c).unwrap();
        let cell = m.cell_position(0, 0);
        for k in 1..=8 {
            let f_k = c.subcarrier_frequency(k).unwrap();
            let h = link_gain(&p_u, &cell, f_k, c.gain_user, c.wavelength()).unwrap();
            let g = link_gain(&p_bs, &cell, f_k, c.gain_bs, c.wavelength()).unwrap();
            let expect = h * g;
            assert!(
                (a.gains[k - 1] - expect).norm() < 1e-12 * expect.norm(),
                "k = {k}"
            );
        }
    }

    #[test]
    fn optimized_cascade_matches_brute_force() {
        let c = small_config(64);
        let m = Metaprism::build_grid(20, 20, c.wavelength())
            .unwrap()
            .design_random(1e-6, 17)
            .unwrap();
        let mut rng = seeded_rng("test-geometries", 5);
        let unit = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..10 {
            let p_u = Position3D::new(
                4.0 * unit.sample(&mut rng),
                4.0 * unit.sample(&mut rng),
                3.0 + unit.sample(&mut rng).abs(),
            );
            let p_bs = Position3D::new(
                4.0 * unit.sample(&mut rng),
                4.0 * unit.sample(&mut rng),
                6.0 + unit.sample(&mut rng).abs(),
            );
            let fast = cascade_gain(&m, &p_u, &p_bs, &c).unwrap();
            let brute = cascade_gain_brute(&m, &p_u, &p_bs, &c).unwrap();
            for k in 0..64 {
                let scale = brute.gains[k].norm().max(1e-30);
                assert!(
                    (fast.gains[k] - brute.gains[k]).norm() < 1e-10 * scale,
                    "k = {k}: {} vs {}",
                    fast.gains[k],
                    brute.gains[k]
                );
            }
        }
    }

    #[test]
    fn cascade_is_reciprocal() {
        let mut c = small_config(16);
        c.gain_user = db_to_linear(6.0);
        c.gain_bs = db_to_linear(6.0);
        let m = Metaprism::build_grid(6, 6, c.wavelength())
            .unwrap()
            .design_random(1e-6, 2)
            .unwrap();
        let p_u = Position3D::new(-3.0, 1.0, 4.0);
        let p_bs = Position3D::new(8.0, 0.0, 8.0);
        let fwd = cascade_gain(&m, &p_u, &p_bs, &c).unwrap();
        let rev = cascade_gain(&m, &p_bs, &p_u, &c).unwrap();
        for k in 0..16 {
            assert!((fwd.gains[k] - rev.gains[k]).norm() < 1e-14 * fwd.gains[k].norm());
        }
    }

    #[test]
    fn cascade_rejects_behind_surface() {
        let c = small_config(4);
        let m = Metaprism::build_grid(2, 2, c.wavelength()).unwrap();
        let front = Position3D::new(0.0, 0.0, 5.0);
        let behind = Position3D::new(0.0, 0.0, -5.0);
        assert!(cascade_gain(&m, &behind, &front, &c).is_err());
        assert!(cascade_gain(&m, &front, &behind, &c).is_err());
    }

    #[test]
    fn specular_scaling_across_rice_factors() {
        let mut c = small_config(4);
        let a = CascadeGain {
            gains: vec![Complex64::new(2.0e-6, -1.0e-6); 4],
        };
        let pk = c.per_subcarrier_power();

        c.rice_factor = f64::INFINITY;
        let s_inf = specular_component(&a, &c);
        assert!((s_inf[0].norm() - a.gains[0].norm() * pk.sqrt()).abs() < 1e-18);

        c.rice_factor = 0.0;
        let s0 = specular_component(&a, &c);
        assert!(s0.iter().all(|s| s.norm() == 0.0));

        c.rice_factor = 1.0;
        let s1 = specular_component(&a, &c);
        assert!((s1[0].norm() - a.gains[0].norm() * (pk / 2.0).sqrt()).abs() < 1e-18);
    }

    #[test]
    fn noise_variance_reference_values() {
        let c = SystemConfig::default();
        // 3 dB noise figure, 60 kHz spacing
        let s2 = noise_variance(&c);
        assert!((s2 - 4.793e-16).abs() < 5e-19, "sigma2 = {s2:e}");

        let mut floor = c.clone();
        floor.noise_figure = 1.0;
        floor.bandwidth_hz = 1.0;
        floor.n_subcarriers = 1;
        let s2f = noise_variance(&floor);
        assert!((s2f - BOLTZMANN * T0_KELVIN).abs() < 1e-27);

        let mut doubled = c.clone();
        doubled.bandwidth_hz *= 2.0;
        assert!((noise_variance(&doubled) - 2.0 * s2).abs() < 1e-12 * s2);
    }

    #[test]
    fn noiseless_specular_limit() {
        let mut c = small_config(8);
        c.rice_factor = f64::INFINITY;
        c.noise_figure = 0.0;
        let m = Metaprism::build_grid(3, 3, c.wavelength()).unwrap();
        let p_u = Position3D::new(0.5, 0.0, 4.0);
        let p_bs = Position3D::new(8.0, 0.0, 8.0);
        let a = cascade_gain(&m, &p_u, &p_bs, &c).unwrap();
        let prof = synthesize_received(&m, &p_u, &p_bs, &c, 9).unwrap();
        let scale = c.per_subcarrier_power().sqrt();
        for k in 0..8 {
            assert_eq!(prof.v[k], Complex64::new(0.0, 0.0));
            assert_eq!(prof.n[k], Complex64::new(0.0, 0.0));
            assert_eq!(prof.y[k], prof.s[k]);
            assert!((prof.y[k] - a.gains[k] * scale).norm() < 1e-24);
        }
    }

    #[test]
    fn profiles_are_seed_deterministic() {
        let mut c = small_config(32);
        c.rice_factor = 4.0;
        let m = Metaprism::build_grid(4, 4, c.wavelength())
            .unwrap()
            .design_random(1e-6, 1)
            .unwrap();
        let p_u = Position3D::new(-1.0, 0.0, 6.0);
        let p_bs = Position3D::new(8.0, 0.0, 8.0);
        let a = synthesize_received(&m, &p_u, &p_bs, &c, 1234).unwrap();
        let b = synthesize_received(&m, &p_u, &p_bs, &c, 1234).unwrap();
        assert_eq!(a, b);
        let other = synthesize_received(&m, &p_u, &p_bs, &c, 1235).unwrap();
        assert_ne!(a.y, other.y);
    }

    #[test]
    fn ricean_power_conservation_monte_carlo() {
        // E|s_k + v_k|^2 must equal |A_k|^2 P_k for every kappa under the
        // per-subcarrier convention.
        for kappa in [0.0, 1.0, 10.0] {
            let mut c = small_config(4);
            c.rice_factor = kappa;
            c.noise_figure = 0.0;
            let a = CascadeGain {
                gains: vec![
                    Complex64::new(3.0e-6, 1.0e-6),
                    Complex64::new(-2.0e-6, 2.0e-6),
                    Complex64::new(1.0e-7, -9.0e-7),
                    Complex64::new(5.0e-6, 0.0),
                ],
            };
            let ctx = ProfileContext {
                metaprism_hash: ContentHash([0; 32]),
                fingerprint_hash: ContentHash([0; 32]),
            };
            let n_draws = 10_000;
            let mut acc = [0.0f64; 4];
            for seed in 0..n_draws {
                let prof = received_from_cascade(&a, &c, ctx, seed);
                for k in 0..4 {
                    acc[k] += (prof.s[k] + prof.v[k]).norm_sqr();
                }
            }
            let pk = c.per_subcarrier_power();
            for k in 0..4 {
                let mean = acc[k] / n_draws as f64;
                let expect = a.gains[k].norm_sqr() * pk;
                assert!(
                    (mean - expect).abs() < 0.05 * expect,
                    "kappa {kappa} k {k}: mean {mean:e} vs {expect:e}"
                );
            }
        }
    }

    #[test]
    fn diffuse_variance_follows_convention() {
        let mut c = small_config(8);
        c.rice_factor = 1.0;
        let a = CascadeGain {
            gains: vec![Complex64::new(1.0e-6, 0.0); 8],
        };
        let ctx = ProfileContext {
            metaprism_hash: ContentHash([0; 32]),
            fingerprint_hash: ContentHash([0; 32]),
        };
        let per = received_from_cascade(&a, &c, ctx, 0);
        c.diffuse_convention = DiffusePowerConvention::Total;
        let tot = received_from_cascade(&a, &c, ctx, 0);
        let ratio = tot.sigma2_v[0] / per.sigma2_v[0];
        assert!((ratio - 8.0).abs() < 1e-9, "ratio = {ratio}");
    }

    #[test]
    fn far_field_cascade_matches_array_factor_budget() {
        // Beyond ~3 Fraunhofer distances the per-cell cascade collapses to
        // the plane-wave array factor times center-of-aperture link gains.
        let mut c = small_config(16);
        c.rice_factor = f64::INFINITY;
        let lam = c.wavelength();
        let m = Metaprism::build_grid(20, 20, lam)
            .unwrap()
            .design_beamsteering(30.0_f64.to_radians(), 20.0_f64.to_radians(), lam, c.bandwidth_hz)
            .unwrap();
        let d_f = m.aperture(lam).fraunhofer_distance;
        let d_u = 3.5 * d_f;
        let d_bs = 4.0 * d_f;
        let inc = AnglePair::from_degrees(30.0, 0.0);
        let p_u = crate::geometry::position_from_polar(d_u, inc).unwrap();
        // Observation at the predicted direction of the highest subcarrier.
        let params = m.beamsteering_params().unwrap();
        let f_top = c.subcarrier_frequency(16).unwrap();
        let obs = crate::arrayfactor::predicted_reflection_angle(
            &params, inc, f_top, c.carrier_hz, lam,
        )
        .unwrap();
        let p_bs = crate::geometry::position_from_polar(d_bs, obs).unwrap();
        let a = cascade_gain(&m, &p_u, &p_bs, &c).unwrap();
        let af = crate::arrayfactor::array_factor(&m, inc, obs, f_top, c.carrier_hz, lam);
        let h_bar = c.gain_user.sqrt() * lam / (4.0 * PI * d_u);
        let g_bar = c.gain_bs.sqrt() * lam / (4.0 * PI * d_bs);
        let expect = af.norm() * h_bar * g_bar;
        let got = a.gains[15].norm();
        let db = 20.0 * (got / expect).log10();
        assert!(db.abs() < 0.5, "FF mismatch {db:.3} dB");
    }

    #[test]
    fn profile_table_round_trip() {
        let mut c = small_config(8);
        c.rice_factor = 3.0;
        let m = Metaprism::build_grid(2, 2, c.wavelength())
            .unwrap()
            .design_random(1e-6, 8)
            .unwrap();
        let prof = synthesize_received(
            &m,
            &Position3D::new(0.0, 0.0, 5.0),
            &Position3D::new(8.0, 0.0, 8.0),
            &c,
            77,
        )
        .unwrap();
        let mut buf = Vec::new();
        prof.write_table(&c, &mut buf).unwrap();
        let back = ReceivedProfile::read_table(&mut buf.as_slice()).unwrap();
        assert_eq!(back.y, prof.y);
        assert_eq!(back.s, prof.s);
        assert_eq!(back.context, prof.context);
        assert_eq!(back.sigma2, prof.sigma2);
    }
}
