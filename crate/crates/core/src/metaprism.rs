//! Cell grid and frequency-selective phase profile of the metaprism.
//!
//! Each cell (n, m) reflects with unit magnitude and a phase that is linear
//! in the offset from the carrier, `psi_nm(f) = alpha_nm * (f - f0)`. The
//! per-cell slope `alpha_nm` is the whole design surface:
//!
//! - beamsteering design: `alpha_nm = a0 * x_n + b0 * y_m`, which fans the
//!   subcarriers of an incident signal across a chosen angular sector;
//! - random design: `alpha_nm ~ U(0, upper_bound)` i.i.d., which gives every
//!   position in the near field a (nearly) unique frequency profile.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Position3D;
use crate::hashing::{CanonicalHasher, ContentHash};
use crate::{Error, Result};

/// Default upper bound of the random-design coefficient draw, rad/Hz.
pub const RD_DEFAULT_UPPER_BOUND: f64 = 1e-6;

/// Coefficients of the beamsteering design, frozen at design time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamsteeringParams {
    /// Phase-slope gradient along x, rad/(Hz*m).
    pub a0: f64,
    /// Phase-slope gradient along y, rad/(Hz*m); zero under this design.
    pub b0: f64,
    /// Reference incidence azimuth the design was computed for, radians.
    pub theta_ref: f64,
    /// Angular offset of the highest subcarrier, radians.
    pub theta_m: f64,
}

/// How the per-cell coefficients were produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignKind {
    /// All coefficients zero: the surface is a plain mirror at every
    /// frequency.
    Mirror,
    Beamsteering(BeamsteeringParams),
    Random { upper_bound: f64, seed: u64 },
}

/// Aperture size summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aperture {
    /// Maximum dimension (the aperture diagonal), meters.
    pub max_dimension: f64,
    /// Fraunhofer distance 2 D^2 / lambda, meters.
    pub fraunhofer_distance: f64,
}

/// An N x M cell grid with per-cell phase-slope coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Metaprism {
    n_cells_x: usize,
    n_cells_y: usize,
    cell_pitch_x: f64,
    cell_pitch_y: f64,
    /// Row-major over n, then m: `alphas[n * n_cells_y + m]`, rad/Hz.
    alphas: Vec<f64>,
    design: DesignKind,
}

impl Metaprism {
    /// Builds the cell grid with pitch exactly half the wavelength and all
    /// coefficients zeroed.
    pub fn build_grid(n_cells_x: usize, n_cells_y: usize, wavelength: f64) -> Result<Self> {
        Self::build_grid_with_pitch(n_cells_x, n_cells_y, wavelength, 0.5)
    }

    /// Builds the grid with pitch = `pitch_fraction * wavelength`.
    ///
    /// The pitch must stay within 1% of half a wavelength; the phase model
    /// assumes a half-wavelength lattice.
    pub fn build_grid_with_pitch(
        n_cells_x: usize,
        n_cells_y: usize,
        wavelength: f64,
        pitch_fraction: f64,
    ) -> Result<Self> {
        if n_cells_x == 0 || n_cells_y == 0 {
            return Err(Error::Domain(format!(
                "metaprism needs at least one cell per axis, got {n_cells_x} x {n_cells_y}"
            )));
        }
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(Error::Domain(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        if (pitch_fraction - 0.5).abs() > 0.005 {
            return Err(Error::Domain(format!(
                "cell pitch must be within 1% of half a wavelength, got fraction {pitch_fraction}"
            )));
        }
        let pitch = pitch_fraction * wavelength;
        Ok(Self {
            n_cells_x,
            n_cells_y,
            cell_pitch_x: pitch,
            cell_pitch_y: pitch,
            alphas: vec![0.0; n_cells_x * n_cells_y],
            design: DesignKind::Mirror,
        })
    }

    pub fn n_cells_x(&self) -> usize {
        self.n_cells_x
    }

    pub fn n_cells_y(&self) -> usize {
        self.n_cells_y
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells_x * self.n_cells_y
    }

    pub fn cell_pitch_x(&self) -> f64 {
        self.cell_pitch_x
    }

    pub fn cell_pitch_y(&self) -> f64 {
        self.cell_pitch_y
    }

    pub fn design(&self) -> DesignKind {
        self.design
    }

    pub fn beamsteering_params(&self) -> Option<BeamsteeringParams> {
        match self.design {
            DesignKind::Beamsteering(p) => Some(p),
            _ => None,
        }
    }

    /// x-coordinate of column n: `x_n = n dx - N dx / 2`.
    pub fn cell_x(&self, n: usize) -> f64 {
        n as f64 * self.cell_pitch_x - self.n_cells_x as f64 * self.cell_pitch_x / 2.0
    }

    /// y-coordinate of row m: `y_m = m dy - M dy / 2`.
    pub fn cell_y(&self, m: usize) -> f64 {
        m as f64 * self.cell_pitch_y - self.n_cells_y as f64 * self.cell_pitch_y / 2.0
    }

    pub fn cell_position(&self, n: usize, m: usize) -> Position3D {
        Position3D::new(self.cell_x(n), self.cell_y(m), 0.0)
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha(&self, n: usize, m: usize) -> Result<f64> {
        self.cell_index(n, m).map(|i| self.alphas[i])
    }

    fn cell_index(&self, n: usize, m: usize) -> Result<usize> {
        if n >= self.n_cells_x {
            return Err(Error::IndexOutOfRange {
                index: n,
                len: self.n_cells_x,
            });
        }
        if m >= self.n_cells_y {
            return Err(Error::IndexOutOfRange {
                index: m,
                len: self.n_cells_y,
            });
        }
        Ok(n * self.n_cells_y + m)
    }

    /// Applies the beamsteering design: the highest subcarrier of a signal
    /// incident at `theta_ref` is reflected toward `-theta_ref - theta_m`.
    pub fn design_beamsteering(
        &self,
        theta_ref: f64,
        theta_m: f64,
        wavelength: f64,
        bandwidth_hz: f64,
    ) -> Result<Self> {
        if !(bandwidth_hz > 0.0) {
            return Err(Error::Domain(format!(
                "bandwidth must be positive, got {bandwidth_hz}"
            )));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if theta_ref.abs() > half_pi || (theta_ref + theta_m).abs() > half_pi {
            return Err(Error::Domain(format!(
                "design angles leave the visible region: theta_ref {:.2} deg, \
                 theta_ref + theta_m {:.2} deg",
                theta_ref.to_degrees(),
                (theta_ref + theta_m).to_degrees()
            )));
        }
        let a0 = -4.0 * std::f64::consts::PI / (wavelength * bandwidth_hz)
            * (-(theta_ref + theta_m).sin() + theta_ref.sin());
        let b0 = 0.0;
        let mut out = self.clone();
        for n in 0..out.n_cells_x {
            let xn = out.cell_x(n);
            for m in 0..out.n_cells_y {
                out.alphas[n * out.n_cells_y + m] = a0 * xn + b0 * out.cell_y(m);
            }
        }
        out.design = DesignKind::Beamsteering(BeamsteeringParams {
            a0,
            b0,
            theta_ref,
            theta_m,
        });
        Ok(out)
    }

    /// Applies the random design: coefficients i.i.d. uniform on
    /// `[0, upper_bound)` from a deterministic seeded generator.
    pub fn design_random(&self, upper_bound: f64, seed: u64) -> Result<Self> {
        if !(upper_bound > 0.0) {
            return Err(Error::Domain(format!(
                "random-design upper bound must be positive, got {upper_bound}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for a in out.alphas.iter_mut() {
            *a = rng.random::<f64>() * upper_bound;
        }
        out.design = DesignKind::Random { upper_bound, seed };
        Ok(out)
    }

    /// Reflection coefficient of cell (n, m) at frequency `f`:
    /// a unit-modulus number with phase `alpha_nm * (f - f0)`.
    pub fn reflection_coefficient(&self, n: usize, m: usize, f: f64, f0: f64) -> Result<Complex64> {
        let alpha = self.alpha(n, m)?;
        Ok(Complex64::from_polar(1.0, alpha * (f - f0)))
    }

    /// Aperture diagonal and the Fraunhofer distance `2 D^2 / lambda`.
    pub fn aperture(&self, wavelength: f64) -> Aperture {
        let side_x = self.n_cells_x as f64 * self.cell_pitch_x;
        let side_y = self.n_cells_y as f64 * self.cell_pitch_y;
        let d = (side_x * side_x + side_y * side_y).sqrt();
        Aperture {
            max_dimension: d,
            fraunhofer_distance: 2.0 * d * d / wavelength,
        }
    }

    /// Content hash over geometry, coefficients, and design metadata.
    pub fn content_hash(&self) -> ContentHash {
        let mut h = CanonicalHasher::new("metaprism");
        h.u64(self.n_cells_x as u64)
            .u64(self.n_cells_y as u64)
            .f64(self.cell_pitch_x)
            .f64(self.cell_pitch_y)
            .f64s(&self.alphas);
        match self.design {
            DesignKind::Mirror => {
                h.str("mirror");
            }
            DesignKind::Beamsteering(p) => {
                h.str("beamsteering")
                    .f64(p.a0)
                    .f64(p.b0)
                    .f64(p.theta_ref)
                    .f64(p.theta_m);
            }
            DesignKind::Random { upper_bound, seed } => {
                h.str("random").f64(upper_bound).u64(seed);
            }
        }
        h.finish()
    }

    /// Writes the coefficient map as a text table: a metadata header
    /// followed by one `n m x_n y_m alpha` row per cell.
    pub fn write_coefficient_map<W: Write>(&self, w: &mut W) -> Result<()> {
        let design = match self.design {
            DesignKind::Mirror => "mirror".to_string(),
            DesignKind::Beamsteering(p) => format!(
                "beamsteering a0={} b0={} theta_ref_rad={} theta_m_rad={}",
                p.a0, p.b0, p.theta_ref, p.theta_m
            ),
            DesignKind::Random { upper_bound, seed } => {
                format!("random upper_bound={upper_bound} seed={seed}")
            }
        };
        writeln!(w, "# metaprism coefficient map")?;
        writeln!(w, "# design: {design}")?;
        writeln!(
            w,
            "# n_cells_x: {} n_cells_y: {} pitch_x_m: {} pitch_y_m: {}",
            self.n_cells_x, self.n_cells_y, self.cell_pitch_x, self.cell_pitch_y
        )?;
        writeln!(w, "# columns: n m x_n_m y_m_m alpha_rad_per_hz")?;
        let mut line = String::new();
        for n in 0..self.n_cells_x {
            for m in 0..self.n_cells_y {
                line.clear();
                write!(
                    &mut line,
                    "{n}\t{m}\t{}\t{}\t{}",
                    self.cell_x(n),
                    self.cell_y(m),
                    self.alphas[n * self.n_cells_y + m]
                )
                .expect("write to string");
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    /// Parses a coefficient map written by [`Self::write_coefficient_map`].
    pub fn read_coefficient_map<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut design_line = None;
        let mut dims_line = None;
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(d) = rest.strip_prefix("design:") {
                    design_line = Some(d.trim().to_string());
                } else if rest.starts_with("n_cells_x:") {
                    dims_line = Some(rest.to_string());
                }
                continue;
            }
            let mut it = t.split_whitespace();
            let n: usize = parse_field(it.next(), "n")?;
            let m: usize = parse_field(it.next(), "m")?;
            let _x: f64 = parse_field(it.next(), "x_n")?;
            let _y: f64 = parse_field(it.next(), "y_m")?;
            let alpha: f64 = parse_field(it.next(), "alpha")?;
            rows.push((n, m, alpha));
        }
        let dims = dims_line
            .ok_or_else(|| Error::Format("coefficient map missing dimensions header".into()))?;
        let kv = parse_kv(&dims);
        let n_cells_x: usize = kv_get(&kv, "n_cells_x")?;
        let n_cells_y: usize = kv_get(&kv, "n_cells_y")?;
        let pitch_x: f64 = kv_get(&kv, "pitch_x_m")?;
        let pitch_y: f64 = kv_get(&kv, "pitch_y_m")?;
        if rows.len() != n_cells_x * n_cells_y {
            return Err(Error::Format(format!(
                "coefficient map has {} rows, expected {}",
                rows.len(),
                n_cells_x * n_cells_y
            )));
        }
        let mut alphas = vec![f64::NAN; n_cells_x * n_cells_y];
        for (n, m, alpha) in rows {
            if n >= n_cells_x || m >= n_cells_y {
                return Err(Error::Format(format!("cell index ({n}, {m}) out of range")));
            }
            alphas[n * n_cells_y + m] = alpha;
        }
        if alphas.iter().any(|a| a.is_nan()) {
            return Err(Error::Format("coefficient map has missing cells".into()));
        }
        let design_str = design_line
            .ok_or_else(|| Error::Format("coefficient map missing design header".into()))?;
        let design = parse_design(&design_str)?;
        Ok(Self {
            n_cells_x,
            n_cells_y,
            cell_pitch_x: pitch_x,
            cell_pitch_y: pitch_y,
            alphas,
            design,
        })
    }
}

fn parse_design(s: &str) -> Result<DesignKind> {
    let mut it = s.split_whitespace();
    match it.next() {
        Some("mirror") => Ok(DesignKind::Mirror),
        Some("beamsteering") => {
            let kv = parse_kv(s);
            Ok(DesignKind::Beamsteering(BeamsteeringParams {
                a0: kv_get(&kv, "a0")?,
                b0: kv_get(&kv, "b0")?,
                theta_ref: kv_get(&kv, "theta_ref_rad")?,
                theta_m: kv_get(&kv, "theta_m_rad")?,
            }))
        }
        Some("random") => {
            let kv = parse_kv(s);
            Ok(DesignKind::Random {
                upper_bound: kv_get(&kv, "upper_bound")?,
                seed: kv_get(&kv, "seed")?,
            })
        }
        other => Err(Error::Format(format!("unknown design kind: {other:?}"))),
    }
}

fn parse_kv(s: &str) -> Vec<(String, String)> {
    s.split_whitespace()
        .filter_map(|tok| {
            let tok = tok.trim_end_matches(':');
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .chain(
            // also accept "key: value" pairs written with a space
            s.split_whitespace()
                .collect::<Vec<_>>()
                .windows(2)
                .filter_map(|w| {
                    w[0].strip_suffix(':')
                        .map(|k| (k.to_string(), w[1].to_string()))
                }),
        )
        .collect()
}

fn kv_get<T: std::str::FromStr>(kv: &[(String, String)], key: &str) -> Result<T> {
    kv.iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| Error::Format(format!("missing field {key}")))?
        .1
        .parse()
        .map_err(|_| Error::Format(format!("bad value for {key}")))
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, name: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Format(format!("missing column {name}")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad value in column {name}")))
}
