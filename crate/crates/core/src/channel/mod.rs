//! Cascade CSI synthesis for transmitters moving in front of an IRS.
//!
//! The uplink is `x = h·ψ·g`, with `g` the transmitter→IRS channel, `ψ` the
//! diagonal unit-modulus IRS response and `h` the IRS→receiver channel. Both
//! `h` and `g` are Rician: a deterministic line-of-sight part computed from
//! the exact element-to-element distances of the antenna arrays, plus an
//! i.i.d. Rayleigh part that is redrawn every sample.

mod complex;
mod config;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use complex::ComplexMatrix;
pub use config::{ChannelConfig, Position3D, Trajectory, SPEED_OF_LIGHT};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
}

/// Rice factors at or above this value are treated as pure line of sight.
pub const KAPPA_INFINITE: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkState {
    Los,
    Nlos,
}

/// Indoor-factory path loss in dB (3GPP TR 38.901 InF-LoS / InF-SL).
pub fn path_loss_db(dist_m: f64, fc_ghz: f64, link: LinkState) -> Result<f64, ChannelError> {
    if !(dist_m > 0.0) || !(fc_ghz > 0.0) {
        return Err(ChannelError::Domain(format!(
            "path loss needs positive distance and frequency, got d={dist_m} m, fc={fc_ghz} GHz"
        )));
    }
    let los = 31.84 + 21.5 * dist_m.log10() + 19.0 * fc_ghz.log10();
    Ok(match link {
        LinkState::Los => los,
        LinkState::Nlos => los.max(33.0 + 25.5 * dist_m.log10() + 20.0 * fc_ghz.log10()),
    })
}

/// Linear power gain for a loss in dB.
pub fn db_to_gain(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Standard circular complex Gaussian sample, `CN(0, 1)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn rayleigh_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Rician channel `√(G_LoS·κ/(1+κ))·H̄ + √(G_NLoS/(1+κ))·H̃`.
///
/// `los` is the unit-modulus line-of-sight response `H̄`; the gains are the
/// linear values of the two path losses. `H̃` is drawn from `rng`.
pub fn rician_channel<R: Rng + ?Sized>(
    los: &ComplexMatrix,
    kappa: f64,
    pl_los_db: f64,
    pl_nlos_db: f64,
    rng: &mut R,
) -> Result<ComplexMatrix, ChannelError> {
    if !(kappa >= 0.0) {
        return Err(ChannelError::Domain(format!(
            "Rice factor must be non-negative, got {kappa}"
        )));
    }
    let (a, b) = rician_weights(kappa, pl_los_db, pl_nlos_db);
    let nlos = rayleigh_matrix(los.rows(), los.cols(), rng);
    los.axpby(a, &nlos, b)
}

fn rician_weights(kappa: f64, pl_los_db: f64, pl_nlos_db: f64) -> (f64, f64) {
    let (g_los, g_nlos) = (db_to_gain(pl_los_db), db_to_gain(pl_nlos_db));
    if kappa >= KAPPA_INFINITE {
        (g_los.sqrt(), 0.0)
    } else {
        (
            (g_los * kappa / (1.0 + kappa)).sqrt(),
            (g_nlos / (1.0 + kappa)).sqrt(),
        )
    }
}

/// Diagonal IRS response with phases uniform on `[0, 2π)`.
pub fn irs_phase_matrix<R: Rng + ?Sized>(m_elements: usize, rng: &mut R) -> ComplexMatrix {
    let phases: Vec<f64> = (0..m_elements)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    irs_phase_matrix_from_angles(&phases)
}

pub fn irs_phase_matrix_from_angles(phases: &[f64]) -> ComplexMatrix {
    let diag: Vec<Complex64> = phases.iter().map(|&t| Complex64::from_polar(1.0, t)).collect();
    ComplexMatrix::diagonal(&diag)
}

/// Cascade channel `x = h·ψ·g`.
pub fn cascade_csi(
    h: &ComplexMatrix,
    psi: &ComplexMatrix,
    g: &ComplexMatrix,
) -> Result<ComplexMatrix, ChannelError> {
    if h.cols() != psi.rows() || psi.cols() != g.rows() {
        return Err(ChannelError::Shape(format!(
            "cascade needs h (N_R×M), ψ (M×M), g (M×N_T); got {:?}, {:?}, {:?}",
            h.shape(),
            psi.shape(),
            g.shape()
        )));
    }
    if psi.is_diagonal() {
        h.scale_columns(&psi.diag())?.matmul(g)
    } else {
        h.matmul(psi)?.matmul(g)
    }
}

/// Constant-velocity positions `start + v·k/fs`, `k = 0..n_samples`.
pub fn mobility_trace(
    start: Position3D,
    velocity: [f64; 3],
    n_samples: usize,
    sample_rate_hz: f64,
) -> Vec<Position3D> {
    (0..n_samples)
        .map(|k| {
            let t = k as f64 / sample_rate_hz;
            start.offset(velocity[0] * t, velocity[1] * t, velocity[2] * t)
        })
        .collect()
}

/// Adds white Gaussian noise at `snr_db` relative to the mean squared value of `x`.
///
/// `snr_db = +∞` returns the input unchanged.
pub fn add_awgn<R: Rng + ?Sized>(x: &[f64], snr_db: f64, rng: &mut R) -> Result<Vec<f64>, ChannelError> {
    if snr_db == f64::INFINITY {
        return Ok(x.to_vec());
    }
    if snr_db.is_nan() {
        return Err(ChannelError::Domain("SNR is NaN".into()));
    }
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if !(power > 0.0) {
        return Err(ChannelError::Domain(
            "cannot set a finite SNR on a zero-power signal".into(),
        ));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    Ok(x
        .iter()
        .map(|v| {
            let n: f64 = StandardNormal.sample(rng);
            v + sigma * n
        })
        .collect())
}

/// One sampled cascade channel.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub h: ComplexMatrix,
    pub g: ComplexMatrix,
    /// Shared by every realization of a trace.
    pub psi: Arc<ComplexMatrix>,
    pub x: ComplexMatrix,
    pub tx_position: Position3D,
    pub timestamp_s: f64,
}

/// Element positions of a uniform array centred on `center`.
///
/// Linear arrays lie along x; the IRS is a `rows × cols` plane spanned by
/// z (rows) and y (columns). Spacing is half a wavelength.
fn ula_positions(center: Position3D, n: usize, spacing: f64) -> Vec<Position3D> {
    (0..n)
        .map(|i| center.offset((i as f64 - (n as f64 - 1.0) / 2.0) * spacing, 0.0, 0.0))
        .collect()
}

fn upa_positions(center: Position3D, rows: usize, cols: usize, spacing: f64) -> Vec<Position3D> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(center.offset(
                0.0,
                (c as f64 - (cols as f64 - 1.0) / 2.0) * spacing,
                (r as f64 - (rows as f64 - 1.0) / 2.0) * spacing,
            ));
        }
    }
    out
}

/// Unit-modulus LoS response `exp(−j·2π·dist/λ)` between every receive and
/// transmit element; rows index `rx`, columns index `tx`.
fn los_response(rx: &[Position3D], tx: &[Position3D], wavelength: f64) -> ComplexMatrix {
    let k = 2.0 * PI / wavelength;
    ComplexMatrix::from_fn(rx.len(), tx.len(), |i, j| {
        Complex64::from_polar(1.0, -k * rx[i].distance(&tx[j]))
    })
}

/// Streams the realizations of one transmitter's trace.
pub struct TraceGenerator<'a, R: Rng> {
    cfg: &'a ChannelConfig,
    start: Position3D,
    rng: R,
    psi: Arc<ComplexMatrix>,
    irs_elems: Vec<Position3D>,
    h_los: ComplexMatrix,
    h_weights: (f64, f64),
    spacing: f64,
    next: usize,
    remaining: usize,
}

impl<'a, R: Rng> TraceGenerator<'a, R> {
    pub fn new(
        cfg: &'a ChannelConfig,
        tx_index: usize,
        n_samples: usize,
        rng: R,
    ) -> Result<Self, ChannelError> {
        cfg.validate()?;
        let start = cfg.transmitter(tx_index).ok_or_else(|| {
            ChannelError::Domain(format!(
                "transmitter {tx_index} out of range ({} configured)",
                cfg.n_transmitters()
            ))
        })?;
        if n_samples == 0 {
            return Err(ChannelError::Domain("trace needs at least one sample".into()));
        }
        let lambda = cfg.wavelength_m();
        let spacing = lambda / 2.0;
        let mut psi_rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.irs_seed);
        let psi = Arc::new(irs_phase_matrix(cfg.irs_elements(), &mut psi_rng));
        let irs_elems = upa_positions(cfg.irs, cfg.irs_rows, cfg.irs_cols, spacing);
        let bob_elems = ula_positions(cfg.bob, cfg.n_rx_antennas, spacing);

        let h_dist = cfg.irs.distance(&cfg.bob);
        let h_los = los_response(&bob_elems, &irs_elems, lambda);
        let h_weights = rician_weights(
            cfg.rice_kappa_h,
            path_loss_db(h_dist, cfg.carrier_ghz, LinkState::Los)?,
            path_loss_db(h_dist, cfg.carrier_ghz, LinkState::Nlos)?,
        );
        Ok(Self {
            cfg,
            start,
            rng,
            psi,
            irs_elems,
            h_los,
            h_weights,
            spacing,
            next: 0,
            remaining: n_samples,
        })
    }

    fn position_at(&self, k: usize) -> Position3D {
        let path = self.cfg.tx_speed_mps * k as f64 / self.cfg.sample_rate_hz;
        self.start.offset(0.0, self.cfg.trajectory.displacement(path), 0.0)
    }

    fn draw(&mut self, k: usize) -> Result<ChannelRealization, ChannelError> {
        let cfg = self.cfg;
        let pos = self.position_at(k);
        let timestamp_s = k as f64 / cfg.sample_rate_hz;

        if !cfg.irs_enabled {
            let d = pos.distance(&cfg.bob);
            let gain = db_to_gain(path_loss_db(d, cfg.carrier_ghz, LinkState::Nlos)?);
            let x = rayleigh_matrix(cfg.n_rx_antennas, cfg.n_tx_antennas, &mut self.rng)
                .scaled(gain.sqrt());
            let n_r = cfg.n_rx_antennas;
            return Ok(ChannelRealization {
                h: ComplexMatrix::identity(n_r),
                g: x.clone(),
                psi: Arc::new(ComplexMatrix::identity(n_r)),
                x,
                tx_position: pos,
                timestamp_s,
            });
        }

        let g_dist = pos.distance(&cfg.irs);
        if !(g_dist > 0.0) {
            return Err(ChannelError::Domain(format!(
                "transmitter at {pos:?} coincides with the IRS"
            )));
        }
        let tx_elems = ula_positions(pos, cfg.n_tx_antennas, self.spacing);
        let g_los = los_response(&self.irs_elems, &tx_elems, cfg.wavelength_m());

        let (ha, hb) = self.h_weights;
        let h_nlos = rayleigh_matrix(self.h_los.rows(), self.h_los.cols(), &mut self.rng);
        let h = self.h_los.axpby(ha, &h_nlos, hb)?;
        let g = rician_channel(
            &g_los,
            cfg.rice_kappa_g,
            path_loss_db(g_dist, cfg.carrier_ghz, LinkState::Los)?,
            path_loss_db(g_dist, cfg.carrier_ghz, LinkState::Nlos)?,
            &mut self.rng,
        )?;
        let x = cascade_csi(&h, &self.psi, &g)?;
        Ok(ChannelRealization {
            h,
            g,
            psi: Arc::clone(&self.psi),
            x,
            tx_position: pos,
            timestamp_s,
        })
    }
}

impl<R: Rng> Iterator for TraceGenerator<'_, R> {
    type Item = Result<ChannelRealization, ChannelError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let k = self.next;
        self.next += 1;
        Some(self.draw(k))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

/// Collects `n_samples` realizations for transmitter `tx_index`.
pub fn generate_csi_trace<R: Rng>(
    cfg: &ChannelConfig,
    tx_index: usize,
    n_samples: usize,
    rng: R,
) -> Result<Vec<ChannelRealization>, ChannelError> {
    TraceGenerator::new(cfg, tx_index, n_samples, rng)?.collect()
}
