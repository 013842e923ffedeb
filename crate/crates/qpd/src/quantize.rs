//! Per-variable codec streams and bit-rate accounting.
//!
//! Every scalar exchanged between an agent and a network node passes through
//! its own independent codec stream. Three schemes are provided:
//!
//! - **Zoom-in adaptive midpoint quantizer** (the optimum-achieving scheme).
//!   Step sizes shrink geometrically, `delta_k = alpha^(k+1)`. The first
//!   transmission quantizes the start interval `(-L alpha, L alpha)` with `2L`
//!   uniform cells. Every later transmission sends a pair: an *offset integer*
//!   `floor((v_k - v_{k-1}) / delta_{k-1})` that recenters the active window on
//!   the new value, and a *cell index* inside that window,
//!   `clamp(floor(z), -ceil(2/alpha), ceil(2/alpha) - 1)` for the normalized
//!   coordinate `z = (v_k - C_k)/delta_k`. Reconstruction is the cell midpoint
//!   `C_k + cell * delta_k + delta_k / 2`, so the error never exceeds
//!   `delta_k / 2` while only `ceil(log2(2 ceil(2/alpha)))` bits per step are
//!   charged for the cell index.
//! - **Passthrough**: identity, infinite rate; the exact-arithmetic baseline.
//! - **Static uniform**: a fixed midpoint quantizer on `[-range, range]` that
//!   never refines — the classic non-optimum-achieving comparison point.
//!
//! Decoder state is a deterministic function of the symbol history alone, so a
//! fresh decoder replaying a recorded symbol stream reproduces the quantized
//! sequence bit for bit. A [`RateLedger`] records the transmitted bit-width
//! `b = ceil(log2 |alphabet|)` per variable per step (the effective alphabet
//! is `2^b`); summaries convert to nats through `ln 2` at the boundary.
//!
//! **Floating-point saturation.** `alpha^(k+1)` eventually shrinks below the
//! spacing of `f64` values at the tracked magnitude, where no finite-precision
//! codec can place cell midpoints. The step size therefore saturates at a
//! floor of a few ulps of the largest magnitude the stream has reconstructed
//! (see [`CodecStream::next_delta`]). The floor is computed from state both
//! ends share, so encoder and decoder remain bitwise synchronized; alphabet
//! sizes, and hence all bit counts, are unaffected. Past saturation the
//! reconstruction error stops shrinking and stays at the representation
//! limit instead of the codec failing.

use std::io::Write;

use crate::error::{Error, Result};

/// A transmitted cell index: `0 <= index < |alphabet|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Symbol {
    pub index: u32,
}

/// One step's transmission for one scalar variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoded {
    /// Step index the transmission belongs to.
    pub step: usize,
    /// Window-recentering offset integer (zoom-in scheme, steps >= 1; zero otherwise).
    pub offset: i64,
    /// Cell index within the step's alphabet.
    pub symbol: Symbol,
    /// Transmitted bit-width `ceil(log2 |alphabet|)`; `None` means unbounded
    /// (passthrough).
    pub bits: Option<u32>,
    /// True when the transmission includes the offset integer.
    pub carries_offset: bool,
    /// Passthrough payload: the exact value (quantizing schemes leave this empty).
    pub raw: Option<f64>,
}

/// `ceil(log2 x)` for `x >= 1`.
pub fn ceil_log2(x: u64) -> u32 {
    debug_assert!(x >= 1);
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Relative slack (4 ulps) allowed on the codec's inline error assertions.
const ULP_SLACK: f64 = 4.0 * f64::EPSILON;

/// The zoom step size never shrinks below this many machine epsilons of the
/// tracked magnitude. At 8 eps the floor leaves enough headroom that the
/// rounding noise of window arithmetic (a few ulps of the magnitude) stays
/// well inside one cell, keeping the inline invariants satisfiable forever.
const DELTA_FLOOR_EPS: f64 = 8.0;

#[derive(Debug, Clone)]
struct QaParams {
    alpha: f64,
    l: u32,
    /// `ceil(2/alpha)`: half the zoom alphabet.
    cell_half: i64,
}

impl QaParams {
    fn new(alpha: f64, l: u32) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) || !alpha.is_finite() {
            return Err(Error::Param(format!(
                "zoom-in contraction factor must lie in (0, 1), got {alpha}"
            )));
        }
        if l == 0 {
            return Err(Error::Param("start-interval parameter L must be >= 1".into()));
        }
        let cell_half = (2.0 / alpha).ceil();
        if !(cell_half >= 2.0 && cell_half <= (1u64 << 31) as f64) {
            return Err(Error::Param(format!(
                "zoom alphabet 2*ceil(2/alpha) = {} is out of range",
                2.0 * cell_half
            )));
        }
        Ok(QaParams {
            alpha,
            l,
            cell_half: cell_half as i64,
        })
    }

    /// `delta_k = alpha^(k+1)`, saturated below at the floating-point floor
    /// for the given tracked magnitude. `scale` must be the shared running
    /// magnitude (`>= 1`), so both ends compute the same step size.
    fn delta(&self, k: usize, scale: f64) -> f64 {
        let e = (k + 1).min(i32::MAX as usize) as i32;
        self.alpha.powi(e).max(Self::delta_floor(scale))
    }

    /// Smallest usable step size at a given tracked magnitude.
    fn delta_floor(scale: f64) -> f64 {
        DELTA_FLOOR_EPS * f64::EPSILON * scale
    }

    fn init_bits(&self) -> u32 {
        ceil_log2(2 * self.l as u64)
    }

    fn zoom_bits(&self) -> u32 {
        ceil_log2(2 * self.cell_half as u64)
    }

    /// Midpoint reconstruction of the start quantizer (shared by both ends).
    fn recon_init(&self, cell: i64) -> f64 {
        cell as f64 * self.alpha + self.alpha * 0.5
    }

    /// Window center from the previous reconstruction and the offset integer.
    fn zoom_center(prev_recon: f64, offset: i64, delta_prev: f64) -> f64 {
        prev_recon + offset as f64 * delta_prev
    }

    /// Midpoint reconstruction of a zoom cell (shared by both ends).
    fn recon_zoom(center: f64, cell: i64, delta: f64) -> f64 {
        center + cell as f64 * delta + delta * 0.5
    }
}

#[derive(Debug, Clone)]
enum StreamState {
    Passthrough,
    Qa {
        params: QaParams,
        /// Last true value seen by the encoder (valid once step >= 1).
        prev_value: f64,
        /// Encoder's model of the decoder output (valid once step >= 1).
        prev_recon: f64,
        /// Running max of 1 and every |reconstruction| so far. The decoder
        /// maintains the same quantity, so the step-size floor derived from
        /// it never desynchronizes the two ends.
        scale: f64,
    },
    StaticUniform { range: f64, bits: u32 },
}

/// Encoder-side state for one scalar variable.
#[derive(Debug, Clone)]
pub struct CodecStream {
    state: StreamState,
    step: usize,
}

impl CodecStream {
    /// Zoom-in stream with contraction factor `alpha` and start interval
    /// `(-L alpha, L alpha)`.
    pub fn qa(alpha: f64, l: u32) -> Result<Self> {
        Ok(CodecStream {
            state: StreamState::Qa {
                params: QaParams::new(alpha, l)?,
                prev_value: 0.0,
                prev_recon: 0.0,
                scale: 1.0,
            },
            step: 0,
        })
    }

    /// Identity stream with unbounded rate.
    pub fn passthrough() -> Self {
        CodecStream {
            state: StreamState::Passthrough,
            step: 0,
        }
    }

    /// Fixed midpoint quantizer on `[-range, range]` with `2^bits` cells;
    /// out-of-range values clamp to the boundary cells.
    pub fn static_uniform(range: f64, bits: u32) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::Param(format!("range must be positive and finite, got {range}")));
        }
        if bits == 0 || bits > 32 {
            return Err(Error::Param(format!("bits must lie in 1..=32, got {bits}")));
        }
        Ok(CodecStream {
            state: StreamState::StaticUniform { range, bits },
            step: 0,
        })
    }

    /// Steps encoded so far (the next encode is for this index).
    pub fn step(&self) -> usize {
        self.step
    }

    /// Alphabet size of the next transmission; `None` for passthrough.
    pub fn alphabet_size(&self) -> Option<u64> {
        match &self.state {
            StreamState::Passthrough => None,
            StreamState::Qa { params, .. } => Some(if self.step == 0 {
                2 * params.l as u64
            } else {
                2 * params.cell_half as u64
            }),
            StreamState::StaticUniform { bits, .. } => Some(1u64 << bits),
        }
    }

    /// Bit-width of the next transmission; `None` for passthrough.
    pub fn bits_next(&self) -> Option<u32> {
        self.alphabet_size().map(ceil_log2)
    }

    /// Cell width the next zoom-in encode will use, after the floating-point
    /// saturation floor; `None` for the other schemes. At step 0 this is the
    /// start-quantizer cell width `alpha`; afterwards it is
    /// `max(alpha^(k+1), floor)`, so the reconstruction error of an accepted
    /// step never exceeds half this width plus a few ulps of the magnitude.
    pub fn next_delta(&self) -> Option<f64> {
        match &self.state {
            StreamState::Qa { params, scale, .. } => Some(if self.step == 0 {
                params.alpha
            } else {
                params.delta(self.step, *scale)
            }),
            _ => None,
        }
    }

    /// A fresh decoder for this stream's scheme, positioned at step 0.
    ///
    /// Feeding it the encoder's symbols in order reproduces the quantized
    /// sequence exactly, regardless of when it is created.
    pub fn decoder(&self) -> CodecDecoder {
        let state = match &self.state {
            StreamState::Passthrough => DecoderState::Passthrough,
            StreamState::Qa { params, .. } => DecoderState::Qa {
                params: params.clone(),
                prev_recon: 0.0,
                scale: 1.0,
            },
            StreamState::StaticUniform { range, bits } => DecoderState::StaticUniform {
                range: *range,
                bits: *bits,
            },
        };
        CodecDecoder { state, step: 0 }
    }

    /// Encodes one value, advancing the stream by one step.
    ///
    /// The zoom-in scheme asserts two structural invariants inline and reports
    /// [`Error::IntervalViolation`] if either fails (allowing 4 ulps of slack):
    /// the value lies in the recentered window `|v - C| <= ceil(2/alpha) delta_k`,
    /// and the reconstruction error is at most `delta_k`, where `delta_k` is
    /// the saturated step size reported by [`next_delta`](Self::next_delta).
    pub fn encode(&mut self, value: f64) -> Result<Encoded> {
        if !value.is_finite() {
            return Err(Error::Numeric("encode input"));
        }
        let step = self.step;
        let enc = match &mut self.state {
            StreamState::Passthrough => Encoded {
                step,
                offset: 0,
                symbol: Symbol { index: 0 },
                bits: None,
                carries_offset: false,
                raw: Some(value),
            },
            StreamState::Qa {
                params,
                prev_value,
                prev_recon,
                scale,
            } => {
                if step == 0 {
                    let cell = (value / params.alpha).floor();
                    let l = params.l as f64;
                    if !(cell >= -l && cell < l) {
                        return Err(Error::IntervalViolation {
                            step,
                            value,
                            center: 0.0,
                            distance: value.abs(),
                            radius: l * params.alpha,
                        });
                    }
                    let cell = cell as i64;
                    let recon = params.recon_init(cell);
                    check_recon_error(step, value, recon, params.alpha, 0.0)?;
                    *prev_value = value;
                    *prev_recon = recon;
                    *scale = scale.max(recon.abs());
                    Encoded {
                        step,
                        offset: 0,
                        symbol: Symbol {
                            index: (cell + params.l as i64) as u32,
                        },
                        bits: Some(params.init_bits()),
                        carries_offset: false,
                        raw: None,
                    }
                } else {
                    let delta_prev = params.delta(step - 1, *scale);
                    let delta = params.delta(step, *scale);
                    let offset_f = ((value - *prev_value) / delta_prev).floor();
                    if !offset_f.is_finite() || offset_f.abs() >= 9.0e18 {
                        return Err(Error::Numeric("zoom offset integer"));
                    }
                    let offset = offset_f as i64;
                    let center = QaParams::zoom_center(*prev_recon, offset, delta_prev);
                    let radius = params.cell_half as f64 * delta;
                    let distance = (value - center).abs();
                    if distance > radius * (1.0 + ULP_SLACK) {
                        return Err(Error::IntervalViolation {
                            step,
                            value,
                            center,
                            distance,
                            radius,
                        });
                    }
                    let z = (value - center) / delta;
                    let cell = (z.floor() as i64).clamp(-params.cell_half, params.cell_half - 1);
                    let recon = QaParams::recon_zoom(center, cell, delta);
                    check_recon_error(step, value, recon, delta, center)?;
                    *prev_value = value;
                    *prev_recon = recon;
                    *scale = scale.max(recon.abs());
                    Encoded {
                        step,
                        offset,
                        symbol: Symbol {
                            index: (cell + params.cell_half) as u32,
                        },
                        bits: Some(params.zoom_bits()),
                        carries_offset: true,
                        raw: None,
                    }
                }
            }
            StreamState::StaticUniform { range, bits } => {
                let cells = 1u64 << *bits;
                let index = static_cell(value, *range, cells);
                Encoded {
                    step,
                    offset: 0,
                    symbol: Symbol { index },
                    bits: Some(*bits),
                    carries_offset: false,
                    raw: None,
                }
            }
        };
        self.step += 1;
        Ok(enc)
    }
}

/// Inline assertion: midpoint reconstruction error never exceeds the step size.
fn check_recon_error(step: usize, value: f64, recon: f64, delta: f64, center: f64) -> Result<()> {
    let err = (value - recon).abs();
    if err <= delta * (1.0 + ULP_SLACK) {
        Ok(())
    } else {
        Err(Error::IntervalViolation {
            step,
            value,
            center,
            distance: err,
            radius: delta,
        })
    }
}

fn static_cell(value: f64, range: f64, cells: u64) -> u32 {
    let width = 2.0 * range / cells as f64;
    let pos = ((value + range) / width).floor();
    if pos < 0.0 {
        0
    } else if pos >= cells as f64 {
        (cells - 1) as u32
    } else {
        pos as u32
    }
}

fn static_recon(index: u32, range: f64, cells: u64) -> f64 {
    let width = 2.0 * range / cells as f64;
    -range + (index as f64 + 0.5) * width
}

#[derive(Debug, Clone)]
enum DecoderState {
    Passthrough,
    Qa {
        params: QaParams,
        prev_recon: f64,
        /// Mirrors the encoder's running magnitude; see [`StreamState::Qa`].
        scale: f64,
    },
    StaticUniform { range: f64, bits: u32 },
}

/// Decoder-side state for one scalar variable; a pure function of the symbol
/// prefix it has consumed.
#[derive(Debug, Clone)]
pub struct CodecDecoder {
    state: DecoderState,
    step: usize,
}

impl CodecDecoder {
    /// Steps decoded so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Decodes one transmission, advancing the decoder by one step.
    pub fn decode(&mut self, enc: &Encoded) -> Result<f64> {
        let step = self.step;
        if enc.step != step {
            return Err(Error::Desync {
                step,
                index: enc.symbol.index,
                alphabet: 0,
            });
        }
        let value = match &mut self.state {
            DecoderState::Passthrough => enc.raw.ok_or(Error::Desync {
                step,
                index: enc.symbol.index,
                alphabet: 0,
            })?,
            DecoderState::Qa {
                params,
                prev_recon,
                scale,
            } => {
                if step == 0 {
                    let alphabet = 2 * params.l as u64;
                    if enc.symbol.index as u64 >= alphabet {
                        return Err(Error::Desync {
                            step,
                            index: enc.symbol.index,
                            alphabet,
                        });
                    }
                    let cell = enc.symbol.index as i64 - params.l as i64;
                    let recon = params.recon_init(cell);
                    *prev_recon = recon;
                    *scale = scale.max(recon.abs());
                    recon
                } else {
                    let alphabet = 2 * params.cell_half as u64;
                    if enc.symbol.index as u64 >= alphabet {
                        return Err(Error::Desync {
                            step,
                            index: enc.symbol.index,
                            alphabet,
                        });
                    }
                    let delta_prev = params.delta(step - 1, *scale);
                    let delta = params.delta(step, *scale);
                    let center = QaParams::zoom_center(*prev_recon, enc.offset, delta_prev);
                    let cell = enc.symbol.index as i64 - params.cell_half;
                    let recon = QaParams::recon_zoom(center, cell, delta);
                    *prev_recon = recon;
                    *scale = scale.max(recon.abs());
                    recon
                }
            }
            DecoderState::StaticUniform { range, bits } => {
                let cells = 1u64 << *bits;
                if enc.symbol.index as u64 >= cells {
                    return Err(Error::Desync {
                        step,
                        index: enc.symbol.index,
                        alphabet: cells,
                    });
                }
                static_recon(enc.symbol.index, *range, cells)
            }
        };
        self.step += 1;
        Ok(value)
    }
}

/// One recorded transmission in the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEntry {
    /// Transmitted bit-width; `None` marks an unbounded (passthrough) transmission.
    pub bits: Option<u32>,
    /// True when an offset integer rode along (zoom-in steps >= 1).
    pub carries_offset: bool,
}

impl From<&Encoded> for LedgerEntry {
    fn from(e: &Encoded) -> Self {
        LedgerEntry {
            bits: e.bits,
            carries_offset: e.carries_offset,
        }
    }
}

/// Bits transmitted per variable per step, split by side.
#[derive(Debug, Clone, PartialEq)]
pub struct RateLedger {
    bits_x: Vec<Vec<LedgerEntry>>,
    bits_lambda: Vec<Vec<LedgerEntry>>,
}

impl RateLedger {
    pub fn new(m: usize, n: usize) -> Self {
        RateLedger {
            bits_x: vec![Vec::new(); m],
            bits_lambda: vec![Vec::new(); n],
        }
    }

    pub fn m(&self) -> usize {
        self.bits_x.len()
    }

    pub fn n(&self) -> usize {
        self.bits_lambda.len()
    }

    /// Records agent `i`'s transmission; steps must be appended in order.
    pub fn record_x(&mut self, agent: usize, enc: &Encoded) -> Result<()> {
        Self::push(&mut self.bits_x, agent, enc, "agent")
    }

    /// Records node `j`'s transmission; steps must be appended in order.
    pub fn record_lambda(&mut self, node: usize, enc: &Encoded) -> Result<()> {
        Self::push(&mut self.bits_lambda, node, enc, "node")
    }

    fn push(side: &mut [Vec<LedgerEntry>], var: usize, enc: &Encoded, kind: &str) -> Result<()> {
        let slot = side
            .get_mut(var)
            .ok_or_else(|| Error::Param(format!("{kind} index {var} out of range")))?;
        if enc.step != slot.len() {
            return Err(Error::Param(format!(
                "{kind} {var}: ledger expects step {}, got {}",
                slot.len(),
                enc.step
            )));
        }
        slot.push(LedgerEntry::from(enc));
        Ok(())
    }

    /// Number of steps for which every variable has a recorded entry.
    pub fn steps_complete(&self) -> usize {
        self.bits_x
            .iter()
            .chain(self.bits_lambda.iter())
            .map(Vec::len)
            .min()
            .unwrap_or(0)
    }

    pub fn entries_x(&self, agent: usize) -> &[LedgerEntry] {
        &self.bits_x[agent]
    }

    pub fn entries_lambda(&self, node: usize) -> &[LedgerEntry] {
        &self.bits_lambda[node]
    }

    /// Total primal bits through step `horizon - 1`, with the optional offset
    /// surcharge; `None` when any transmission is unbounded.
    pub fn total_bits_x(&self, horizon: usize, offset_surcharge: u32) -> Option<u64> {
        Self::total(&self.bits_x, horizon, offset_surcharge)
    }

    /// Total dual bits through step `horizon - 1`.
    pub fn total_bits_lambda(&self, horizon: usize, offset_surcharge: u32) -> Option<u64> {
        Self::total(&self.bits_lambda, horizon, offset_surcharge)
    }

    fn total(side: &[Vec<LedgerEntry>], horizon: usize, offset_surcharge: u32) -> Option<u64> {
        let mut sum = 0u64;
        for entries in side {
            for e in entries.iter().take(horizon) {
                sum += e.bits? as u64;
                if e.carries_offset {
                    sum += offset_surcharge as u64;
                }
            }
        }
        Some(sum)
    }

    fn populated_through(&self, horizon: usize) -> bool {
        self.bits_x
            .iter()
            .chain(self.bits_lambda.iter())
            .all(|v| v.len() >= horizon)
    }
}

/// Long-run average data rates over a finite horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSummary {
    /// Average aggregate primal rate, bits per step.
    pub r_x_bits: f64,
    /// Average aggregate dual rate, bits per step.
    pub r_lambda_bits: f64,
    /// Average total rate, bits per step.
    pub r_q_bits: f64,
    /// The same three rates in nats per step (bits times `ln 2`).
    pub r_x_nats: f64,
    pub r_lambda_nats: f64,
    pub r_q_nats: f64,
    /// Extra bits charged per offset-carrying transmission (0 under the
    /// default accounting, which treats offsets as free).
    pub offset_surcharge_bits: u32,
}

impl RateSummary {
    /// False when any side is unbounded (passthrough).
    pub fn is_finite(&self) -> bool {
        self.r_q_bits.is_finite()
    }
}

/// Finite-horizon average rates `(1/k) * sum of per-step bit-widths`.
///
/// `offset_cap`, when given, additionally charges `ceil(log2(2 cap + 1))` bits
/// for every offset-carrying transmission — `cap` being the largest |offset|
/// observed in the run — instead of the default free-offset accounting.
pub fn rate_summary(
    ledger: &RateLedger,
    k_horizon: usize,
    offset_cap: Option<u64>,
) -> Result<RateSummary> {
    if k_horizon == 0 || !ledger.populated_through(k_horizon) {
        return Err(Error::EmptyLedger);
    }
    let surcharge = offset_cap
        .map(|cap| ceil_log2(2 * cap + 1))
        .unwrap_or(0);
    let k = k_horizon as f64;
    let to_rate = |total: Option<u64>| total.map(|t| t as f64 / k).unwrap_or(f64::INFINITY);
    let r_x_bits = to_rate(ledger.total_bits_x(k_horizon, surcharge));
    let r_lambda_bits = to_rate(ledger.total_bits_lambda(k_horizon, surcharge));
    let r_q_bits = r_x_bits + r_lambda_bits;
    Ok(RateSummary {
        r_x_bits,
        r_lambda_bits,
        r_q_bits,
        r_x_nats: r_x_bits * std::f64::consts::LN_2,
        r_lambda_nats: r_lambda_bits * std::f64::consts::LN_2,
        r_q_nats: r_q_bits * std::f64::consts::LN_2,
        offset_surcharge_bits: surcharge,
    })
}

/// Writes one variable's symbol trace as CSV: `k,offset,cell,bits`.
pub fn write_symbol_trace<W: Write>(w: &mut W, rows: &[Encoded]) -> std::io::Result<()> {
    writeln!(w, "k,offset,cell,bits")?;
    for r in rows {
        match r.bits {
            Some(b) => writeln!(w, "{},{},{},{}", r.step, r.offset, r.symbol.index, b)?,
            None => writeln!(w, "{},{},{},inf", r.step, r.offset, r.symbol.index)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn start_quantizer_worked_examples() {
        let mut s = CodecStream::qa(0.5, 2).unwrap();
        let mut d = s.decoder();
        let e = s.encode(0.3).unwrap();
        assert_eq!(d.decode(&e).unwrap(), 0.25);

        let mut s = CodecStream::qa(0.5, 2).unwrap();
        let mut d = s.decoder();
        let e = s.encode(-0.3).unwrap();
        assert_eq!(d.decode(&e).unwrap(), -0.25);
        assert_eq!(e.bits, Some(2)); // 2L = 4 cells
    }

    #[test]
    fn start_bits_and_zoom_bits() {
        let s = CodecStream::qa(0.9495, 5).unwrap();
        assert_eq!(s.bits_next(), Some(4)); // ceil(log2 10)
        assert_eq!(s.alphabet_size(), Some(10));

        let mut s = CodecStream::qa(0.9495, 5).unwrap();
        s.encode(0.0).unwrap();
        // ceil(2/0.9495) = 3, alphabet 6, 3 bits.
        assert_eq!(s.alphabet_size(), Some(6));
        assert_eq!(s.bits_next(), Some(3));
    }

    #[test]
    fn start_encode_rejects_out_of_interval_value() {
        let mut s = CodecStream::qa(0.5, 2).unwrap(); // interval (-1, 1)
        assert!(matches!(
            s.encode(1.5),
            Err(Error::IntervalViolation { step: 0, .. })
        ));
    }

    #[test]
    fn center_value_reconstructs_to_cell_midpoint() {
        let alpha = 0.9;
        let mut s = CodecStream::qa(alpha, 4).unwrap();
        let mut d = s.decoder();
        let e0 = s.encode(0.0).unwrap();
        let r0 = d.decode(&e0).unwrap();
        // Next value exactly at the reconstructed center: cell 0, midpoint recon.
        let e1 = s.encode(r0).unwrap();
        let r1 = d.decode(&e1).unwrap();
        let delta1 = alpha * alpha;
        assert_eq!(e1.symbol.index as i64 - 3, 0); // cell_half = ceil(2/0.9) = 3
        assert!((r1 - (r0 + delta1 / 2.0)).abs() <= f64::EPSILON);
    }

    #[test]
    fn zoom_error_stays_below_half_step_for_arbitrary_motion() {
        // The offset integer recenters the window, so the codec tracks any
        // value sequence (not just contractive trajectories) with error
        // <= delta_k / 2, up to rounding noise at the data's magnitude
        // (values here stay within +-20, so 21 bounds the tracked scale).
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let alpha = rng.gen_range(0.55..0.98);
            let l = rng.gen_range(1..20u32);
            let mut s = CodecStream::qa(alpha, l).unwrap();
            let mut d = s.decoder();
            let mut v = rng.gen_range(-(l as f64) * alpha * 0.999..(l as f64) * alpha * 0.999);
            for k in 0..200 {
                let delta = s.next_delta().unwrap();
                let ideal = alpha.powi(k as i32 + 1);
                assert!(delta >= ideal, "saturation only ever widens the step");
                assert!(
                    delta <= ideal.max(8.0 * f64::EPSILON * 21.0),
                    "floor {delta} larger than the data scale warrants at k={k}"
                );
                let e = s.encode(v).unwrap();
                let q = d.decode(&e).unwrap();
                let err = (v - q).abs();
                let tol = 0.5 * delta + 8.0 * f64::EPSILON * 21.0;
                assert!(err <= tol, "err {err} > {tol} at k={k} (delta {delta})");
                v = rng.gen_range(-20.0..20.0); // wild jumps: offsets absorb them
            }
        }
    }

    #[test]
    fn decoder_replay_reproduces_quantized_sequence() {
        let mut s = CodecStream::qa(0.8, 3).unwrap();
        let mut live = s.decoder();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut v = 0.5;
        let mut symbols = Vec::new();
        let mut recons = Vec::new();
        for _ in 0..300 {
            let e = s.encode(v).unwrap();
            recons.push(live.decode(&e).unwrap());
            symbols.push(e);
            v += rng.gen_range(-1.0..1.0);
        }
        // A fresh decoder fed the same symbols produces bit-identical output.
        let mut replay = s.decoder();
        for (e, want) in symbols.iter().zip(&recons) {
            let got = replay.decode(e).unwrap();
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn decoder_rejects_desynced_symbols() {
        let mut s = CodecStream::qa(0.9, 2).unwrap();
        let e0 = s.encode(0.1).unwrap();
        let mut d = s.decoder();
        d.decode(&e0).unwrap();
        // Replaying step 0 into a decoder at step 1 is a desync.
        assert!(matches!(d.decode(&e0), Err(Error::Desync { .. })));
        // An index outside the alphabet is a desync.
        let mut d2 = s.decoder();
        let mut bad = e0;
        bad.symbol.index = 99;
        assert!(matches!(d2.decode(&bad), Err(Error::Desync { .. })));
    }

    #[test]
    fn zoom_step_saturates_instead_of_underflowing() {
        // alpha = 0.1 drives alpha^(k+1) below f64 resolution within ~15
        // steps. The step size must saturate at the fp floor and keep
        // tracking, with the alphabet (and so the bit charge) unchanged.
        let mut s = CodecStream::qa(0.1, 4).unwrap();
        let mut d = s.decoder();
        let v = 0.3;
        let mut q = 0.0;
        for k in 0..400 {
            let e = s.encode(v).unwrap();
            q = d.decode(&e).unwrap();
            assert!(e.offset.abs() <= 2, "saturated offset stays small, got {}", e.offset);
            if k >= 1 {
                assert_eq!(e.bits, Some(6)); // ceil(log2(2 * ceil(2/0.1))) always
            }
        }
        // The tracked magnitude stays at 1, so the floor is exactly 8 eps,
        // and the held value is reproduced to within one saturated step.
        let floor = 8.0 * f64::EPSILON;
        assert_eq!(s.next_delta().unwrap(), floor);
        assert!(
            (v - q).abs() <= floor,
            "terminal err {} above the fp floor {floor}",
            (v - q).abs()
        );
    }

    #[test]
    fn passthrough_is_identity_with_unbounded_rate() {
        let mut s = CodecStream::passthrough();
        let mut d = s.decoder();
        for v in [1.234, -7.5, 0.0, 3.9e300] {
            let e = s.encode(v).unwrap();
            assert_eq!(e.bits, None);
            assert_eq!(d.decode(&e).unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(s.alphabet_size(), None);
    }

    #[test]
    fn static_uniform_worked_examples() {
        let mut s = CodecStream::static_uniform(1.0, 1).unwrap();
        let mut d = s.decoder();
        let e = s.encode(0.3).unwrap();
        assert_eq!(d.decode(&e).unwrap(), 0.5);
        let e = s.encode(5.0).unwrap(); // clamps to top cell
        assert_eq!(d.decode(&e).unwrap(), 0.5);
        let e = s.encode(-0.3).unwrap();
        assert_eq!(d.decode(&e).unwrap(), -0.5);
        assert_eq!(e.bits, Some(1));
    }

    #[test]
    fn static_uniform_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let range = rng.gen_range(0.5..10.0);
            let bits = rng.gen_range(1..12u32);
            let mut s = CodecStream::static_uniform(range, bits).unwrap();
            let mut d = s.decoder();
            for _ in 0..100 {
                let v = rng.gen_range(-range..range);
                let e = s.encode(v).unwrap();
                let q = d.decode(&e).unwrap();
                assert!((v - q).abs() <= range / (1u64 << bits) as f64 + f64::EPSILON);
            }
        }
    }

    #[test]
    fn rate_summary_matches_hand_accounting() {
        // 15 variables, 4-bit start step then 3 bits for 499 steps:
        // (1/500) * 15 * (4 + 3*499) = 45.03 bits/step.
        let mut ledger = RateLedger::new(10, 5);
        let fake = |step: usize, bits: u32| Encoded {
            step,
            offset: 0,
            symbol: Symbol { index: 0 },
            bits: Some(bits),
            carries_offset: step >= 1,
            raw: None,
        };
        for k in 0..500 {
            let b = if k == 0 { 4 } else { 3 };
            for i in 0..10 {
                ledger.record_x(i, &fake(k, b)).unwrap();
            }
            for j in 0..5 {
                ledger.record_lambda(j, &fake(k, b)).unwrap();
            }
        }
        let s = rate_summary(&ledger, 500, None).unwrap();
        assert!((s.r_q_bits - 45.03).abs() <= 1e-12);
        assert!((s.r_q_bits - 45.0).abs() <= 0.1);
        // Unit consistency is exact by construction.
        assert_eq!(s.r_q_nats.to_bits(), (s.r_q_bits * std::f64::consts::LN_2).to_bits());
        assert!((s.r_x_bits - 30.02).abs() <= 1e-12);
        assert!((s.r_lambda_bits - 15.01).abs() <= 1e-12);
    }

    #[test]
    fn rate_summary_single_binary_stream() {
        let mut ledger = RateLedger::new(1, 1);
        for k in 0..100 {
            let e = Encoded {
                step: k,
                offset: 0,
                symbol: Symbol { index: 0 },
                bits: Some(1),
                carries_offset: false,
                raw: None,
            };
            ledger.record_x(0, &e).unwrap();
            ledger.record_lambda(0, &e).unwrap();
        }
        let s = rate_summary(&ledger, 100, None).unwrap();
        assert_eq!(s.r_x_nats, std::f64::consts::LN_2);
    }

    #[test]
    fn rate_summary_offset_surcharge() {
        let mut ledger = RateLedger::new(1, 1);
        for k in 0..10 {
            let e = Encoded {
                step: k,
                offset: 0,
                symbol: Symbol { index: 0 },
                bits: Some(3),
                carries_offset: k >= 1,
                raw: None,
            };
            ledger.record_x(0, &e).unwrap();
            ledger.record_lambda(0, &e).unwrap();
        }
        // cap 2 -> ceil(log2 5) = 3 extra bits on each of the 9 offset steps, per side.
        let s = rate_summary(&ledger, 10, Some(2)).unwrap();
        assert_eq!(s.offset_surcharge_bits, 3);
        assert!((s.r_x_bits - (30.0 + 27.0) / 10.0).abs() <= 1e-12);
        // cap 0 -> no motion -> no extra bits.
        let s0 = rate_summary(&ledger, 10, Some(0)).unwrap();
        assert_eq!(s0.offset_surcharge_bits, 0);
        assert!((s0.r_x_bits - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn rate_summary_errors_and_infinities() {
        let ledger = RateLedger::new(2, 1);
        assert!(matches!(rate_summary(&ledger, 1, None), Err(Error::EmptyLedger)));
        assert!(matches!(rate_summary(&ledger, 0, None), Err(Error::EmptyLedger)));

        let mut ledger = RateLedger::new(1, 1);
        let pt = Encoded {
            step: 0,
            offset: 0,
            symbol: Symbol { index: 0 },
            bits: None,
            carries_offset: false,
            raw: Some(1.0),
        };
        ledger.record_x(0, &pt).unwrap();
        ledger.record_lambda(0, &pt).unwrap();
        let s = rate_summary(&ledger, 1, None).unwrap();
        assert!(!s.is_finite());
        assert!(s.r_q_nats.is_infinite());
    }

    #[test]
    fn ledger_totals_equal_sum_of_widths() {
        let mut s = CodecStream::qa(0.9, 5).unwrap();
        let mut ledger = RateLedger::new(1, 0);
        let mut want = 0u64;
        let mut v = 1.0;
        for _ in 0..50 {
            let e = s.encode(v).unwrap();
            want += e.bits.unwrap() as u64;
            ledger.record_x(0, &e).unwrap();
            v *= 0.9;
        }
        assert_eq!(ledger.total_bits_x(50, 0), Some(want));
    }

    #[test]
    fn symbol_trace_round_trips_through_csv() {
        let mut s = CodecStream::qa(0.85, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut v = 0.2;
        let mut rows = Vec::new();
        for _ in 0..40 {
            rows.push(s.encode(v).unwrap());
            v += rng.gen_range(-0.5..0.5);
        }
        let mut buf = Vec::new();
        write_symbol_trace(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();

        // Parse the CSV back and replay through a fresh decoder.
        let mut replayed = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let mut parts = line.split(',');
            let k: usize = parts.next().unwrap().parse().unwrap();
            let offset: i64 = parts.next().unwrap().parse().unwrap();
            let cell: u32 = parts.next().unwrap().parse().unwrap();
            let bits: u32 = parts.next().unwrap().parse().unwrap();
            assert_eq!(k, lineno - 1);
            replayed.push(Encoded {
                step: k,
                offset,
                symbol: Symbol { index: cell },
                bits: Some(bits),
                carries_offset: k >= 1,
                raw: None,
            });
        }
        let mut from_trace = s.decoder();
        let mut live = s.decoder();
        for (orig, rep) in rows.iter().zip(&replayed) {
            let a = live.decode(orig).unwrap();
            let b = from_trace.decode(rep).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn param_validation() {
        assert!(matches!(CodecStream::qa(1.0, 5), Err(Error::Param(_))));
        assert!(matches!(CodecStream::qa(0.0, 5), Err(Error::Param(_))));
        assert!(matches!(CodecStream::qa(0.5, 0), Err(Error::Param(_))));
        assert!(matches!(CodecStream::static_uniform(0.0, 3), Err(Error::Param(_))));
        assert!(matches!(CodecStream::static_uniform(1.0, 0), Err(Error::Param(_))));
        assert!(matches!(CodecStream::static_uniform(1.0, 40), Err(Error::Param(_))));
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(6), 3);
        assert_eq!(ceil_log2(10), 4);
        assert_eq!(ceil_log2(1 << 20), 20);
        assert_eq!(ceil_log2((1 << 20) + 1), 21);
    }
}
