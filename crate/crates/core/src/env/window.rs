//! Realized conductance fields on finite space-time windows.
//!
//! Generation is a pure function of `(spec, base_seed, edge, time cell)`:
//! switching processes are realized through their uniformized representation
//! (a stationary Poisson stream of resample ticks carrying i.i.d. marks), so
//! the state at any time is recoverable from finitely many nearby cells.
//! That makes regeneration, window extension and space-time shift views exact
//! by construction.

use std::fmt;
use std::sync::Arc;

use crate::env::spec::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::rng::{self, derive_key, word_from_i64, Substream};

/// An undirected nearest-neighbor edge, identified by its left vertex:
/// `Edge { left_vertex: x }` is the pair `(x, x+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub left_vertex: i64,
}

impl Edge {
    pub fn new(left_vertex: i64) -> Self {
        Edge { left_vertex }
    }

    pub fn right_vertex(&self) -> i64 {
        self.left_vertex + 1
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.left_vertex, self.left_vertex + 1)
    }
}

/// Piecewise-constant rate history of one edge on a closed time interval.
///
/// `values[i]` applies on `[breakpoints[i], breakpoints[i+1])`; the final
/// value also applies at the right endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTrack {
    pub edge: Edge,
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl RateTrack {
    pub fn constant(edge: Edge, t_min: f64, t_max: f64, value: f64) -> Self {
        RateTrack {
            edge,
            breakpoints: vec![t_min, t_max],
            values: vec![value],
        }
    }

    pub fn t_min(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn validate(&self, allow_zero: bool) -> Result<()> {
        if self.breakpoints.len() < 2 || self.values.len() + 1 != self.breakpoints.len() {
            return Err(Error::config("rate track shape mismatch"));
        }
        if !self.breakpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("rate track breakpoints must increase strictly"));
        }
        let floor = if allow_zero { 0.0 } else { f64::MIN_POSITIVE };
        if !self.values.iter().all(|v| *v >= floor && v.is_finite()) {
            return Err(Error::config("rate track values must be positive and finite"));
        }
        Ok(())
    }

    /// Right-continuous lookup; the closing endpoint returns the last value.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        if t < self.t_min() || t > self.t_max() {
            return Err(Error::range(format!(
                "time {t} outside track range [{}, {}] of edge {}",
                self.t_min(),
                self.t_max(),
                self.edge
            )));
        }
        // index of last breakpoint <= t
        let idx = match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Ok(self.values[idx.min(self.values.len() - 1)])
    }

    /// Exact integral of the rate over `[t0, t1]`.
    pub fn integrated(&self, t0: f64, t1: f64) -> Result<f64> {
        if t1 < t0 {
            return Err(Error::range(format!("reversed interval [{t0}, {t1}]")));
        }
        if t0 < self.t_min() || t1 > self.t_max() {
            return Err(Error::range(format!(
                "interval [{t0}, {t1}] outside track range [{}, {}]",
                self.t_min(),
                self.t_max()
            )));
        }
        let mut total = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let lo = self.breakpoints[i].max(t0);
            let hi = self.breakpoints[i + 1].min(t1);
            if hi > lo {
                total += v * (hi - lo);
            }
        }
        Ok(total)
    }

    /// Pieces of `[t0, t1]` as `(start, end, value)`.
    pub fn pieces(&self, t0: f64, t1: f64) -> Result<Vec<(f64, f64, f64)>> {
        if t1 < t0 || t0 < self.t_min() || t1 > self.t_max() {
            return Err(Error::range(format!(
                "interval [{t0}, {t1}] outside track range [{}, {}]",
                self.t_min(),
                self.t_max()
            )));
        }
        let mut out = Vec::new();
        for (i, &v) in self.values.iter().enumerate() {
            let lo = self.breakpoints[i].max(t0);
            let hi = self.breakpoints[i + 1].min(t1);
            if hi > lo || (lo == hi && t0 == t1 && lo == t0) {
                if hi > lo {
                    out.push((lo, hi, v));
                }
            }
        }
        Ok(out)
    }
}

/// How switching environments are driven: a Poisson stream of resample ticks
/// at `tick_rate`, each carrying a fresh mark from the spec's mark law.
#[derive(Debug, Clone, Copy)]
struct SwitchingModel {
    tick_rate: f64,
    /// All edges share one stream when the field is spatially homogeneous.
    shared: bool,
}

const HOMOGENEOUS_EDGE_WORD: u64 = u64::MAX;
const STATIC_DRAW_WORD: u64 = 0xA001;
const CELL_STREAM_WORD: u64 = 0xA002;

/// Maximum cells scanned backwards to locate the state before a time.
const MAX_STATE_SCAN_CELLS: i64 = 10_000_000;

fn switching_model(kind: &EnvKind) -> Option<SwitchingModel> {
    match *kind {
        EnvKind::OnOffSwitching {
            rate_on, rate_off, ..
        } => Some(SwitchingModel {
            tick_rate: rate_on + rate_off,
            shared: false,
        }),
        EnvKind::HomogeneousInSpace { switch_rate, .. } => Some(SwitchingModel {
            tick_rate: switch_rate,
            shared: true,
        }),
        EnvKind::HomogeneousHeavyUpper { .. } => Some(SwitchingModel {
            tick_rate: 1.0,
            shared: true,
        }),
        _ => None,
    }
}

fn sample_mark(kind: &EnvKind, stream: &mut Substream) -> f64 {
    match *kind {
        EnvKind::OnOffSwitching {
            rate_on,
            rate_off,
            low,
            high,
        } => {
            // stationary mark law of the uniformized two-state chain
            if stream.next_f64() < rate_off / (rate_on + rate_off) {
                high
            } else {
                low
            }
        }
        EnvKind::HomogeneousInSpace { ref law, .. } => law.sample(stream),
        EnvKind::HomogeneousHeavyUpper { pareto_alpha } => {
            crate::env::spec::LevelLaw::Pareto {
                alpha: pareto_alpha,
            }
            .sample(stream)
        }
        _ => unreachable!("mark sampling only applies to switching kinds"),
    }
}

fn static_edge_value(kind: &EnvKind, base_seed: u64, edge: Edge) -> f64 {
    match *kind {
        EnvKind::Constant { c } => c,
        EnvKind::StaticIid { ref law } => {
            let mut s = Substream::from_context(
                base_seed,
                &[rng::stream::ENV, word_from_i64(edge.left_vertex), STATIC_DRAW_WORD],
            );
            law.sample(&mut s)
        }
        EnvKind::StaticHeavyInverse { exponent, offset } => {
            let mut s = Substream::from_context(
                base_seed,
                &[rng::stream::ENV, word_from_i64(edge.left_vertex), STATIC_DRAW_WORD],
            );
            s.next_f64_open().powf(exponent) + offset
        }
        _ => unreachable!("not a static kind"),
    }
}

/// Resample ticks in time cell `[cell, cell+1)`: sorted times with marks.
fn cell_ticks(
    spec: &EnvSpec,
    base_seed: u64,
    model: SwitchingModel,
    edge: Edge,
    cell: i64,
) -> Vec<(f64, f64)> {
    let edge_word = if model.shared {
        HOMOGENEOUS_EDGE_WORD
    } else {
        word_from_i64(edge.left_vertex)
    };
    let mut s = Substream::from_context(
        base_seed,
        &[
            rng::stream::ENV,
            edge_word,
            CELL_STREAM_WORD,
            word_from_i64(cell),
        ],
    );
    let count = s.poisson_small(model.tick_rate) as usize;
    let mut ticks: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let t = cell as f64 + s.next_f64();
            let mark = sample_mark(&spec.kind, &mut s);
            (t, mark)
        })
        .collect();
    ticks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    ticks
}

/// Mark of the latest tick at or before `t`, scanning cells backwards.
fn state_at(
    spec: &EnvSpec,
    base_seed: u64,
    model: SwitchingModel,
    edge: Edge,
    t: f64,
) -> Result<f64> {
    let start_cell = t.floor() as i64;
    let mut cell = start_cell;
    loop {
        let ticks = cell_ticks(spec, base_seed, model, edge, cell);
        let hit = ticks
            .iter()
            .rev()
            .find(|(tick, _)| *tick <= t)
            .map(|&(_, mark)| mark);
        if let Some(mark) = hit {
            return Ok(mark);
        }
        cell -= 1;
        if start_cell - cell > MAX_STATE_SCAN_CELLS {
            return Err(Error::config(format!(
                "no switching event found within {MAX_STATE_SCAN_CELLS} cells before t = {t}; \
                 switch rate too small for this construction"
            )));
        }
    }
}

/// Generates the track of one edge on `[t_min, t_max]`, merging consecutive
/// ticks that do not change the value.
fn generate_track(
    spec: &EnvSpec,
    base_seed: u64,
    edge: Edge,
    t_min: f64,
    t_max: f64,
) -> Result<RateTrack> {
    match switching_model(&spec.kind) {
        None => Ok(RateTrack::constant(
            edge,
            t_min,
            t_max,
            static_edge_value(&spec.kind, base_seed, edge),
        )),
        Some(model) => {
            let mut breakpoints = vec![t_min];
            let mut values = vec![state_at(spec, base_seed, model, edge, t_min)?];
            let first_cell = t_min.floor() as i64;
            let last_cell = t_max.floor() as i64;
            for cell in first_cell..=last_cell {
                for (t, mark) in cell_ticks(spec, base_seed, model, edge, cell) {
                    if t <= t_min || t >= t_max {
                        continue;
                    }
                    if mark != *values.last().unwrap() {
                        breakpoints.push(t);
                        values.push(mark);
                    }
                }
            }
            breakpoints.push(t_max);
            Ok(RateTrack {
                edge,
                breakpoints,
                values,
            })
        }
    }
}

/// Immutable realized field over an absolute space-time region.
#[derive(Debug)]
pub(crate) struct FieldStore {
    pub spec: EnvSpec,
    pub base_seed: u64,
    pub x_min: i64,
    pub x_max: i64,
    pub t_min: f64,
    pub t_max: f64,
    /// Tracks for edges with left vertex `x_min .. x_max - 1`, absolute time.
    tracks: Vec<RateTrack>,
}

impl FieldStore {
    fn build(spec: EnvSpec, x_min: i64, x_max: i64, t_min: f64, t_max: f64, base_seed: u64) -> Result<Self> {
        spec.validate()?;
        if x_min >= x_max {
            return Err(Error::config(format!(
                "empty spatial window [{x_min}, {x_max}]"
            )));
        }
        if !(t_min < t_max) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::config(format!("empty time window [{t_min}, {t_max}]")));
        }
        let allow_zero = spec.out_of_theory;
        let tracks: Vec<RateTrack> = (x_min..x_max)
            .map(|left| generate_track(&spec, base_seed, Edge::new(left), t_min, t_max))
            .collect::<Result<_>>()?;
        for track in &tracks {
            track.validate(allow_zero)?;
        }
        Ok(FieldStore {
            spec,
            base_seed,
            x_min,
            x_max,
            t_min,
            t_max,
            tracks,
        })
    }

    fn track(&self, edge: Edge) -> Result<&RateTrack> {
        if edge.left_vertex < self.x_min || edge.left_vertex >= self.x_max {
            return Err(Error::range(format!(
                "edge {edge} outside window vertices [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        Ok(&self.tracks[(edge.left_vertex - self.x_min) as usize])
    }
}

/// Recorded accumulated space-time shift of a view.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShiftOffset {
    pub time: f64,
    pub space: i64,
}

/// A realized conductance field on a finite window, with space-time shift
/// views. Immutable and cheap to clone; safe to share across threads.
#[derive(Debug, Clone)]
pub struct EnvironmentWindow {
    store: Arc<FieldStore>,
    offset: ShiftOffset,
}

impl EnvironmentWindow {
    /// Draws the window `[x_min, x_max] x [t_min, t_max]` from the spec's law.
    ///
    /// Randomness is position-addressable: enlarging the window or building a
    /// second copy from the same `(spec, base_seed)` reproduces identical
    /// values on the overlap.
    pub fn build(
        spec: &EnvSpec,
        x_min: i64,
        x_max: i64,
        t_min: f64,
        t_max: f64,
        base_seed: u64,
    ) -> Result<Self> {
        Ok(EnvironmentWindow {
            store: Arc::new(FieldStore::build(
                spec.clone(),
                x_min,
                x_max,
                t_min,
                t_max,
                base_seed,
            )?),
            offset: ShiftOffset::default(),
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.store.spec
    }

    pub fn base_seed(&self) -> u64 {
        self.store.base_seed
    }

    pub fn shift_offset(&self) -> ShiftOffset {
        self.offset
    }

    /// Smallest vertex queryable in view coordinates.
    pub fn x_min(&self) -> i64 {
        self.store.x_min - self.offset.space
    }

    pub fn x_max(&self) -> i64 {
        self.store.x_max - self.offset.space
    }

    pub fn t_min(&self) -> f64 {
        self.store.t_min - self.offset.time
    }

    pub fn t_max(&self) -> f64 {
        self.store.t_max - self.offset.time
    }

    #[inline]
    fn abs_edge(&self, edge: Edge) -> Edge {
        Edge::new(edge.left_vertex + self.offset.space)
    }

    #[inline]
    fn abs_time(&self, t: f64) -> f64 {
        t + self.offset.time
    }

    /// The rate of `edge` at time `t` (right-continuous in `t`).
    pub fn rate_at(&self, edge: Edge, t: f64) -> Result<f64> {
        self.store.track(self.abs_edge(edge))?.value_at(self.abs_time(t))
    }

    /// Exact integral of the rate over `[t0, t1]`.
    pub fn integrated_rate(&self, edge: Edge, t0: f64, t1: f64) -> Result<f64> {
        self.store
            .track(self.abs_edge(edge))?
            .integrated(self.abs_time(t0), self.abs_time(t1))
    }

    /// The view with `(shifted) rate_at(x, t) = rate_at(x + y, t + s)`.
    /// Shares the realized field; composition accumulates offsets.
    pub fn shift_view(&self, s: f64, y: i64) -> Self {
        EnvironmentWindow {
            store: Arc::clone(&self.store),
            offset: ShiftOffset {
                time: self.offset.time + s,
                space: self.offset.space + y,
            },
        }
    }

    /// Deterministically regenerates a larger window (same spec and seed);
    /// view coordinates and offsets are preserved.
    pub fn extended(&self, x_min: i64, x_max: i64, t_min: f64, t_max: f64) -> Result<Self> {
        let s = &self.store;
        let store = FieldStore::build(
            s.spec.clone(),
            s.x_min.min(x_min + self.offset.space),
            s.x_max.max(x_max + self.offset.space),
            s.t_min.min(t_min + self.offset.time),
            s.t_max.max(t_max + self.offset.time),
            s.base_seed,
        )?;
        Ok(EnvironmentWindow {
            store: Arc::new(store),
            offset: self.offset,
        })
    }

    /// Track pieces covering `[t0, t1]` in view coordinates.
    pub fn pieces(&self, edge: Edge, t0: f64, t1: f64) -> Result<Vec<(f64, f64, f64)>> {
        let abs = self
            .store
            .track(self.abs_edge(edge))?
            .pieces(self.abs_time(t0), self.abs_time(t1))?;
        Ok(abs
            .into_iter()
            .map(|(a, b, v)| (a - self.offset.time, b - self.offset.time, v))
            .collect())
    }

    /// First time `u >= t_start` with `int_{t_start}^{u} rate = target`,
    /// walking the piecewise-constant track upward. Returns `None` when the
    /// mass to `cap` is insufficient.
    pub fn invert_mass_up(
        &self,
        edge: Edge,
        t_start: f64,
        target: f64,
        cap: f64,
    ) -> Result<Option<f64>> {
        debug_assert!(target >= 0.0);
        if target == 0.0 {
            return Ok(Some(t_start));
        }
        let track = self.store.track(self.abs_edge(edge))?;
        let a = self.abs_time(t_start);
        let b = self.abs_time(cap);
        if a < track.t_min() || b > track.t_max() || b < a {
            return Err(Error::range(format!(
                "inversion interval [{t_start}, {cap}] outside track range"
            )));
        }
        let mut remaining = target;
        // locate starting piece
        let mut idx = match track
            .breakpoints
            .binary_search_by(|p| p.partial_cmp(&a).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        }
        .min(track.values.len() - 1);
        let mut lo = a;
        while idx < track.values.len() {
            let hi = track.breakpoints[idx + 1].min(b);
            if hi <= lo {
                break;
            }
            let v = track.values[idx];
            let mass = v * (hi - lo);
            if mass >= remaining {
                return Ok(Some((lo + remaining / v) - self.offset.time));
            }
            remaining -= mass;
            lo = hi;
            if hi >= b {
                break;
            }
            idx += 1;
        }
        Ok(None)
    }

    /// First time `u <= t_start` with `int_{u}^{t_start} rate = target`,
    /// walking the track downward. Returns `None` when the mass to `floor`
    /// is insufficient.
    pub fn invert_mass_down(
        &self,
        edge: Edge,
        t_start: f64,
        target: f64,
        floor: f64,
    ) -> Result<Option<f64>> {
        debug_assert!(target >= 0.0);
        if target == 0.0 {
            return Ok(Some(t_start));
        }
        let track = self.store.track(self.abs_edge(edge))?;
        let a = self.abs_time(t_start);
        let b = self.abs_time(floor);
        if b < track.t_min() || a > track.t_max() || a < b {
            return Err(Error::range(format!(
                "inversion interval [{floor}, {t_start}] outside track range"
            )));
        }
        let mut remaining = target;
        let mut idx = match track
            .breakpoints
            .binary_search_by(|p| p.partial_cmp(&a).unwrap())
        {
            Ok(i) => i.saturating_sub(1).min(track.values.len() - 1),
            Err(i) => i - 1,
        }
        .min(track.values.len() - 1);
        // when a sits exactly on a breakpoint, the piece below it is idx - 1;
        // handle via hi/lo clamping instead of index juggling
        let mut hi = a;
        loop {
            let lo = track.breakpoints[idx].max(b);
            if hi > lo {
                let v = track.values[idx];
                let mass = v * (hi - lo);
                if mass >= remaining {
                    return Ok(Some((hi - remaining / v) - self.offset.time));
                }
                remaining -= mass;
                hi = lo;
            }
            if hi <= b || idx == 0 {
                break;
            }
            idx -= 1;
        }
        Ok(None)
    }

    /// Switch events of one edge strictly inside `(t0, t1)`, ascending, as
    /// `(time, new_value)`. Value changes only; no-op resamples are skipped.
    pub fn edge_events_up(&self, edge: Edge, t0: f64, t1: f64) -> Result<Vec<(f64, f64)>> {
        let pieces = self.pieces(edge, t0, t1)?;
        Ok(pieces
            .windows(2)
            .map(|w| (w[1].0, w[1].2))
            .collect())
    }

    /// Portable text dump: header with spec hash and seed, then one line per
    /// edge listing breakpoints and values (view coordinates).
    pub fn dump(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "# condwalk environment dump v1");
        let _ = writeln!(out, "# spec_hash = {:016x}", self.spec().content_hash());
        let _ = writeln!(out, "# base_seed = {}", self.base_seed());
        let _ = writeln!(out, "# x_range = [{}, {}]", self.x_min(), self.x_max());
        let _ = writeln!(out, "# t_range = [{}, {}]", self.t_min(), self.t_max());
        for left in self.x_min()..self.x_max() {
            let track = self
                .store
                .track(self.abs_edge(Edge::new(left)))
                .expect("in-range edge");
            let bps: Vec<String> = track
                .breakpoints
                .iter()
                .map(|b| format!("{}", b - self.offset.time))
                .collect();
            let vals: Vec<String> = track.values.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{left}\t{}\t{}", bps.join(","), vals.join(","));
        }
        out
    }
}

/// Derives the per-path environment seed for annealed ensembles.
pub fn annealed_env_seed(master_seed: u64, path_index: u64) -> u64 {
    derive_key(master_seed, &[rng::stream::ANNEALED_ENV, path_index])
}

// ---------------------------------------------------------------------------
// Lazy field access for solver sweeps.
//
// Long Kolmogorov sweeps cover time ranges far beyond what is reasonable to
// materialize as tracks. Because generation is position-addressable, the
// solvers instead read the field through the cursors below, which regenerate
// switch events cell by cell and agree bit-exactly with materialized tracks.
// ---------------------------------------------------------------------------

impl EnvironmentWindow {
    /// Rate lookup through the pure generator, ignoring the materialized
    /// window bounds (deterministic extension).
    pub fn rate_at_unbounded(&self, edge: Edge, t: f64) -> Result<f64> {
        let s = &self.store;
        let abs_edge = self.abs_edge(edge);
        let abs_t = self.abs_time(t);
        match switching_model(&s.spec.kind) {
            None => Ok(static_edge_value(&s.spec.kind, s.base_seed, abs_edge)),
            Some(model) => state_at(&s.spec, s.base_seed, model, abs_edge, abs_t),
        }
    }

    /// Ascending switch events of one edge strictly inside `(t0, t1)`, lazily
    /// regenerated. Yields `(time, new_value)` in view coordinates.
    pub fn switch_cursor_up(&self, edge: Edge, t0: f64, t1: f64) -> Result<SwitchCursorUp> {
        let s = &self.store;
        let abs_edge = self.abs_edge(edge);
        let a = self.abs_time(t0);
        let b = self.abs_time(t1);
        let model = switching_model(&s.spec.kind);
        let last_value = match model {
            None => static_edge_value(&s.spec.kind, s.base_seed, abs_edge),
            Some(m) => state_at(&s.spec, s.base_seed, m, abs_edge, a)?,
        };
        Ok(SwitchCursorUp {
            store: Arc::clone(&self.store),
            model,
            edge: abs_edge,
            cell: a.floor() as i64,
            idx: 0,
            ticks: model
                .map(|m| cell_ticks(&s.spec, s.base_seed, m, abs_edge, a.floor() as i64))
                .unwrap_or_default(),
            t0_abs: a,
            t1_abs: b,
            last_value,
            offset_time: self.offset.time,
            primed: false,
        })
    }

    /// Descending switch events of one edge strictly inside `(t_lo, t_hi)`,
    /// lazily regenerated. Yields `(time, value_below)` in view coordinates:
    /// crossing downward past `time`, the rate becomes `value_below`.
    pub fn switch_cursor_down(&self, edge: Edge, t_hi: f64, t_lo: f64) -> Result<SwitchCursorDown> {
        let s = &self.store;
        let abs_edge = self.abs_edge(edge);
        let hi = self.abs_time(t_hi);
        let lo = self.abs_time(t_lo);
        let model = switching_model(&s.spec.kind);
        let mut cursor = SwitchCursorDown {
            store: Arc::clone(&self.store),
            model,
            edge: abs_edge,
            scan: None,
            pending: None,
            lo_abs: lo,
            offset_time: self.offset.time,
            done: model.is_none(),
        };
        if let Some(m) = model {
            // latest tick at or below hi seeds the scan
            cursor.pending = cursor.scan_down_from(m, hi)?;
            if cursor
                .pending
                .map(|(t, _)| t <= cursor.lo_abs)
                .unwrap_or(true)
            {
                cursor.done = true;
            }
        }
        Ok(cursor)
    }

    /// True when every edge shares one switching track.
    pub fn spatially_homogeneous(&self) -> bool {
        self.store.spec.spatially_homogeneous()
    }
}

/// See [`EnvironmentWindow::switch_cursor_up`].
pub struct SwitchCursorUp {
    store: Arc<FieldStore>,
    model: Option<SwitchingModel>,
    edge: Edge,
    cell: i64,
    idx: usize,
    ticks: Vec<(f64, f64)>,
    t0_abs: f64,
    t1_abs: f64,
    last_value: f64,
    offset_time: f64,
    primed: bool,
}

impl SwitchCursorUp {
    /// Initial value at the cursor's start time.
    pub fn initial_value(&self) -> f64 {
        self.last_value
    }

    pub fn next_event(&mut self) -> Option<(f64, f64)> {
        let model = self.model?;
        let last_cell = self.t1_abs.floor() as i64;
        loop {
            if !self.primed {
                // skip ticks at or before t0 in the first cell
                while self.idx < self.ticks.len() && self.ticks[self.idx].0 <= self.t0_abs {
                    self.idx += 1;
                }
                self.primed = true;
            }
            while self.idx < self.ticks.len() {
                let (t, mark) = self.ticks[self.idx];
                self.idx += 1;
                if t >= self.t1_abs {
                    return None;
                }
                if mark != self.last_value {
                    self.last_value = mark;
                    return Some((t - self.offset_time, mark));
                }
            }
            if self.cell >= last_cell {
                return None;
            }
            self.cell += 1;
            self.ticks = cell_ticks(&self.store.spec, self.store.base_seed, model, self.edge, self.cell);
            self.idx = 0;
        }
    }
}

/// See [`EnvironmentWindow::switch_cursor_down`].
pub struct SwitchCursorDown {
    store: Arc<FieldStore>,
    model: Option<SwitchingModel>,
    edge: Edge,
    /// Backward scan position: `(cell, ticks, next index downward)`.
    scan: Option<(i64, Vec<(f64, f64)>, usize)>,
    /// Lowest tick seen so far: its crossing is the next candidate event.
    pending: Option<(f64, f64)>,
    lo_abs: f64,
    offset_time: f64,
    done: bool,
}

impl SwitchCursorDown {
    /// Latest tick strictly below the current scan position; seeds with the
    /// latest tick at or below `from` on the first call.
    fn scan_down_from(&mut self, model: SwitchingModel, from: f64) -> Result<Option<(f64, f64)>> {
        let spec = &self.store.spec;
        let seed = self.store.base_seed;
        if self.scan.is_none() {
            let cell = from.floor() as i64;
            let ticks = cell_ticks(spec, seed, model, self.edge, cell);
            // position after the last tick <= from
            let idx = ticks.iter().take_while(|(t, _)| *t <= from).count();
            self.scan = Some((cell, ticks, idx));
        }
        let (mut cell, mut ticks, mut idx) = self.scan.take().unwrap();
        let start_cell = cell;
        loop {
            if idx > 0 {
                idx -= 1;
                let hit = ticks[idx];
                self.scan = Some((cell, ticks, idx));
                return Ok(Some(hit));
            }
            cell -= 1;
            if start_cell - cell > MAX_STATE_SCAN_CELLS {
                return Err(Error::config(format!(
                    "no switching event found within {MAX_STATE_SCAN_CELLS} cells below t = {from}"
                )));
            }
            ticks = cell_ticks(spec, seed, model, self.edge, cell);
            idx = ticks.len();
        }
    }

    pub fn next_event(&mut self) -> Result<Option<(f64, f64)>> {
        if self.done {
            return Ok(None);
        }
        let model = self.model.expect("done is set for static kinds");
        loop {
            let (pend_t, pend_mark) = self.pending.expect("pending set while not done");
            let from = pend_t;
            let below = self.scan_down_from(model, from)?;
            let (below_t, below_mark) = below.expect("scan always finds a tick or errors");
            if below_mark != pend_mark {
                self.pending = Some((below_t, below_mark));
                if below_t <= self.lo_abs {
                    self.done = true;
                }
                return Ok(Some((pend_t - self.offset_time, below_mark)));
            }
            self.pending = Some((below_t, below_mark));
            if below_t <= self.lo_abs {
                self.done = true;
                return Ok(None);
            }
        }
    }
}
