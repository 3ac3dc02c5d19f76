//! Constant-rate slice walkers.
//!
//! A solver window `[x_lo, x_hi]` needs the rate vector `b(x)` for every
//! vertex in the window, constant between consecutive switch events of any
//! in-window edge. The walkers merge the per-edge event cursors into a single
//! stream of slices, regenerating events lazily so arbitrarily long sweeps
//! never materialize tracks. Spatially homogeneous fields use one shared
//! cursor.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::env::{Edge, EnvironmentWindow, SwitchCursorDown, SwitchCursorUp};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Ascending walker over `[t0, t1]`.
pub(crate) struct SliceWalkerUp {
    b: Vec<f64>,
    cursors: Vec<SwitchCursorUp>,
    /// max-heap on `Reverse(time)` -> min-heap of (time, cursor index, value)
    heap: BinaryHeap<(std::cmp::Reverse<OrdF64>, usize, OrdF64)>,
    homogeneous: bool,
    t_cur: f64,
    t_end: f64,
}

impl SliceWalkerUp {
    pub fn new(
        env: &EnvironmentWindow,
        x_lo: i64,
        x_hi: i64,
        t0: f64,
        t1: f64,
    ) -> Result<Self> {
        debug_assert!(x_lo <= x_hi && t0 <= t1);
        let n = (x_hi - x_lo + 1) as usize;
        let mut b = Vec::with_capacity(n);
        for x in x_lo..=x_hi {
            b.push(env.rate_at_unbounded(Edge::new(x), t0)?);
        }
        let homogeneous = env.spatially_homogeneous();
        let mut cursors = Vec::new();
        let mut heap = BinaryHeap::new();
        let edges: Vec<i64> = if homogeneous {
            vec![x_lo]
        } else {
            (x_lo..=x_hi).collect()
        };
        for (idx, &x) in edges.iter().enumerate() {
            let mut cursor = env.switch_cursor_up(Edge::new(x), t0, t1)?;
            if let Some((te, val)) = cursor.next_event() {
                heap.push((std::cmp::Reverse(OrdF64(te)), idx, OrdF64(val)));
            }
            cursors.push(cursor);
        }
        Ok(SliceWalkerUp {
            b,
            cursors,
            heap,
            homogeneous,
            t_cur: t0,
            t_end: t1,
        })
    }

    pub fn rates(&self) -> &[f64] {
        &self.b
    }

    /// Next constant slice `[a, c]` with `a = `current time; `rates()` is
    /// valid for it. `None` once the walker reaches the end.
    pub fn next_slice(&mut self) -> Option<(f64, f64)> {
        // apply any events at or before the current time
        while let Some(&(std::cmp::Reverse(OrdF64(te)), idx, OrdF64(val))) = self.heap.peek() {
            if te > self.t_cur {
                break;
            }
            self.heap.pop();
            if self.homogeneous {
                for x in self.b.iter_mut() {
                    *x = val;
                }
            } else {
                self.b[idx] = val;
            }
            if let Some((t_next, v_next)) = self.cursors[idx].next_event() {
                self.heap
                    .push((std::cmp::Reverse(OrdF64(t_next)), idx, OrdF64(v_next)));
            }
        }
        if self.t_cur >= self.t_end {
            return None;
        }
        let t_next = self
            .heap
            .peek()
            .map(|&(std::cmp::Reverse(OrdF64(te)), _, _)| te)
            .unwrap_or(self.t_end)
            .min(self.t_end);
        let slice = (self.t_cur, t_next);
        self.t_cur = t_next;
        Some(slice)
    }
}

/// Descending walker over `[t_lo, t_hi]`, yielding slices from the top down.
pub(crate) struct SliceWalkerDown {
    b: Vec<f64>,
    cursors: Vec<SwitchCursorDown>,
    /// max-heap on time: the next event downward is the largest time
    heap: BinaryHeap<(OrdF64, usize, OrdF64)>,
    homogeneous: bool,
    t_cur: f64,
    t_lo: f64,
}

impl SliceWalkerDown {
    pub fn new(
        env: &EnvironmentWindow,
        x_lo: i64,
        x_hi: i64,
        t_hi: f64,
        t_lo: f64,
    ) -> Result<Self> {
        debug_assert!(x_lo <= x_hi && t_lo <= t_hi);
        let n = (x_hi - x_lo + 1) as usize;
        let mut b = Vec::with_capacity(n);
        for x in x_lo..=x_hi {
            b.push(env.rate_at_unbounded(Edge::new(x), t_hi)?);
        }
        let homogeneous = env.spatially_homogeneous();
        let mut cursors = Vec::new();
        let mut heap = BinaryHeap::new();
        let edges: Vec<i64> = if homogeneous {
            vec![x_lo]
        } else {
            (x_lo..=x_hi).collect()
        };
        for (idx, &x) in edges.iter().enumerate() {
            let mut cursor = env.switch_cursor_down(Edge::new(x), t_hi, t_lo)?;
            if let Some((te, val)) = cursor.next_event()? {
                heap.push((OrdF64(te), idx, OrdF64(val)));
            }
            cursors.push(cursor);
        }
        Ok(SliceWalkerDown {
            b,
            cursors,
            heap,
            homogeneous,
            t_cur: t_hi,
            t_lo,
        })
    }

    pub fn rates(&self) -> &[f64] {
        &self.b
    }

    /// Next constant slice `[a, c]` with `c` = current time, moving down.
    pub fn next_slice(&mut self) -> Result<Option<(f64, f64)>> {
        while let Some(&(OrdF64(te), idx, OrdF64(val))) = self.heap.peek() {
            if te < self.t_cur {
                break;
            }
            self.heap.pop();
            if self.homogeneous {
                for x in self.b.iter_mut() {
                    *x = val;
                }
            } else {
                self.b[idx] = val;
            }
            if let Some((t_next, v_next)) = self.cursors[idx].next_event()? {
                self.heap.push((OrdF64(t_next), idx, OrdF64(v_next)));
            }
        }
        if self.t_cur <= self.t_lo {
            return Ok(None);
        }
        let t_next = self
            .heap
            .peek()
            .map(|&(OrdF64(te), _, _)| te)
            .unwrap_or(self.t_lo)
            .max(self.t_lo);
        let slice = (t_next, self.t_cur);
        self.t_cur = t_next;
        Ok(Some(slice))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvSpec;

    #[test]
    fn up_walker_covers_interval_and_matches_tracks() {
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let env = EnvironmentWindow::build(&spec, -3, 4, 0.0, 25.0, 5).unwrap();
        let mut walker = SliceWalkerUp::new(&env, -3, 3, 1.0, 24.0).unwrap();
        let mut t_prev = 1.0;
        let mut slices = 0;
        while let Some((a, c)) = walker.next_slice() {
            assert_eq!(a, t_prev);
            assert!(c > a);
            let mid = 0.5 * (a + c);
            for (i, x) in (-3..=3).enumerate() {
                let want = env.rate_at(Edge::new(x), mid).unwrap();
                assert_eq!(walker.rates()[i], want, "mid-slice rate mismatch at {x}");
            }
            t_prev = c;
            slices += 1;
        }
        assert_eq!(t_prev, 24.0);
        assert!(slices > 10);
    }

    #[test]
    fn down_walker_covers_interval_and_matches_tracks() {
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let env = EnvironmentWindow::build(&spec, -3, 4, 0.0, 25.0, 5).unwrap();
        let mut walker = SliceWalkerDown::new(&env, -3, 3, 24.0, 1.0).unwrap();
        let mut t_prev = 24.0;
        while let Some((a, c)) = walker.next_slice().unwrap() {
            assert_eq!(c, t_prev);
            assert!(a < c);
            let mid = 0.5 * (a + c);
            for (i, x) in (-3..=3).enumerate() {
                let want = env.rate_at(Edge::new(x), mid).unwrap();
                assert_eq!(walker.rates()[i], want, "mid-slice rate mismatch at {x}");
            }
            t_prev = a;
        }
        assert_eq!(t_prev, 1.0);
    }

    #[test]
    fn up_and_down_see_the_same_slices() {
        let spec = EnvSpec::on_off(2.0, 1.0, 0.2, 0.9);
        let env = EnvironmentWindow::build(&spec, 0, 3, 0.0, 10.0, 9).unwrap();
        let mut up = SliceWalkerUp::new(&env, 0, 2, 0.0, 10.0).unwrap();
        let mut up_slices = Vec::new();
        while let Some(s) = up.next_slice() {
            up_slices.push((s, up.rates().to_vec()));
        }
        let mut down = SliceWalkerDown::new(&env, 0, 2, 10.0, 0.0).unwrap();
        let mut down_slices = Vec::new();
        while let Some(s) = down.next_slice().unwrap() {
            down_slices.push((s, down.rates().to_vec()));
        }
        down_slices.reverse();
        assert_eq!(up_slices, down_slices);
    }

    #[test]
    fn static_spec_gives_single_slice() {
        let spec = EnvSpec::static_iid_12();
        let env = EnvironmentWindow::build(&spec, 0, 3, 0.0, 100.0, 9).unwrap();
        let mut walker = SliceWalkerUp::new(&env, 0, 2, 0.0, 100.0).unwrap();
        assert_eq!(walker.next_slice(), Some((0.0, 100.0)));
        assert_eq!(walker.next_slice(), None);
    }

    #[test]
    fn homogeneous_walker_updates_all_entries() {
        let spec = EnvSpec::new(crate::env::EnvKind::HomogeneousInSpace {
            law: crate::env::LevelLaw::TwoPoint {
                lo: 0.5,
                hi: 1.5,
                p_hi: 0.5,
            },
            switch_rate: 2.0,
        });
        let env = EnvironmentWindow::build(&spec, 0, 4, 0.0, 20.0, 3).unwrap();
        let mut walker = SliceWalkerUp::new(&env, 0, 3, 0.0, 20.0).unwrap();
        while let Some(_) = walker.next_slice() {
            let first = walker.rates()[0];
            assert!(walker.rates().iter().all(|&x| x == first));
        }
    }
}
