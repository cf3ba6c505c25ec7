//! Choice of `d`, the number of compute requests in a batch that the data node
//! runs itself; the other `b - d` go back to the compute node as raw values.
//!
//! Each of the four load estimates is affine in `d` and the batch completes
//! when the slowest resource finishes, so the objective is the maximum of the
//! four.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Average message part sizes in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageSizes {
    pub key: f64,
    pub params: f64,
    pub value: f64,
    pub computed: f64,
}

/// Compute-node statistics attached to each batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSnapshot {
    /// Pending local computations.
    pub lc: f64,
    /// Pending data requests not yet sent.
    pub nd: f64,
    /// Pending compute requests not yet sent.
    pub nc: f64,
    /// Data-request responses still to arrive.
    pub ndr: f64,
    /// Compute requests pending at data nodes other than the batch target.
    pub nr_bar: f64,
    /// Portion of `nr_bar` expected to be computed remotely.
    pub r_bar: f64,
    /// Seconds per function at the compute node.
    pub tc_c: f64,
    pub sizes: MessageSizes,
    /// Compute node bandwidth, bytes per second.
    pub net_bw: f64,
}

/// Data-node side of the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataNodeLoad {
    pub nd_j: f64,
    pub ndr_j: f64,
    pub nr_j: f64,
    pub r_j: f64,
    /// Pending compute requests from the batch's origin.
    pub nr_ij: f64,
    /// Portion of `nr_ij` to be computed at the data node.
    pub r_ij: f64,
    /// Seconds per function at the data node.
    pub tc_d: f64,
    pub sizes: MessageSizes,
    /// Data node bandwidth, bytes per second.
    pub net_bw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceDecision {
    pub d: u64,
    pub predicted_completion: f64,
}

/// Which per-function time multiplies the compute-node CPU terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormulaFidelity {
    /// The data node's time, as the formula is usually printed.
    Printed,
    /// The compute node's own time.
    #[default]
    Corrected,
}

impl LoadSnapshot {
    pub fn is_valid(&self) -> bool {
        let counts = [self.lc, self.nd, self.nc, self.ndr, self.nr_bar, self.r_bar];
        counts.iter().all(|c| c.is_finite() && *c >= 0.0)
            && self.r_bar <= self.nr_bar
            && self.tc_c >= 0.0
            && self.net_bw > 0.0
    }
}

impl DataNodeLoad {
    pub fn is_valid(&self) -> bool {
        let counts = [self.nd_j, self.ndr_j, self.nr_j, self.r_j, self.nr_ij, self.r_ij];
        counts.iter().all(|c| c.is_finite() && *c >= 0.0)
            && self.r_j <= self.nr_j
            && self.r_ij <= self.nr_ij
            && self.tc_d >= 0.0
            && self.net_bw > 0.0
    }
}

pub fn comp_cpu(s: &LoadSnapshot, j: &DataNodeLoad, b: u64, d: f64, fidelity: FormulaFidelity) -> f64 {
    let tc = match fidelity {
        FormulaFidelity::Corrected => s.tc_c,
        FormulaFidelity::Printed => j.tc_d,
    };
    tc * s.lc + tc * (s.nr_bar - s.r_bar) + tc * (j.nr_ij - j.r_ij) + tc * (b as f64 - d)
}

pub fn comp_net(s: &LoadSnapshot, j: &DataNodeLoad, b: u64, d: f64) -> f64 {
    let z = &s.sizes;
    let bytes = s.nd * (z.key + z.value)
        + s.nc * (z.key + z.params)
        + s.ndr * z.value
        + (s.nr_bar - s.r_bar) * z.value
        + s.r_bar * z.computed
        + (j.nr_ij - j.r_ij) * z.value
        + j.r_ij * z.computed
        + d * z.computed
        + (b as f64 - d) * z.value;
    bytes / s.net_bw
}

pub fn data_cpu(j: &DataNodeLoad, d: f64) -> f64 {
    j.tc_d * j.r_j + j.tc_d * d
}

pub fn data_net(j: &DataNodeLoad, b: u64, d: f64) -> f64 {
    let z = &j.sizes;
    let bytes = j.nd_j * (z.key + z.value)
        + j.ndr_j * z.value
        + j.nr_j * (z.key + z.params)
        + (j.nr_j - j.r_j) * z.value
        + j.r_j * z.computed
        + d * z.computed
        + (b as f64 - d) * z.value;
    bytes / j.net_bw
}

/// The four loads as (intercept, slope) pairs in `d`.
fn lines(s: &LoadSnapshot, j: &DataNodeLoad, b: u64, fidelity: FormulaFidelity) -> [(f64, f64); 4] {
    let fns: [&dyn Fn(f64) -> f64; 4] =
        [&|d| comp_cpu(s, j, b, d, fidelity), &|d| comp_net(s, j, b, d), &|d| data_cpu(j, d), &|d| data_net(j, b, d)];
    fns.map(|f| {
        let at0 = f(0.0);
        (at0, f(1.0) - at0)
    })
}

/// Batch completion estimate `max` of the four loads.
pub fn objective(s: &LoadSnapshot, j: &DataNodeLoad, b: u64, d: f64, fidelity: FormulaFidelity) -> f64 {
    comp_cpu(s, j, b, d, fidelity).max(comp_net(s, j, b, d)).max(data_cpu(j, d)).max(data_net(j, b, d))
}

const MAX_ITERATIONS: usize = 64;

/// Subgradient descent on the continuous relaxation from a random start,
/// then rounding and a short integer search (the objective is convex).
pub fn solve_d<R: Rng + ?Sized>(
    s: &LoadSnapshot,
    j: &DataNodeLoad,
    b: u64,
    fidelity: FormulaFidelity,
    rng: &mut R,
) -> BalanceDecision {
    let f = |d: f64| objective(s, j, b, d, fidelity);
    if b == 0 {
        return BalanceDecision { d: 0, predicted_completion: f(0.0) };
    }
    let lines = lines(s, j, b, fidelity);
    let slope_at = |x: f64| {
        lines
            .iter()
            .map(|&(a, m)| (a + m * x, m))
            .max_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)))
            .map_or(0.0, |(_, m)| m)
    };

    let hi = b as f64;
    let mut x = rng.gen_range(0.0..=hi);
    let mut step = hi / 8.0;
    let mut prev_sign = 0.0;
    for _ in 0..MAX_ITERATIONS {
        let g = slope_at(x);
        if g == 0.0 || step < 1e-3 {
            break;
        }
        let sign = g.signum();
        if prev_sign != 0.0 && sign != prev_sign {
            step /= 2.0;
        }
        prev_sign = sign;
        x = (x - sign * step).clamp(0.0, hi);
    }

    let lo_d = x.floor() as u64;
    let hi_d = (x.ceil() as u64).min(b);
    let mut d = if f(hi_d as f64) <= f(lo_d as f64) { hi_d } else { lo_d };
    while d < b && f((d + 1) as f64) <= f(d as f64) {
        d += 1;
    }
    while d > 0 && f((d - 1) as f64) < f(d as f64) {
        d -= 1;
    }
    BalanceDecision { d, predicted_completion: f(d as f64) }
}

/// Exhaustive scan over every `d` in `0..=b`; ties go to the largest `d`.
pub fn solve_d_exact(s: &LoadSnapshot, j: &DataNodeLoad, b: u64, fidelity: FormulaFidelity) -> BalanceDecision {
    let mut best = BalanceDecision { d: 0, predicted_completion: objective(s, j, b, 0.0, fidelity) };
    for d in 1..=b {
        let v = objective(s, j, b, d as f64, fidelity);
        if v <= best.predicted_completion {
            best = BalanceDecision { d, predicted_completion: v };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SIZES: MessageSizes = MessageSizes { key: 10.0, params: 20.0, value: 50.0, computed: 100.0 };

    fn idle_snapshot() -> LoadSnapshot {
        LoadSnapshot {
            lc: 0.0,
            nd: 0.0,
            nc: 0.0,
            ndr: 0.0,
            nr_bar: 0.0,
            r_bar: 0.0,
            tc_c: 2.0,
            sizes: SIZES,
            net_bw: 1000.0,
        }
    }

    fn idle_load() -> DataNodeLoad {
        DataNodeLoad {
            nd_j: 0.0,
            ndr_j: 0.0,
            nr_j: 0.0,
            r_j: 0.0,
            nr_ij: 0.0,
            r_ij: 0.0,
            tc_d: 0.1,
            sizes: SIZES,
            net_bw: 100.0,
        }
    }

    const C: FormulaFidelity = FormulaFidelity::Corrected;

    #[test]
    fn comp_cpu_examples() {
        let s = idle_snapshot();
        let j = idle_load();
        assert_eq!(comp_cpu(&s, &j, 5, 5.0, C), 0.0);
        let busy = LoadSnapshot { lc: 10.0, ..s };
        assert_eq!(comp_cpu(&busy, &j, 5, 5.0, C), 20.0);
        // the printed form charges the data node's time instead
        assert_relative_eq!(comp_cpu(&busy, &j, 5, 5.0, FormulaFidelity::Printed), 1.0);
    }

    #[test]
    fn comp_cpu_mixed_case() {
        let s = LoadSnapshot { lc: 3.0, nr_bar: 7.0, r_bar: 2.5, tc_c: 0.4, ..idle_snapshot() };
        let j = DataNodeLoad { nr_ij: 6.0, r_ij: 1.0, ..idle_load() };
        // 0.4 * (3 + 4.5 + 5 + (12 - 4))
        assert_relative_eq!(comp_cpu(&s, &j, 12, 4.0, C), 0.4 * 20.5, epsilon = 1e-12);
    }

    #[test]
    fn comp_net_examples() {
        let s = idle_snapshot();
        let j = idle_load();
        assert_eq!(comp_net(&s, &j, 0, 0.0), 0.0);
        assert_relative_eq!(comp_net(&s, &j, 10, 10.0), 1.0);
        // s_cv > s_v here, so pushing more work to the data node costs more bytes
        assert!(comp_net(&s, &j, 10, 6.0) > comp_net(&s, &j, 10, 5.0));
        let small_cv = LoadSnapshot { sizes: MessageSizes { computed: 5.0, ..SIZES }, ..s };
        assert!(comp_net(&small_cv, &j, 10, 6.0) < comp_net(&small_cv, &j, 10, 5.0));
    }

    #[test]
    fn comp_net_mixed_case() {
        let s = LoadSnapshot { nd: 1.0, nc: 2.0, ndr: 3.0, nr_bar: 4.0, r_bar: 1.0, ..idle_snapshot() };
        let j = DataNodeLoad { nr_ij: 5.0, r_ij: 2.0, ..idle_load() };
        // 1*60 + 2*30 + 3*50 + 3*50 + 1*100 + 3*50 + 2*100 + 2*100 + 3*50
        let bytes = 60.0 + 60.0 + 150.0 + 150.0 + 100.0 + 150.0 + 200.0 + 200.0 + 150.0;
        assert_relative_eq!(comp_net(&s, &j, 5, 2.0), bytes / 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn data_side_examples() {
        let j = idle_load();
        assert_eq!(data_cpu(&j, 0.0), 0.0);
        let j5 = DataNodeLoad { r_j: 5.0, ..j };
        assert_relative_eq!(data_cpu(&j5, 5.0), 1.0, epsilon = 1e-12);
        assert_eq!(data_net(&j, 0, 0.0), 0.0);
        assert_relative_eq!(data_net(&j, 4, 0.0), 2.0);
        let slope = data_net(&j, 4, 3.0) - data_net(&j, 4, 2.0);
        assert_relative_eq!(slope, (100.0 - 50.0) / 100.0, epsilon = 1e-12);
    }

    #[test]
    fn data_net_mixed_case() {
        let j = DataNodeLoad { nd_j: 1.0, ndr_j: 2.0, nr_j: 3.0, r_j: 1.0, ..idle_load() };
        // 1*60 + 2*50 + 3*30 + 2*50 + 1*100 + 1*100 + 3*50
        let bytes = 60.0 + 100.0 + 90.0 + 100.0 + 100.0 + 100.0 + 150.0;
        assert_relative_eq!(data_net(&j, 4, 1.0), bytes / 100.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_case_splits_evenly() {
        let sizes = MessageSizes { key: 1.0, params: 1.0, value: 1.0, computed: 1.0 };
        let s = LoadSnapshot { tc_c: 1.0, sizes, net_bw: 1e6, ..idle_snapshot() };
        let j = DataNodeLoad { tc_d: 1.0, sizes, net_bw: 1e6, ..idle_load() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(solve_d(&s, &j, 10, C, &mut rng).d, 5);
        assert_eq!(solve_d_exact(&s, &j, 10, C).d, 5);
    }

    #[test]
    fn saturated_data_node_gets_nothing() {
        let s = idle_snapshot();
        let j = DataNodeLoad { r_j: 1e6, nr_j: 1e6, ..idle_load() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(solve_d(&s, &j, 10, C, &mut rng).d, 0);
    }

    #[test]
    fn all_zero_load_keeps_everything_at_data_node() {
        let zero = MessageSizes { key: 0.0, params: 0.0, value: 0.0, computed: 0.0 };
        let s = LoadSnapshot { tc_c: 0.0, sizes: zero, ..idle_snapshot() };
        let j = DataNodeLoad { tc_d: 0.0, sizes: zero, ..idle_load() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(solve_d(&s, &j, 7, C, &mut rng).d, 7);
    }

    #[test]
    fn busier_compute_node_keeps_more_at_data_node() {
        let j = DataNodeLoad { tc_d: 1.0, r_j: 20.0, nr_j: 20.0, ..idle_load() };
        let quiet = LoadSnapshot {
            tc_c: 1.0,
            lc: 0.0,
            sizes: MessageSizes { value: 1.0, computed: 1.0, ..SIZES },
            net_bw: 1e9,
            ..idle_snapshot()
        };
        let busy = LoadSnapshot { lc: 30.0, ..quiet };
        let j = DataNodeLoad { net_bw: 1e9, ..j };
        let dq = solve_d_exact(&quiet, &j, 64, C).d;
        let db = solve_d_exact(&busy, &j, 64, C).d;
        assert!(db > dq, "{db} vs {dq}");
    }

    fn snapshot() -> impl Strategy<Value = (LoadSnapshot, DataNodeLoad, u64)> {
        (
            (0.0..200.0f64, 0.0..50.0f64, 0.0..50.0f64, 0.0..50.0f64, 0.0..100.0f64, 0.0..1.0f64),
            (0.0..50.0f64, 0.0..50.0f64, 0.0..100.0f64, 0.0..1.0f64, 0.0..1.0f64),
            (1e-5..1e-1f64, 1e-5..1e-1f64, 1.0..1e5f64, 1.0..1e5f64, 1e5..1e8f64, 1e5..1e8f64),
            1u64..=256,
        )
            .prop_map(|(c, dn, costs, b)| {
                let (lc, nd, nc, ndr, nr_bar, r_frac) = c;
                let (nd_j, ndr_j, nr_j, rj_frac, ij_frac) = dn;
                let (tc_c, tc_d, s_v, s_cv, bw_i, bw_j) = costs;
                let sizes = MessageSizes { key: 16.0, params: 100.0, value: s_v, computed: s_cv };
                let nr_ij = nr_j * ij_frac;
                (
                    LoadSnapshot { lc, nd, nc, ndr, nr_bar, r_bar: nr_bar * r_frac, tc_c, sizes, net_bw: bw_i },
                    DataNodeLoad {
                        nd_j,
                        ndr_j,
                        nr_j,
                        r_j: nr_j * rj_frac,
                        nr_ij,
                        r_ij: nr_ij * rj_frac,
                        tc_d,
                        sizes,
                        net_bw: bw_j,
                    },
                    b,
                )
            })
    }

    proptest! {
        #[test]
        fn solver_matches_exhaustive_scan((s, j, b) in snapshot(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fast = solve_d(&s, &j, b, C, &mut rng);
            let exact = solve_d_exact(&s, &j, b, C);
            let scale = exact.predicted_completion.abs().max(1e-300);
            prop_assert!((fast.predicted_completion - exact.predicted_completion).abs() <= 1e-9 * scale);
            prop_assert!(fast.d <= b);
        }

        #[test]
        fn loads_are_affine_in_d((s, j, b) in snapshot(), a in 0.0..256.0f64, h in 0.5..64.0f64) {
            let fs: [Box<dyn Fn(f64) -> f64>; 4] = [
                Box::new(|d| comp_cpu(&s, &j, b, d, C)),
                Box::new(|d| comp_net(&s, &j, b, d)),
                Box::new(|d| data_cpu(&j, d)),
                Box::new(|d| data_net(&j, b, d)),
            ];
            for f in &fs {
                let (y0, y1, y2) = (f(a), f(a + h), f(a + 2.0 * h));
                let scale = y0.abs().max(y1.abs()).max(y2.abs()).max(1e-12);
                prop_assert!(((y1 - y0) - (y2 - y1)).abs() <= 1e-9 * scale);
            }
        }
    }
}
