use super::{BitTransposedTensor, Precision, LANES};
use crate::error::{Error, Result};

/// One cycle of the bit-serial sequence: which activation and weight plane to
/// combine and how the adder-tree output enters the accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairStep {
    /// Activation bit index, 1 = LSB.
    pub j: u8,
    /// Weight bit index, 1 = LSB.
    pub k: u8,
    /// Plane offset within the activation block (0 = MSB plane).
    pub act_plane: u8,
    /// Plane offset within the weight block (0 = MSB plane).
    pub wgt_plane: u8,
    /// Subtract instead of add: exactly one of the two bits is a sign bit.
    pub negate: bool,
    /// Shift the accumulator left by one before adding (order of magnitude changed).
    pub shift_before: bool,
}

/// Bit pairs grouped by order of magnitude `j + k`, highest first.
///
/// Bit indices are 1-based with 1 the LSB. The magnitude `j + k == 1` has no
/// pairs and is omitted, so there are `b_a + b_w - 1` groups.
pub fn bit_combination_schedule(b_a: u32, b_w: u32) -> Vec<Vec<(u32, u32)>> {
    (2..=b_a + b_w)
        .rev()
        .map(|i| (1..=b_a).rev().filter(|&j| i > j && i - j >= 1 && i - j <= b_w).map(|j| (j, i - j)).collect())
        .collect()
}

/// The schedule flattened into per-cycle steps.
pub fn pair_steps(prec_a: Precision, prec_w: Precision) -> Vec<PairStep> {
    let (b_a, b_w) = (prec_a.bits(), prec_w.bits());
    let mut steps = Vec::with_capacity((b_a * b_w) as usize);
    for (g, group) in bit_combination_schedule(b_a, b_w).into_iter().enumerate() {
        for (n, (j, k)) in group.into_iter().enumerate() {
            let sign_a = prec_a.is_signed() && j == b_a;
            let sign_w = prec_w.is_signed() && k == b_w;
            steps.push(PairStep {
                j: j as u8,
                k: k as u8,
                act_plane: (b_a - j) as u8,
                wgt_plane: (b_w - k) as u8,
                negate: sign_a ^ sign_w,
                shift_before: g > 0 && n == 0,
            });
        }
    }
    steps
}

/// 64 one-bit multipliers followed by the adder tree.
#[inline]
pub fn adder_tree_sum(lane_bits_x: u64, lane_bits_w: u64) -> u8 {
    (lane_bits_x & lane_bits_w).count_ones() as u8
}

/// Shifter-accumulator of one VVP.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Accumulator {
    pub value: i64,
    pub shift_count: u32,
}

impl Accumulator {
    #[inline]
    pub fn shift(&mut self) {
        self.value <<= 1;
        self.shift_count += 1;
    }

    #[inline]
    pub fn add_term(&mut self, term: u8, negate: bool) {
        if negate {
            self.value -= term as i64;
        } else {
            self.value += term as i64;
        }
    }

    #[inline]
    pub fn apply(&mut self, step: &PairStep, term: u8) {
        if step.shift_before {
            self.shift();
        }
        self.add_term(term, step.negate);
    }
}

/// Bit-serial dot product of one 64-lane block of each operand, given as
/// plane words (MSB plane first).
pub fn dot_planes(x: &[u64], w: &[u64], prec_a: Precision, prec_w: Precision) -> i64 {
    debug_assert_eq!(x.len(), prec_a.bits() as usize);
    debug_assert_eq!(w.len(), prec_w.bits() as usize);
    let mut acc = Accumulator::default();
    for step in pair_steps(prec_a, prec_w) {
        let term = adder_tree_sum(x[step.act_plane as usize], w[step.wgt_plane as usize]);
        acc.apply(&step, term);
    }
    acc.value
}

/// Dot product of two single-block, 64-lane bit-transposed tensors.
pub fn bitserial_dot(x: &BitTransposedTensor, w: &BitTransposedTensor) -> Result<i64> {
    for t in [x, w] {
        if t.block_width != LANES {
            return Err(Error::LaneMismatch { expected: LANES, actual: t.block_width });
        }
        if t.planes.len() != t.precision.bits() as usize {
            return Err(Error::MalformedTensor(format!(
                "expected one block of {} planes, found {} words",
                t.precision.bits(),
                t.planes.len()
            )));
        }
    }
    Ok(dot_planes(&x.planes, &w.planes, x.precision, w.precision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitserial::transpose;
    use rand::{Rng, SeedableRng};

    fn oracle(x: &[i64], w: &[i64]) -> i64 {
        x.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn p(bits: u32, signed: bool) -> Precision {
        Precision::new(bits, signed).unwrap()
    }

    fn dot(x: &[i64], w: &[i64], pa: Precision, pw: Precision) -> i64 {
        let tx = transpose(x, pa, 64).unwrap();
        let tw = transpose(w, pw, 64).unwrap();
        bitserial_dot(&tx, &tw).unwrap()
    }

    #[test]
    fn schedule_two_two() {
        assert_eq!(bit_combination_schedule(2, 2), vec![vec![(2, 2)], vec![(2, 1), (1, 2)], vec![(1, 1)]]);
        assert_eq!(bit_combination_schedule(1, 1), vec![vec![(1, 1)]]);
    }

    #[test]
    fn schedule_three_two() {
        // enumerate every (j, k) and bucket by j + k
        let s = bit_combination_schedule(3, 2);
        assert_eq!(s.len(), 4);
        assert_eq!(s.iter().map(Vec::len).sum::<usize>(), 6);
        let mut expected: Vec<Vec<(u32, u32)>> = vec![];
        for i in (2..=5).rev() {
            let mut g = vec![];
            for j in (1..=3).rev() {
                for k in 1..=2 {
                    if j + k == i {
                        g.push((j, k));
                    }
                }
            }
            expected.push(g);
        }
        assert_eq!(s, expected);
    }

    #[test]
    fn schedule_cardinality() {
        for a in 1..=16 {
            for b in 1..=16 {
                let s = bit_combination_schedule(a, b);
                assert_eq!(s.len() as u32, a + b - 1);
                assert_eq!(s.iter().map(Vec::len).sum::<usize>() as u32, a * b);
                let steps = pair_steps(p(a, false), p(b, false));
                assert_eq!(steps.iter().filter(|s| s.shift_before).count() as u32, a + b - 2);
            }
        }
    }

    #[test]
    fn adder_tree() {
        assert_eq!(adder_tree_sum(u64::MAX, u64::MAX), 64);
        assert_eq!(adder_tree_sum(0x1234_5678_9abc_def0, 0), 0);
        let (a, b) = (0xF0F0_F0F0_F0F0_F0F0u64, 0xFF00_FF00_FF00_FF00u64);
        let expected = (0..64).filter(|l| a >> l & 1 == 1 && b >> l & 1 == 1).count();
        assert_eq!(adder_tree_sum(a, b) as usize, expected);
    }

    #[test]
    fn zero_activation() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let w: Vec<i64> = (0..64).map(|_| rng.random_range(-8..8)).collect();
        assert_eq!(dot(&[0; 64], &w, p(3, false), p(4, true)), 0);
    }

    #[test]
    fn one_bit_is_and_popcount() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let (mx, mw): (u64, u64) = (rng.random(), rng.random());
            let x: Vec<i64> = (0..64).map(|l| (mx >> l & 1) as i64).collect();
            let w: Vec<i64> = (0..64).map(|l| (mw >> l & 1) as i64).collect();
            assert_eq!(dot(&x, &w, p(1, false), p(1, false)), (mx & mw).count_ones() as i64);
        }
    }

    #[test]
    fn exhaustive_single_lane_three_bit_signed() {
        let pa = p(3, true);
        for xv in -4..4 {
            for wv in -4..4 {
                let mut x = [0i64; 64];
                let mut w = [0i64; 64];
                x[0] = xv;
                w[0] = wv;
                assert_eq!(dot(&x, &w, pa, pa), xv * wv, "{xv} * {wv}");
            }
        }
    }

    #[test]
    fn random_against_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let widths = [1, 2, 3, 4, 8, 16];
        for &ba in &widths {
            for &bw in &widths {
                for (sa, sw) in [(false, false), (false, true), (true, false), (true, true)] {
                    let (pa, pw) = (p(ba, sa), p(bw, sw));
                    for _ in 0..20 {
                        let x: Vec<i64> = (0..64).map(|_| rng.random_range(pa.min_value()..=pa.max_value())).collect();
                        let w: Vec<i64> = (0..64).map(|_| rng.random_range(pw.min_value()..=pw.max_value())).collect();
                        assert_eq!(dot(&x, &w, pa, pw), oracle(&x, &w));
                    }
                }
            }
        }
    }

    #[test]
    fn worst_case_sixteen_bit() {
        let pa = p(16, true);
        let x = vec![pa.min_value(); 64];
        assert_eq!(dot(&x, &x, pa, pa), 64 * (1i64 << 30));
    }

    #[test]
    fn unsigned_swap_symmetry() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        for _ in 0..200 {
            let (ba, bw) = (rng.random_range(1..=16), rng.random_range(1..=16));
            let (pa, pw) = (p(ba, false), p(bw, false));
            let x: Vec<i64> = (0..64).map(|_| rng.random_range(0..=pa.max_value())).collect();
            let w: Vec<i64> = (0..64).map(|_| rng.random_range(0..=pw.max_value())).collect();
            assert_eq!(dot(&x, &w, pa, pw), dot(&w, &x, pw, pa));
        }
    }

    #[test]
    fn lane_mismatch() {
        let pa = p(2, false);
        let x = transpose(&[1, 2], pa, 2).unwrap();
        assert!(matches!(bitserial_dot(&x, &x), Err(Error::LaneMismatch { .. })));
    }
}
