//! Threshold models of the physical gate, generic over the scalar used for
//! voltages.
//!
//! * [`ThresholdGate`]: every input line carries either 0 or one unit of
//!   voltage and the gate conducts once the summed level reaches the
//!   threshold. With `threshold = n * unit` this is an n-input AND; with
//!   `threshold = unit` it behaves like transistors wired in parallel (OR).
//! * [`series_chain`]: transistors in series, conducting only when every
//!   stage is driven.

use num_traits::Num;

use crate::gate::GateError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdGate<T> {
    unit: T,
    threshold: T,
}

impl<T> ThresholdGate<T>
where
    T: Num + PartialOrd + Copy,
{
    pub fn new(unit: T, threshold: T) -> Result<Self, GateError> {
        if unit <= T::zero() || threshold <= T::zero() {
            return Err(GateError::Parameter);
        }
        Ok(ThresholdGate { unit, threshold })
    }

    /// A gate that needs all `n` lines high.
    pub fn all_of(n: usize, unit: T) -> Result<Self, GateError> {
        let mut threshold = T::zero();
        for _ in 0..n {
            threshold = threshold + unit;
        }
        Self::new(unit, threshold)
    }

    pub fn unit(&self) -> T {
        self.unit
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    pub fn conducts(&self, levels: &[T]) -> Result<bool, GateError> {
        let mut total = T::zero();
        for &v in levels {
            if !(v.is_zero() || v == self.unit) {
                return Err(GateError::Level);
            }
            total = total + v;
        }
        Ok(total >= self.threshold)
    }

    /// Levels for a boolean input vector.
    pub fn levels(&self, bits: &[bool]) -> Vec<T> {
        bits.iter().map(|&b| if b { self.unit } else { T::zero() }).collect()
    }
}

pub fn eval_voltage<T>(levels: &[T], unit: T, threshold: T) -> Result<bool, GateError>
where
    T: Num + PartialOrd + Copy,
{
    ThresholdGate::new(unit, threshold)?.conducts(levels)
}

/// Series transistor chain: current flows only if every gate is driven.
pub fn series_chain(gates: &[bool]) -> Result<bool, GateError> {
    if gates.is_empty() {
        return Err(GateError::EmptyInput);
    }
    let mut conducting = true;
    for &g in gates {
        conducting = conducting && g;
    }
    Ok(conducting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::{eval_gate, GateKind};
    use num_rational::Ratio;

    #[test]
    fn listed_examples() {
        assert_eq!(eval_voltage(&[1.0, 1.0, 1.0], 1.0, 3.0), Ok(true));
        assert_eq!(eval_voltage(&[1.0, 1.0, 0.0], 1.0, 3.0), Ok(false));
        assert_eq!(eval_voltage(&[1.0, 0.0, 0.0], 1.0, 1.0), Ok(true));
        assert_eq!(eval_voltage(&[1.0, 0.5], 1.0, 1.0), Err(GateError::Level));
        assert_eq!(eval_voltage(&[1.0f32], 0.0, 1.0), Err(GateError::Parameter));
    }

    #[test]
    fn threshold_matches_and_gate_exhaustively() {
        for n in 1..=8usize {
            let f = ThresholdGate::all_of(n, 0.7f32).unwrap();
            let d = ThresholdGate::all_of(n, 1.1f64).unwrap();
            let q = ThresholdGate::all_of(n, Ratio::new(1i64, 3)).unwrap();
            let i = ThresholdGate::all_of(n, 5i32).unwrap();
            for mask in 0u32..(1 << n) {
                let bits: Vec<bool> = (0..n).map(|b| mask >> b & 1 == 1).collect();
                let want = eval_gate(GateKind::And, &bits).unwrap();
                assert_eq!(q.conducts(&q.levels(&bits)).unwrap(), want);
                assert_eq!(i.conducts(&i.levels(&bits)).unwrap(), want);
                assert_eq!(series_chain(&bits).unwrap(), want);
                // 0.7 and 1.1 are not exact in binary; the sums still land on
                // the threshold for these small n
                assert_eq!(f.conducts(&f.levels(&bits)).unwrap(), want, "f32 n={n} mask={mask}");
                assert_eq!(d.conducts(&d.levels(&bits)).unwrap(), want, "f64 n={n} mask={mask}");
            }
        }
    }

    #[test]
    fn unit_threshold_is_or() {
        for n in 1..=6usize {
            let g = ThresholdGate::new(1.0f64, 1.0).unwrap();
            for mask in 0u32..(1 << n) {
                let bits: Vec<bool> = (0..n).map(|b| mask >> b & 1 == 1).collect();
                assert_eq!(g.conducts(&g.levels(&bits)).unwrap(), eval_gate(GateKind::Or, &bits).unwrap());
            }
        }
    }
}
