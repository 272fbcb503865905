use std::borrow::Cow;

use super::ops::{self, Operand};
use super::program::RpnProgram;
use super::token::{OpClass, Token};
use crate::error::{Error, Result};
use crate::panel::PanelTensor;

/// Factor values indexed `[asset][day]`, `NaN` marking missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    pub n_assets: usize,
    pub n_days: usize,
    /// Asset-major: `values[asset * n_days + day]`.
    pub values: Vec<f64>,
}

impl FactorMatrix {
    pub fn new(n_assets: usize, n_days: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_assets * n_days);
        Self {
            n_assets,
            n_days,
            values,
        }
    }

    pub fn filled(n_assets: usize, n_days: usize, value: f64) -> Self {
        Self::new(n_assets, n_days, vec![value; n_assets * n_days])
    }

    #[inline]
    pub fn get(&self, asset: usize, day: usize) -> f64 {
        self.values[asset * self.n_days + day]
    }

    #[inline]
    pub fn set(&mut self, asset: usize, day: usize, v: f64) {
        self.values[asset * self.n_days + day] = v;
    }

    pub fn asset_row(&self, asset: usize) -> &[f64] {
        &self.values[asset * self.n_days..(asset + 1) * self.n_days]
    }

    /// Cross-section of one day, one entry per asset.
    pub fn day_column(&self, day: usize) -> Vec<f64> {
        (0..self.n_assets).map(|a| self.get(a, day)).collect()
    }

    pub fn is_all_missing(&self) -> bool {
        self.values.iter().all(|v| v.is_nan())
    }

    /// Bitwise equality that treats every `NaN` as equal to every other.
    pub fn same_cells(&self, other: &FactorMatrix) -> bool {
        self.n_assets == other.n_assets
            && self.n_days == other.n_days
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                (a.is_nan() && b.is_nan()) || a.to_bits() == b.to_bits()
            })
    }
}

enum Value<'a> {
    Series(Cow<'a, [f64]>),
    Const(f64),
    Delta(usize),
}

impl Value<'_> {
    fn operand(&self) -> Operand<'_> {
        match self {
            Value::Series(s) => Operand::Series(s),
            Value::Const(c) => Operand::Scalar(*c),
            Value::Delta(_) => unreachable!("time delta used as an arithmetic operand"),
        }
    }
}

fn invalid(program: &RpnProgram) -> Error {
    Error::Data(format!("program {program} is not well formed"))
}

/// Runs the stack machine for `program` over `panel`.
pub fn evaluate(program: &RpnProgram, panel: &PanelTensor) -> Result<FactorMatrix> {
    if panel.n_assets() == 0 || panel.n_days() == 0 {
        return Err(Error::Data("cannot evaluate on an empty panel".into()));
    }
    let n_days = panel.n_days();
    let len = panel.n_assets() * n_days;
    let mut stack: Vec<Value<'_>> = Vec::with_capacity(8);
    for token in program.tokens() {
        match *token {
            Token::Begin | Token::Sep => {}
            Token::Feature(f) => {
                let series = panel
                    .feature(f)
                    .ok_or_else(|| Error::MissingFeature(f.name().to_string()))?;
                stack.push(Value::Series(Cow::Borrowed(series)));
            }
            Token::Const(c) => stack.push(Value::Const(c)),
            Token::Delta(d) => stack.push(Value::Delta(d as usize)),
            Token::Op(op) => {
                let out = match op.class() {
                    OpClass::Unary => match stack.pop() {
                        Some(Value::Series(x)) => ops::unary(op, &x),
                        _ => return Err(invalid(program)),
                    },
                    OpClass::Binary => {
                        let (Some(left), Some(right)) = (stack.pop(), stack.pop()) else {
                            return Err(invalid(program));
                        };
                        ops::binary(op, left.operand(), right.operand(), len)
                    }
                    OpClass::Rolling => match (stack.pop(), stack.pop()) {
                        (Some(Value::Delta(l)), Some(Value::Series(x))) => {
                            ops::rolling(op, &x, n_days, l)
                        }
                        _ => return Err(invalid(program)),
                    },
                    OpClass::PairRolling => match (stack.pop(), stack.pop(), stack.pop()) {
                        (Some(Value::Delta(l)), Some(Value::Series(y)), Some(Value::Series(x))) => {
                            ops::pair_rolling(op, &x, &y, n_days, l)
                        }
                        _ => return Err(invalid(program)),
                    },
                };
                stack.push(Value::Series(Cow::Owned(out)));
            }
        }
    }
    match (stack.pop(), stack.is_empty()) {
        (Some(Value::Series(s)), true) => {
            Ok(FactorMatrix::new(panel.n_assets(), n_days, s.into_owned()))
        }
        _ => Err(invalid(program)),
    }
}
