use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};

/// Operators available to formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Abs,
    Log,
    Add,
    Sub,
    Mul,
    Div,
    Larger,
    Smaller,
    Ref,
    Mean,
    Medium,
    Sum,
    Std,
    Var,
    Max,
    Min,
    Mad,
    Delta,
    Wma,
    Ema,
    Cov,
    Corr,
}

/// Operand signature of an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    /// `Series -> Series`
    Unary,
    /// `(Series|Const, Series|Const) -> Series`, at least one Series.
    Binary,
    /// `(Series, TimeDelta) -> Series`
    Rolling,
    /// `(Series, Series, TimeDelta) -> Series`
    PairRolling,
}

impl Op {
    pub const ALL: [Op; 22] = [
        Op::Abs,
        Op::Log,
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Div,
        Op::Larger,
        Op::Smaller,
        Op::Ref,
        Op::Mean,
        Op::Medium,
        Op::Sum,
        Op::Std,
        Op::Var,
        Op::Max,
        Op::Min,
        Op::Mad,
        Op::Delta,
        Op::Wma,
        Op::Ema,
        Op::Cov,
        Op::Corr,
    ];

    pub fn class(self) -> OpClass {
        match self {
            Op::Abs | Op::Log => OpClass::Unary,
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Larger | Op::Smaller => OpClass::Binary,
            Op::Cov | Op::Corr => OpClass::PairRolling,
            _ => OpClass::Rolling,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::Abs => "Abs",
            Op::Log => "Log",
            Op::Add => "Add",
            Op::Sub => "Sub",
            Op::Mul => "Mul",
            Op::Div => "Div",
            Op::Larger => "Larger",
            Op::Smaller => "Smaller",
            Op::Ref => "Ref",
            Op::Mean => "Mean",
            Op::Medium => "Medium",
            Op::Sum => "Sum",
            Op::Std => "Std",
            Op::Var => "Var",
            Op::Max => "Max",
            Op::Min => "Min",
            Op::Mad => "Mad",
            Op::Delta => "Delta",
            Op::Wma => "WMA",
            Op::Ema => "EMA",
            Op::Cov => "Cov",
            Op::Corr => "Corr",
        }
    }

    /// Infix symbol for the four arithmetic operators.
    pub fn symbol(self) -> Option<char> {
        match self {
            Op::Add => Some('+'),
            Op::Sub => Some('-'),
            Op::Mul => Some('*'),
            Op::Div => Some('/'),
            _ => None,
        }
    }

    pub fn from_name(name: &str) -> Option<Op> {
        Op::ALL.iter().copied().find(|op| op.name() == name)
    }
}

/// Raw market features, in canonical panel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Open,
    High,
    Low,
    Close,
    Volume,
    Vwap,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Open,
        Feature::High,
        Feature::Low,
        Feature::Close,
        Feature::Volume,
        Feature::Vwap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Open => "open",
            Feature::High => "high",
            Feature::Low => "low",
            Feature::Close => "close",
            Feature::Volume => "volume",
            Feature::Vwap => "vwap",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.iter().copied().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Token {
    Begin,
    Sep,
    Op(Op),
    Feature(Feature),
    /// Look-back window in trading days.
    Delta(u32),
    Const(f64),
}

impl PartialEq for Token {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Token::Begin, Token::Begin) | (Token::Sep, Token::Sep) => true,
            (Token::Op(a), Token::Op(b)) => a == b,
            (Token::Feature(a), Token::Feature(b)) => a == b,
            (Token::Delta(a), Token::Delta(b)) => a == b,
            (Token::Const(a), Token::Const(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Eq for Token {}

impl Hash for Token {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Token::Begin | Token::Sep => {}
            Token::Op(op) => op.hash(state),
            Token::Feature(f) => f.hash(state),
            Token::Delta(d) => d.hash(state),
            Token::Const(c) => c.to_bits().hash(state),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Begin => write!(f, "BEG"),
            Token::Sep => write!(f, "SEP"),
            Token::Op(op) => write!(f, "{}", op.name()),
            Token::Feature(feat) => write!(f, "{}", feat.name()),
            Token::Delta(d) => write!(f, "{d}d"),
            Token::Const(c) => write!(f, "{c}"),
        }
    }
}

/// Which tokens the policy may emit.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyConfig {
    pub ops: Vec<Op>,
    pub features: Vec<Feature>,
    pub deltas: Vec<u32>,
    pub constants: Vec<f64>,
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        Self {
            ops: Op::ALL.to_vec(),
            features: Feature::ALL.to_vec(),
            deltas: vec![10, 20, 30, 40, 50],
            constants: vec![
                -30.0, -10.0, -5.0, -2.0, -1.0, -0.5, -0.01, 0.01, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0,
            ],
        }
    }
}

/// Dense token ids. Id 0 is always `Begin`, id 1 always `Sep`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    ids: HashMap<Token, usize>,
}

impl Vocabulary {
    pub const BEGIN: usize = 0;
    pub const SEP: usize = 1;

    pub fn new(config: &VocabularyConfig) -> Self {
        let mut tokens = vec![Token::Begin, Token::Sep];
        tokens.extend(config.ops.iter().map(|&op| Token::Op(op)));
        tokens.extend(config.features.iter().map(|&f| Token::Feature(f)));
        tokens.extend(config.deltas.iter().map(|&d| Token::Delta(d)));
        tokens.extend(config.constants.iter().map(|&c| Token::Const(c)));
        let mut ids = HashMap::new();
        tokens.retain(|t| {
            let fresh = !ids.contains_key(t);
            if fresh {
                ids.insert(*t, ids.len());
            }
            fresh
        });
        Self { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Token {
        self.tokens[id]
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn id(&self, token: &Token) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn max_delta(&self) -> u32 {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::Delta(d) => Some(*d),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(&VocabularyConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vocabulary_layout() {
        let v = Vocabulary::default();
        assert_eq!(v.len(), 2 + 22 + 6 + 5 + 14);
        assert_eq!(v.token(Vocabulary::BEGIN), Token::Begin);
        assert_eq!(v.token(Vocabulary::SEP), Token::Sep);
        for id in 0..v.len() {
            assert_eq!(v.id(&v.token(id)), Some(id));
        }
        assert_eq!(v.max_delta(), 50);
    }

    #[test]
    fn op_names_round_trip() {
        for op in Op::ALL {
            assert_eq!(Op::from_name(op.name()), Some(op));
        }
        assert_eq!(Op::Cov.class(), OpClass::PairRolling);
        assert_eq!(Op::Ema.class(), OpClass::Rolling);
        assert_eq!(Op::Larger.class(), OpClass::Binary);
    }
}
