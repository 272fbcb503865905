use std::fmt;
use std::sync::OnceLock;

use super::grammar::{Grammar, MoveSet, StackState};
use super::token::{Feature, Op, OpClass, Token};
use crate::error::{Error, Result};

/// A validated token sequence `BEG ... SEP` encoding one formulaic factor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RpnProgram {
    tokens: Vec<Token>,
}

fn standard_grammar() -> &'static Grammar {
    static GRAMMAR: OnceLock<Grammar> = OnceLock::new();
    GRAMMAR.get_or_init(Grammar::standard)
}

impl RpnProgram {
    /// Validates `tokens` against the default grammar (max length 20).
    pub fn parse(tokens: &[Token]) -> Result<Self> {
        Self::parse_with(tokens, standard_grammar())
    }

    /// Accepts `tokens` iff every token is legal under `grammar` when
    /// replayed from `Begin`.
    pub fn parse_with(tokens: &[Token], grammar: &Grammar) -> Result<Self> {
        let illegal = |index: usize, state: &StackState| Error::IllegalToken {
            index,
            token: tokens.get(index).map_or("<end>".to_string(), |t| t.to_string()),
            stack: state.stack.clone(),
        };
        let mut state = StackState::initial();
        if tokens.first() != Some(&Token::Begin) {
            return Err(illegal(0, &state));
        }
        for (i, token) in tokens.iter().enumerate().skip(1) {
            if state.is_complete() {
                return Err(illegal(i, &state));
            }
            let budget = grammar.max_len().saturating_sub(i);
            if !grammar.is_legal(&state, token, budget) {
                return Err(illegal(i, &state));
            }
            state = state.successor(token).expect("legal token has a successor");
        }
        if !state.is_complete() {
            return Err(illegal(tokens.len(), &state));
        }
        Ok(Self {
            tokens: tokens.to_vec(),
        })
    }

    /// Parses the infix form produced by `Display` / [`RpnProgram::to_infix`].
    pub fn from_infix(text: &str) -> Result<Self> {
        let tokens = tokenize_infix(text)?;
        let grammar;
        let g = if tokens.len() <= Grammar::DEFAULT_MAX_LEN {
            standard_grammar()
        } else {
            grammar = Grammar::new(tokens.len(), MoveSet::all());
            &grammar
        };
        Self::parse_with(&tokens, g)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn features(&self) -> impl Iterator<Item = Feature> + '_ {
        self.tokens.iter().filter_map(|t| match t {
            Token::Feature(f) => Some(*f),
            _ => None,
        })
    }

    /// Days of history needed before the first defined output cell.
    pub fn max_lookback(&self) -> usize {
        let mut stack: Vec<usize> = Vec::new();
        for t in &self.tokens {
            match *t {
                Token::Begin | Token::Sep => {}
                Token::Feature(_) | Token::Const(_) => stack.push(0),
                Token::Delta(d) => stack.push(d as usize),
                Token::Op(op) => {
                    let v = match op.class() {
                        OpClass::Unary => stack.pop().unwrap(),
                        OpClass::Binary => {
                            let a = stack.pop().unwrap();
                            a.max(stack.pop().unwrap())
                        }
                        OpClass::Rolling => {
                            let l = stack.pop().unwrap();
                            let x = stack.pop().unwrap();
                            x + if matches!(op, Op::Ref | Op::Delta) { l } else { l.saturating_sub(1) }
                        }
                        OpClass::PairRolling => {
                            let l = stack.pop().unwrap();
                            let y = stack.pop().unwrap();
                            let x = stack.pop().unwrap();
                            x.max(y) + l.saturating_sub(1)
                        }
                    };
                    stack.push(v);
                }
            }
        }
        stack.pop().unwrap_or(0)
    }

    pub fn to_infix(&self) -> String {
        let mut stack: Vec<String> = Vec::new();
        for t in &self.tokens {
            match *t {
                Token::Begin | Token::Sep => {}
                Token::Feature(_) | Token::Const(_) | Token::Delta(_) => stack.push(t.to_string()),
                Token::Op(op) => {
                    let s = match op.class() {
                        OpClass::Unary => format!("{}({})", op.name(), stack.pop().unwrap()),
                        OpClass::Binary => {
                            let top = stack.pop().unwrap();
                            let below = stack.pop().unwrap();
                            match op.symbol() {
                                Some(sym) => format!("({top} {sym} {below})"),
                                None => format!("{}({below}, {top})", op.name()),
                            }
                        }
                        OpClass::Rolling => {
                            let l = stack.pop().unwrap();
                            let x = stack.pop().unwrap();
                            format!("{}({x}, {l})", op.name())
                        }
                        OpClass::PairRolling => {
                            let l = stack.pop().unwrap();
                            let y = stack.pop().unwrap();
                            let x = stack.pop().unwrap();
                            format!("{}({x}, {y}, {l})", op.name())
                        }
                    };
                    stack.push(s);
                }
            }
        }
        stack.pop().unwrap_or_default()
    }

    /// Space separated RPN form, e.g. `BEG low high Sub SEP`.
    pub fn to_rpn_string(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for RpnProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_infix())
    }
}

struct InfixParser<'a> {
    src: &'a str,
    pos: usize,
}

impl InfixParser<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Formula {
            input: self.src.to_string(),
            message: format!("{} at offset {}", message.into(), self.pos),
        }
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += self.src[self.pos..].chars().next().unwrap().len_utf8();
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &str {
        let start = self.pos;
        while let Some(c) = self.src[self.pos..].chars().next() {
            if !pred(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.src[start..self.pos]
    }

    fn expr(&mut self, out: &mut Vec<Token>) -> Result<()> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some('(') => {
                self.pos += 1;
                let mut left = Vec::new();
                self.expr(&mut left)?;
                let op = match self.peek() {
                    Some('+') => Op::Add,
                    Some('-') => Op::Sub,
                    Some('*') => Op::Mul,
                    Some('/') => Op::Div,
                    _ => return Err(self.err("expected arithmetic operator")),
                };
                self.pos += 1;
                let mut right = Vec::new();
                self.expr(&mut right)?;
                self.expect(')')?;
                // the left operand of the infix form sits on top of the stack
                out.extend(right);
                out.extend(left);
                out.push(Token::Op(op));
                Ok(())
            }
            Some(c) if c == '-' || c == '.' || c.is_ascii_digit() => {
                let start = self.pos;
                if c == '-' {
                    self.pos += 1;
                }
                self.take_while(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E'));
                let text = &self.src[start..self.pos];
                if self.src[self.pos..].starts_with('d') {
                    self.pos += 1;
                    let days: u32 = text
                        .parse()
                        .map_err(|_| self.err(format!("bad time delta `{text}d`")))?;
                    out.push(Token::Delta(days));
                } else {
                    let v: f64 = text
                        .parse()
                        .map_err(|_| self.err(format!("bad constant `{text}`")))?;
                    out.push(Token::Const(v));
                }
                Ok(())
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_').to_string();
                if let Some(f) = Feature::from_name(&name) {
                    out.push(Token::Feature(f));
                    return Ok(());
                }
                let op = Op::from_name(&name)
                    .filter(|op| op.symbol().is_none())
                    .ok_or_else(|| self.err(format!("unknown name `{name}`")))?;
                self.expect('(')?;
                loop {
                    self.expr(out)?;
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(')') => {
                            self.pos += 1;
                            break;
                        }
                        _ => return Err(self.err("expected `,` or `)`")),
                    }
                }
                out.push(Token::Op(op));
                Ok(())
            }
            Some(c) => Err(self.err(format!("unexpected character `{c}`"))),
        }
    }
}

/// Converts an infix formula into its RPN token sequence including `BEG`
/// and `SEP`. Arity and typing are checked later by [`RpnProgram::parse`].
pub fn tokenize_infix(text: &str) -> Result<Vec<Token>> {
    let mut p = InfixParser { src: text, pos: 0 };
    let mut out = vec![Token::Begin];
    p.expr(&mut out)?;
    if p.peek().is_some() {
        return Err(p.err("trailing input"));
    }
    out.push(Token::Sep);
    Ok(out)
}
