//! Typed stack automaton deciding which tokens may extend an RPN prefix.
//!
//! Legality is decided on the stack of operand kinds alone. A token is legal
//! when the resulting stack is well typed and a `Sep` is still reachable
//! within the remaining token budget; reachability is tabulated once per
//! grammar so masking in the sampling loop is a hash lookup.

use std::collections::HashMap;

use super::token::{OpClass, Token, Vocabulary};

/// Operand kind on the evaluation stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Series,
    Const,
    /// A time delta; only consumable as the last operand of a rolling op.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    PushSeries,
    PushConst,
    PushDelta,
    Unary,
    Binary,
    Rolling,
    PairRolling,
    Sep,
}

const MOVES: [Move; 8] = [
    Move::PushSeries,
    Move::PushConst,
    Move::PushDelta,
    Move::Unary,
    Move::Binary,
    Move::Rolling,
    Move::PairRolling,
    Move::Sep,
];

fn move_of(token: &Token) -> Option<Move> {
    Some(match token {
        Token::Begin => return None,
        Token::Sep => Move::Sep,
        Token::Feature(_) => Move::PushSeries,
        Token::Const(_) => Move::PushConst,
        Token::Delta(_) => Move::PushDelta,
        Token::Op(op) => match op.class() {
            OpClass::Unary => Move::Unary,
            OpClass::Binary => Move::Binary,
            OpClass::Rolling => Move::Rolling,
            OpClass::PairRolling => Move::PairRolling,
        },
    })
}

fn move_index(m: Move) -> usize {
    MOVES.iter().position(|&x| x == m).unwrap()
}

/// Applies one move to a kind stack, returning `None` when it is ill typed.
fn apply(stack: &[Kind], m: Move) -> Option<Vec<Kind>> {
    use Kind::*;
    let top = stack.last().copied();
    if top == Some(Delta) && !matches!(m, Move::Rolling | Move::PairRolling) {
        return None;
    }
    let n = stack.len();
    let mut next = stack.to_vec();
    match m {
        Move::PushSeries => next.push(Series),
        Move::PushConst => next.push(Const),
        Move::PushDelta => {
            if top != Some(Series) {
                return None;
            }
            next.push(Delta);
        }
        Move::Unary => {
            if top != Some(Series) {
                return None;
            }
        }
        Move::Binary => {
            if n < 2 {
                return None;
            }
            let (a, b) = (stack[n - 2], stack[n - 1]);
            if a == Delta || (a == Const && b == Const) {
                return None;
            }
            next.truncate(n - 2);
            next.push(Series);
        }
        Move::Rolling => {
            if n < 2 || stack[n - 1] != Delta || stack[n - 2] != Series {
                return None;
            }
            next.truncate(n - 2);
            next.push(Series);
        }
        Move::PairRolling => {
            if n < 3 || stack[n - 1] != Delta || stack[n - 2] != Series || stack[n - 3] != Series
            {
                return None;
            }
            next.truncate(n - 3);
            next.push(Series);
        }
        Move::Sep => {
            if stack != [Series] {
                return None;
            }
            next.clear();
        }
    }
    Some(next)
}

fn stack_key(stack: &[Kind]) -> u64 {
    let mut key = stack.len() as u64;
    for (i, k) in stack.iter().enumerate() {
        let code = match k {
            Kind::Series => 1u64,
            Kind::Const => 2,
            Kind::Delta => 3,
        };
        key |= code << (6 + 2 * i);
    }
    key
}

fn state_key(stack: &[Kind], budget: usize) -> u64 {
    (stack_key(stack) << 6) | budget as u64
}

/// Kind-level moves that the configured vocabulary can actually produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveSet([bool; 8]);

impl MoveSet {
    pub fn all() -> Self {
        MoveSet([true; 8])
    }

    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let mut set = [false; 8];
        for m in vocab.tokens().iter().filter_map(move_of) {
            set[move_index(m)] = true;
        }
        MoveSet(set)
    }

    fn has(&self, m: Move) -> bool {
        self.0[move_index(m)]
    }
}

/// Parser/automaton state reconstructed from a token prefix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StackState {
    pub stack: Vec<Kind>,
    /// Tokens emitted so far, `Begin` included.
    pub tokens_emitted: usize,
}

impl StackState {
    /// The state right after `Begin`.
    pub fn initial() -> Self {
        Self {
            stack: Vec::new(),
            tokens_emitted: 1,
        }
    }

    /// Deterministic successor; `None` if the token is ill typed here.
    pub fn successor(&self, token: &Token) -> Option<StackState> {
        let m = move_of(token)?;
        Some(StackState {
            stack: apply(&self.stack, m)?,
            tokens_emitted: self.tokens_emitted + 1,
        })
    }

    /// Replays a prefix that starts with `Begin`.
    pub fn from_prefix(prefix: &[Token]) -> Option<StackState> {
        let (first, rest) = prefix.split_first()?;
        if *first != Token::Begin {
            return None;
        }
        rest.iter()
            .try_fold(StackState::initial(), |s, t| s.successor(t))
    }

    pub fn is_complete(&self) -> bool {
        self.stack.is_empty() && self.tokens_emitted > 1
    }
}

#[derive(Debug, Clone)]
pub struct Grammar {
    max_len: usize,
    moves: MoveSet,
    reach: HashMap<u64, bool>,
}

impl Grammar {
    pub const DEFAULT_MAX_LEN: usize = 20;

    pub fn new(max_len: usize, moves: MoveSet) -> Self {
        assert!(max_len >= 3, "max_len must leave room for BEG, one operand and SEP");
        let mut grammar = Self {
            max_len,
            moves,
            reach: HashMap::new(),
        };
        let mut reach = HashMap::new();
        let mut seen = std::collections::HashSet::new();
        let mut frontier = vec![(Vec::new(), max_len - 1)];
        while let Some((stack, budget)) = frontier.pop() {
            if !seen.insert(state_key(&stack, budget)) {
                continue;
            }
            grammar.can_finish_memo(&stack, budget, &mut reach);
            if budget < 2 {
                continue;
            }
            for m in MOVES {
                if m == Move::Sep || !moves.has(m) {
                    continue;
                }
                if let Some(next) = apply(&stack, m) {
                    if grammar.can_finish_memo(&next, budget - 1, &mut reach) {
                        frontier.push((next, budget - 1));
                    }
                }
            }
        }
        grammar.reach = reach;
        grammar
    }

    pub fn standard() -> Self {
        Self::new(Self::DEFAULT_MAX_LEN, MoveSet::all())
    }

    pub fn for_vocab(vocab: &Vocabulary, max_len: usize) -> Self {
        Self::new(max_len, MoveSet::from_vocab(vocab))
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Number of distinct (stack, budget) entries in the reachability table.
    pub fn table_size(&self) -> usize {
        self.reach.len()
    }

    fn can_finish_memo(&self, stack: &[Kind], budget: usize, memo: &mut HashMap<u64, bool>) -> bool {
        if budget == 0 {
            return false;
        }
        if stack == [Kind::Series] {
            return true;
        }
        let key = state_key(stack, budget);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let mut ok = false;
        if budget >= 2 {
            for m in MOVES {
                if m == Move::Sep || !self.moves.has(m) {
                    continue;
                }
                if let Some(next) = apply(stack, m) {
                    if self.can_finish_memo(&next, budget - 1, memo) {
                        ok = true;
                        break;
                    }
                }
            }
        }
        memo.insert(key, ok);
        ok
    }

    /// Whether `Sep` can be reached from `stack` using at most `budget` more
    /// tokens (the `Sep` included).
    pub fn can_finish(&self, stack: &[Kind], budget: usize) -> bool {
        if budget == 0 {
            return false;
        }
        if stack == [Kind::Series] {
            return true;
        }
        match self.reach.get(&state_key(stack, budget)) {
            Some(&v) => v,
            None => self.can_finish_memo(stack, budget, &mut HashMap::new()),
        }
    }

    fn move_legal(&self, stack: &[Kind], m: Move, budget: usize) -> bool {
        if !self.moves.has(m) || budget == 0 {
            return false;
        }
        match apply(stack, m) {
            None => false,
            Some(_) if m == Move::Sep => true,
            Some(next) => self.can_finish(&next, budget - 1),
        }
    }

    /// Whether `token` may follow `state` when `budget_remaining` tokens
    /// (including the final `Sep`) are still allowed.
    pub fn is_legal(&self, state: &StackState, token: &Token, budget_remaining: usize) -> bool {
        match move_of(token) {
            Some(m) => self.move_legal(&state.stack, m, budget_remaining),
            None => false,
        }
    }

    /// Legality mask over the vocabulary for the given state.
    pub fn legal_actions(
        &self,
        vocab: &Vocabulary,
        state: &StackState,
        budget_remaining: usize,
    ) -> Vec<bool> {
        let mut mask = vec![false; vocab.len()];
        self.legal_actions_into(vocab, state, budget_remaining, &mut mask);
        mask
    }

    pub fn legal_actions_into(
        &self,
        vocab: &Vocabulary,
        state: &StackState,
        budget_remaining: usize,
        mask: &mut [bool],
    ) {
        let mut by_move = [false; 8];
        for (i, m) in MOVES.iter().enumerate() {
            by_move[i] = self.move_legal(&state.stack, *m, budget_remaining);
        }
        for (slot, token) in mask.iter_mut().zip(vocab.tokens()) {
            *slot = move_of(token).is_some_and(|m| by_move[move_index(m)]);
        }
    }

    /// Remaining budget for a state under this grammar.
    pub fn budget(&self, state: &StackState) -> usize {
        self.max_len.saturating_sub(state.tokens_emitted)
    }
}
