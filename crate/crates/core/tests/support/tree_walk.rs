//! Recursive tree-walk reference evaluator and a random program generator.

use factorlab::formula::{evaluate, OpClass};
use factorlab::{Feature, Op, PanelTensor, RpnProgram, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N_ASSETS: usize = 3;
pub const N_DAYS: usize = 30;
const WINDOWS: [u32; 6] = [1, 2, 3, 5, 10, 20];
const CONSTS: [f64; 6] = [-2.0, -0.5, 0.0, 0.5, 1.0, 10.0];

#[derive(Debug, Clone)]
pub enum Node {
    Feat(Feature),
    Const(f64),
    Unary(Op, Box<Node>),
    /// `left` is pushed last and sits on top of the stack.
    Binary(Op, Box<Node>, Box<Node>),
    Rolling(Op, Box<Node>, u32),
    Pair(Op, Box<Node>, Box<Node>, u32),
}

fn ops_of(class: OpClass) -> Vec<Op> {
    Op::ALL.iter().copied().filter(|o| o.class() == class).collect()
}

pub fn gen_series(rng: &mut ChaCha8Rng, depth: usize) -> Node {
    if depth == 0 || rng.random_bool(0.25) {
        return Node::Feat(Feature::ALL[rng.random_range(0..6)]);
    }
    let sub = |rng: &mut ChaCha8Rng| Box::new(gen_series(rng, depth - 1));
    match rng.random_range(0..4) {
        0 => {
            let ops = ops_of(OpClass::Unary);
            Node::Unary(ops[rng.random_range(0..ops.len())], sub(rng))
        }
        1 => {
            let ops = ops_of(OpClass::Binary);
            let op = ops[rng.random_range(0..ops.len())];
            let (l, r) = match rng.random_range(0..3) {
                0 => (sub(rng), Box::new(Node::Const(CONSTS[rng.random_range(0..6)]))),
                1 => (Box::new(Node::Const(CONSTS[rng.random_range(0..6)])), sub(rng)),
                _ => (sub(rng), sub(rng)),
            };
            Node::Binary(op, l, r)
        }
        2 => {
            let ops = ops_of(OpClass::Rolling);
            Node::Rolling(ops[rng.random_range(0..ops.len())], sub(rng), WINDOWS[rng.random_range(0..6)])
        }
        _ => {
            let ops = ops_of(OpClass::PairRolling);
            Node::Pair(
                ops[rng.random_range(0..ops.len())],
                sub(rng),
                sub(rng),
                WINDOWS[rng.random_range(0..6)],
            )
        }
    }
}

fn emit(node: &Node, out: &mut Vec<Token>) {
    match node {
        Node::Feat(f) => out.push(Token::Feature(*f)),
        Node::Const(c) => out.push(Token::Const(*c)),
        Node::Unary(op, x) => {
            emit(x, out);
            out.push(Token::Op(*op));
        }
        Node::Binary(op, l, r) => {
            emit(r, out);
            emit(l, out);
            out.push(Token::Op(*op));
        }
        Node::Rolling(op, x, w) => {
            emit(x, out);
            out.push(Token::Delta(*w));
            out.push(Token::Op(*op));
        }
        Node::Pair(op, x, y, w) => {
            emit(x, out);
            emit(y, out);
            out.push(Token::Delta(*w));
            out.push(Token::Op(*op));
        }
    }
}

pub fn program(node: &Node) -> Option<RpnProgram> {
    let mut tokens = vec![Token::Begin];
    emit(node, &mut tokens);
    tokens.push(Token::Sep);
    RpnProgram::parse(&tokens).ok()
}

/// `[asset][day]` grid with `NaN` for missing.
pub type Grid = Vec<Vec<f64>>;

fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

fn sum(w: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in w {
        s += v;
    }
    s
}

fn var(w: &[f64]) -> f64 {
    if w.len() < 2 {
        return f64::NAN;
    }
    if w.iter().all(|v| *v == w[0]) {
        return 0.0;
    }
    let m = sum(w) / w.len() as f64;
    let mut s = 0.0;
    for v in w {
        s += (v - m) * (v - m);
    }
    s / (w.len() - 1) as f64
}

/// `weights[k]` applies to the value `k` days back.
fn weighted(w: &[f64], raw: &[f64]) -> f64 {
    let total = sum(raw);
    let mut s = 0.0;
    for k in 0..w.len() {
        s += w[w.len() - 1 - k] * (raw[k] / total);
    }
    s
}

fn window_value(op: Op, w: &[f64]) -> f64 {
    let l = w.len();
    match op {
        Op::Mean => sum(w) / l as f64,
        Op::Sum => sum(w),
        Op::Var => var(w),
        Op::Std => var(w).sqrt(),
        Op::Max => w.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)),
        Op::Min => w.iter().fold(f64::INFINITY, |a, b| a.min(*b)),
        Op::Medium => {
            let mut s = w.to_vec();
            s.sort_by(f64::total_cmp);
            if l % 2 == 1 {
                s[l / 2]
            } else {
                0.5 * (s[l / 2 - 1] + s[l / 2])
            }
        }
        Op::Mad => {
            let m = sum(w) / l as f64;
            let dev: Vec<f64> = w.iter().map(|v| (v - m).abs()).collect();
            sum(&dev) / l as f64
        }
        Op::Wma => {
            let raw: Vec<f64> = (0..l).map(|k| (l - k) as f64).collect();
            weighted(w, &raw)
        }
        Op::Ema => {
            let a = 2.0 / (l as f64 + 1.0);
            let mut raw = Vec::with_capacity(l);
            let mut v = 1.0;
            for _ in 0..l {
                raw.push(v);
                v *= 1.0 - a;
            }
            weighted(w, &raw)
        }
        _ => unreachable!(),
    }
}

pub fn walk(node: &Node, panel: &PanelTensor) -> Grid {
    let full = |f: &dyn Fn(usize, usize) -> f64| -> Grid {
        (0..N_ASSETS).map(|a| (0..N_DAYS).map(|d| clean(f(a, d))).collect()).collect()
    };
    match node {
        Node::Feat(f) => full(&|a, d| panel.value(a, *f, d)),
        Node::Const(c) => full(&|_, _| *c),
        Node::Unary(op, x) => {
            let x = walk(x, panel);
            full(&|a, d| match op {
                Op::Abs => x[a][d].abs(),
                _ if x[a][d] > 0.0 => x[a][d].ln(),
                _ => f64::NAN,
            })
        }
        Node::Binary(op, l, r) => {
            let (l, r) = (walk(l, panel), walk(r, panel));
            full(&|a, d| {
                let (x, y) = (l[a][d], r[a][d]);
                if x.is_nan() || y.is_nan() {
                    return f64::NAN;
                }
                match op {
                    Op::Add => x + y,
                    Op::Sub => x - y,
                    Op::Mul => x * y,
                    Op::Div if y == 0.0 => f64::NAN,
                    Op::Div => x / y,
                    Op::Larger => x.max(y),
                    Op::Smaller => x.min(y),
                    _ => unreachable!(),
                }
            })
        }
        Node::Rolling(op, x, w) => {
            let x = walk(x, panel);
            let l = *w as usize;
            full(&|a, d| match op {
                Op::Ref if d >= l => x[a][d - l],
                Op::Delta if d >= l => x[a][d] - x[a][d - l],
                Op::Ref | Op::Delta => f64::NAN,
                _ if d + 1 < l => f64::NAN,
                _ => {
                    let win = &x[a][d + 1 - l..=d];
                    if win.iter().any(|v| v.is_nan()) {
                        f64::NAN
                    } else {
                        window_value(*op, win)
                    }
                }
            })
        }
        Node::Pair(op, x, y, w) => {
            let (x, y) = (walk(x, panel), walk(y, panel));
            let l = *w as usize;
            full(&|a, d| {
                if l < 2 || d + 1 < l {
                    return f64::NAN;
                }
                let (wx, wy) = (&x[a][d + 1 - l..=d], &y[a][d + 1 - l..=d]);
                if wx.iter().chain(wy).any(|v| v.is_nan()) {
                    return f64::NAN;
                }
                let (mx, my) = (sum(wx) / l as f64, sum(wy) / l as f64);
                let prods: Vec<f64> = (0..l).map(|i| (wx[i] - mx) * (wy[i] - my)).collect();
                let cov = sum(&prods) / (l - 1) as f64;
                match op {
                    Op::Cov => cov,
                    _ => {
                        let flat = |s: &[f64]| s.iter().all(|v| *v == s[0]);
                        if flat(wx) || flat(wy) {
                            f64::NAN
                        } else {
                            (cov / (var(wx).sqrt() * var(wy).sqrt())).clamp(-1.0, 1.0)
                        }
                    }
                }
            })
        }
    }
}

pub fn random_panel(rng: &mut ChaCha8Rng) -> PanelTensor {
    let mut p = PanelTensor::synthetic_constant(N_ASSETS, N_DAYS, 0.0);
    for f in Feature::ALL {
        for a in 0..N_ASSETS {
            let mut prev = 1.0;
            for d in 0..N_DAYS {
                let u: f64 = rng.random();
                let v = if u < 0.04 {
                    f64::NAN
                } else if u < 0.08 {
                    0.0
                } else if u < 0.2 {
                    prev
                } else {
                    rng.random_range(-3.0..3.0)
                };
                let v = if f == Feature::Volume { v.abs() } else { v };
                if !v.is_nan() {
                    prev = v;
                }
                p.set(a, f, d, v);
            }
        }
    }
    p
}

/// Evaluates `count` random programs of depth at most 3 on fresh random
/// panels and compares every cell with the tree walk. Returns the number of
/// defined cells compared.
pub fn compare_random_programs(count: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut defined_cells = 0usize;
    while checked < count {
        let node = gen_series(&mut rng, 3);
        let Some(prog) = program(&node) else {
            continue;
        };
        let panel = random_panel(&mut rng);
        let got = evaluate(&prog, &panel).map_err(|e| format!("{prog}: {e}"))?;
        let want = walk(&node, &panel);
        for a in 0..N_ASSETS {
            for d in 0..N_DAYS {
                let (g, w) = (got.get(a, d), want[a][d]);
                if g.is_nan() != w.is_nan() {
                    return Err(format!("{prog} mask differs at ({a},{d}): {g} vs {w}"));
                }
                if !w.is_nan() {
                    if g != w {
                        return Err(format!("{prog} at ({a},{d}): {g} vs {w}"));
                    }
                    defined_cells += 1;
                }
            }
        }
        checked += 1;
    }
    Ok(defined_cells)
}
