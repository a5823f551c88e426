//! The behavior specification language: propositional combinations of
//! environment objectives with quantitative semantics.
//!
//! A specification `ψ` is built from atomic predicates over the objectives of
//! a multi-objective environment:
//!
//! ```text
//! ψ := oN | -oN | oN >= c | oN <= c | ( ψ ) | ψ & ψ | ψ | ψ
//! ```
//!
//! and evaluates against a reward vector `r ∈ [0,1]^n` to a satisfaction
//! degree in `[0,1]`:
//!
//! - `oN`      → `r[N]`            (soft maximization)
//! - `-oN`     → `1 - r[N]`        (soft minimization)
//! - `oN >= c` → `1 if r[N] >= c else 0` (hard constraint)
//! - `oN <= c` → `1 if r[N] <= c else 0`
//! - `ψ & ψ`   → min of the operands
//! - `ψ | ψ`   → max of the operands
//!
//! `&` binds tighter than `|`; both are left-associative. Thresholds are
//! drawn from the fixed constant set `{0.0, 0.1, ..., 1.0}` and are stored in
//! tenths so that rendering and parsing are exact.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use arrayvec::ArrayVec;
use rand::Rng;

use crate::rng::{self, TAG_FINGERPRINT};

/// Maximum number of objectives any environment exposes (`o1` through `o6`).
pub const MAX_OBJECTIVES: usize = 6;

/// Number of distinct threshold constants (`0.0`, `0.1`, ..., `1.0`).
pub const N_THRESHOLDS: usize = 11;

/// Errors raised by parsing, evaluation, and reward-vector construction.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("unknown token at byte {pos}")]
    Lex { pos: usize },
    #[error("{msg} at token {pos}")]
    Parse { pos: usize, msg: &'static str },
    #[error("objective o{index} out of range; environment has {max} objectives")]
    Index { index: u8, max: usize },
    #[error("reward entry {value} outside [0,1]")]
    RewardRange { value: f64 },
    #[error("reward vector length {len} exceeds {max} objectives")]
    RewardLength { len: usize, max: usize },
}

/// A threshold constant, one of `{0.0, 0.1, ..., 1.0}`, held in tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Threshold(u8);

impl Threshold {
    pub fn from_tenths(tenths: u8) -> Option<Self> {
        (tenths <= 10).then_some(Self(tenths))
    }

    pub fn tenths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }

    fn token(self) -> TokenId {
        TokenId(FIRST_CONST_TOKEN + self.0)
    }
}

/// Abstract syntax tree of a behavior specification.
///
/// Objective indices are 1-based, matching the surface syntax (`Atom(2)` is
/// `o2`). Negation exists only on atoms; the grammar does not admit negation
/// of compound formulas.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SpecAst {
    Atom(u8),
    NegAtom(u8),
    Geq(u8, Threshold),
    Leq(u8, Threshold),
    And(Box<SpecAst>, Box<SpecAst>),
    Or(Box<SpecAst>, Box<SpecAst>),
}

/// Per-objective rewards in `[0,1]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector(ArrayVec<f64, MAX_OBJECTIVES>);

impl RewardVector {
    pub fn new(values: &[f64]) -> Result<Self, SpecError> {
        if values.len() > MAX_OBJECTIVES {
            return Err(SpecError::RewardLength { len: values.len(), max: MAX_OBJECTIVES });
        }
        for &v in values {
            if !(0.0..=1.0).contains(&v) {
                return Err(SpecError::RewardRange { value: v });
            }
        }
        let mut inner = ArrayVec::new();
        inner.try_extend_from_slice(values).expect("length checked");
        Ok(Self(inner))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

// ---------------------------------------------------------------------------
// Vocabulary and token sequences

/// Identifier of a token in the fixed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenId(u8);

impl TokenId {
    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

const FIRST_CONST_TOKEN: u8 = 13;

/// The fixed token vocabulary: `o1..o6`, the operators, and the constants.
pub const VOCAB: [&str; 24] = [
    "o1", "o2", "o3", "o4", "o5", "o6", // 0..6
    "-", "&", "|", ">=", "<=", "(", ")", // 6..13
    "0.0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0",
];

/// Size of the token vocabulary.
pub const VOCAB_SIZE: usize = VOCAB.len();

pub fn token_str(id: TokenId) -> &'static str {
    VOCAB[id.index()]
}

/// A specification as an ordered token-id sequence over the fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Row-major one-hot matrix of shape `(len, VOCAB_SIZE)`.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut m = alloc::vec![0.0; self.0.len() * VOCAB_SIZE];
        for (row, id) in self.0.iter().enumerate() {
            m[row * VOCAB_SIZE + id.index()] = 1.0;
        }
        m
    }

    /// Inverse of [`TokenSequence::one_hot`]; `None` if a row is not one-hot.
    pub fn from_one_hot(matrix: &[f64]) -> Option<Self> {
        if matrix.len() % VOCAB_SIZE != 0 {
            return None;
        }
        let mut ids = Vec::with_capacity(matrix.len() / VOCAB_SIZE);
        for row in matrix.chunks_exact(VOCAB_SIZE) {
            let mut hot = None;
            for (j, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    if hot.is_some() {
                        return None;
                    }
                    hot = Some(j);
                } else if v != 0.0 {
                    return None;
                }
            }
            ids.push(TokenId(hot? as u8));
        }
        Some(Self(ids))
    }
}

// ---------------------------------------------------------------------------
// Rendering and tokenization

// Precedence: | = 1, & = 2, leaves bind tightest.
fn precedence(ast: &SpecAst) -> u8 {
    match ast {
        SpecAst::Or(..) => 1,
        SpecAst::And(..) => 2,
        _ => 3,
    }
}

fn emit_tokens(ast: &SpecAst, parent_prec: u8, right_child: bool, out: &mut Vec<TokenId>) {
    let prec = precedence(ast);
    // A child is parenthesized when its connective binds looser than the
    // parent's, or when it matches the parent's and sits in the right slot
    // (left-associative parsing would otherwise regroup it).
    let parens = prec < parent_prec || (prec == parent_prec && right_child && prec < 3);
    if parens {
        out.push(TokenId(11)); // "("
    }
    match ast {
        SpecAst::Atom(i) => out.push(TokenId(i - 1)),
        SpecAst::NegAtom(i) => {
            out.push(TokenId(6)); // "-"
            out.push(TokenId(i - 1));
        }
        SpecAst::Geq(i, c) => {
            out.push(TokenId(i - 1));
            out.push(TokenId(9)); // ">="
            out.push(c.token());
        }
        SpecAst::Leq(i, c) => {
            out.push(TokenId(i - 1));
            out.push(TokenId(10)); // "<="
            out.push(c.token());
        }
        SpecAst::And(a, b) => {
            emit_tokens(a, prec, false, out);
            out.push(TokenId(7)); // "&"
            emit_tokens(b, prec, true, out);
        }
        SpecAst::Or(a, b) => {
            emit_tokens(a, prec, false, out);
            out.push(TokenId(8)); // "|"
            emit_tokens(b, prec, true, out);
        }
    }
    if parens {
        out.push(TokenId(12)); // ")"
    }
}

/// Canonical token sequence of a specification.
pub fn tokenize(ast: &SpecAst) -> TokenSequence {
    let mut out = Vec::new();
    emit_tokens(ast, 0, false, &mut out);
    TokenSequence(out)
}

/// Canonical string of a specification: tokens joined by single spaces
/// (negation attaches to its atom, as in `-o3`), with parentheses exactly
/// where re-parse fidelity requires them.
///
/// `parse(&render(a), n)` reproduces `a` structurally.
pub fn render(ast: &SpecAst) -> String {
    let tokens = tokenize(ast);
    let mut s = String::new();
    let mut glue = false;
    for (k, id) in tokens.ids().iter().enumerate() {
        if k > 0 && !glue {
            s.push(' ');
        }
        glue = id.0 == 6; // "-"
        s.push_str(token_str(*id));
    }
    s
}

impl SpecAst {
    /// Largest objective index referenced by any atom.
    pub fn max_objective(&self) -> u8 {
        match self {
            SpecAst::Atom(i) | SpecAst::NegAtom(i) | SpecAst::Geq(i, _) | SpecAst::Leq(i, _) => *i,
            SpecAst::And(a, b) | SpecAst::Or(a, b) => a.max_objective().max(b.max_objective()),
        }
    }

    /// Number of atomic predicates (leaves).
    pub fn leaf_count(&self) -> usize {
        match self {
            SpecAst::And(a, b) | SpecAst::Or(a, b) => a.leaf_count() + b.leaf_count(),
            _ => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Lexing and parsing

#[derive(Debug, Clone, Copy, PartialEq)]
enum Lexeme {
    Obj(u8),
    Neg,
    And,
    Or,
    Geq,
    Leq,
    LParen,
    RParen,
    Const(Threshold),
}

fn lex(text: &str) -> Result<Vec<(Lexeme, usize)>, SpecError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'-' => {
                out.push((Lexeme::Neg, i));
                i += 1;
            }
            b'&' => {
                out.push((Lexeme::And, i));
                i += 1;
            }
            b'|' => {
                out.push((Lexeme::Or, i));
                i += 1;
            }
            b'(' => {
                out.push((Lexeme::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Lexeme::RParen, i));
                i += 1;
            }
            b'>' | b'<' => {
                if bytes.get(i + 1) != Some(&b'=') {
                    return Err(SpecError::Lex { pos: i });
                }
                out.push((if b == b'>' { Lexeme::Geq } else { Lexeme::Leq }, i));
                i += 2;
            }
            b'o' => {
                let d = bytes.get(i + 1).copied().unwrap_or(0);
                if !(b'1'..=b'6').contains(&d) {
                    return Err(SpecError::Lex { pos: i });
                }
                out.push((Lexeme::Obj(d - b'0'), i));
                i += 2;
            }
            b'0' | b'1' => {
                // Constants are exactly "0.0".."0.9" and "1.0".
                let frac = bytes.get(i + 2).copied().unwrap_or(0);
                let valid = bytes.get(i + 1) == Some(&b'.')
                    && frac.is_ascii_digit()
                    && (b == b'0' || frac == b'0');
                if !valid {
                    return Err(SpecError::Lex { pos: i });
                }
                let tenths = if b == b'1' { 10 } else { frac - b'0' };
                out.push((Lexeme::Const(Threshold(tenths)), i));
                i += 3;
            }
            _ => return Err(SpecError::Lex { pos: i }),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [(Lexeme, usize)],
    pos: usize,
    n_objectives: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Lexeme> {
        self.tokens.get(self.pos).map(|t| t.0)
    }

    fn bump(&mut self) -> Option<Lexeme> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: &'static str) -> SpecError {
        SpecError::Parse { pos: self.pos, msg }
    }

    fn or_expr(&mut self) -> Result<SpecAst, SpecError> {
        let mut node = self.and_expr()?;
        while self.peek() == Some(Lexeme::Or) {
            self.bump();
            let rhs = self.and_expr()?;
            node = SpecAst::Or(Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn and_expr(&mut self) -> Result<SpecAst, SpecError> {
        let mut node = self.primary()?;
        while self.peek() == Some(Lexeme::And) {
            self.bump();
            let rhs = self.primary()?;
            node = SpecAst::And(Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn objective(&mut self) -> Result<u8, SpecError> {
        match self.bump() {
            Some(Lexeme::Obj(i)) => {
                if usize::from(i) > self.n_objectives {
                    Err(SpecError::Index { index: i, max: self.n_objectives })
                } else {
                    Ok(i)
                }
            }
            _ => Err(self.error("expected objective")),
        }
    }

    fn primary(&mut self) -> Result<SpecAst, SpecError> {
        match self.peek() {
            Some(Lexeme::Neg) => {
                self.bump();
                // Negation only applies to a bare atom.
                if !matches!(self.peek(), Some(Lexeme::Obj(_))) {
                    return Err(self.error("negation applies only to atoms"));
                }
                Ok(SpecAst::NegAtom(self.objective()?))
            }
            Some(Lexeme::Obj(_)) => {
                let i = self.objective()?;
                match self.peek() {
                    Some(Lexeme::Geq) => {
                        self.bump();
                        Ok(SpecAst::Geq(i, self.constant()?))
                    }
                    Some(Lexeme::Leq) => {
                        self.bump();
                        Ok(SpecAst::Leq(i, self.constant()?))
                    }
                    _ => Ok(SpecAst::Atom(i)),
                }
            }
            Some(Lexeme::LParen) => {
                self.bump();
                let node = self.or_expr()?;
                if self.bump() != Some(Lexeme::RParen) {
                    return Err(self.error("expected ')'"));
                }
                Ok(node)
            }
            _ => Err(self.error("expected specification")),
        }
    }

    fn constant(&mut self) -> Result<Threshold, SpecError> {
        match self.bump() {
            Some(Lexeme::Const(c)) => Ok(c),
            _ => Err(self.error("expected threshold constant")),
        }
    }
}

/// Parses a specification string against an environment with `n_objectives`
/// objectives.
pub fn parse(text: &str, n_objectives: usize) -> Result<SpecAst, SpecError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens: &tokens, pos: 0, n_objectives };
    let ast = parser.or_expr()?;
    if parser.pos != tokens.len() {
        return Err(parser.error("unexpected trailing tokens"));
    }
    Ok(ast)
}

// ---------------------------------------------------------------------------
// Quantitative semantics

impl SpecAst {
    /// Satisfaction degree of this specification under reward vector `r`.
    ///
    /// Always lands in `[0,1]` when every entry of `r` does.
    pub fn evaluate(&self, r: &[f64]) -> Result<f64, SpecError> {
        let entry = |i: u8| {
            r.get(usize::from(i) - 1)
                .copied()
                .ok_or(SpecError::Index { index: i, max: r.len() })
        };
        match self {
            SpecAst::Atom(i) => entry(*i),
            SpecAst::NegAtom(i) => Ok(1.0 - entry(*i)?),
            SpecAst::Geq(i, c) => Ok(if entry(*i)? >= c.value() { 1.0 } else { 0.0 }),
            SpecAst::Leq(i, c) => Ok(if entry(*i)? <= c.value() { 1.0 } else { 0.0 }),
            SpecAst::And(a, b) => Ok(a.evaluate(r)?.min(b.evaluate(r)?)),
            SpecAst::Or(a, b) => Ok(a.evaluate(r)?.max(b.evaluate(r)?)),
        }
    }
}

/// Evaluates `ast` under reward vector `r`; see [`SpecAst::evaluate`].
pub fn evaluate(r: &RewardVector, ast: &SpecAst) -> Result<f64, SpecError> {
    ast.evaluate(r.as_slice())
}

// ---------------------------------------------------------------------------
// Random generation

/// Generates a grammar-valid specification with between 1 and `max_atoms`
/// atomic predicates over objectives `o1..o{n_objectives}`.
///
/// Leaf kinds, connectives, objective indices, and constants are all drawn
/// uniformly; the tree shape comes from recursive splitting of the leaf
/// budget.
pub fn generate<R: Rng>(rng: &mut R, n_objectives: usize, max_atoms: usize) -> SpecAst {
    assert!((1..=MAX_OBJECTIVES).contains(&n_objectives));
    assert!(max_atoms >= 1);
    let leaves = rng.gen_range(1..=max_atoms);
    generate_with_leaves(rng, n_objectives, leaves)
}

fn generate_with_leaves<R: Rng>(rng: &mut R, n: usize, leaves: usize) -> SpecAst {
    if leaves == 1 {
        let index = rng.gen_range(1..=n) as u8;
        return match rng.gen_range(0..4) {
            0 => SpecAst::Atom(index),
            1 => SpecAst::NegAtom(index),
            2 => SpecAst::Geq(index, Threshold(rng.gen_range(0..=10))),
            _ => SpecAst::Leq(index, Threshold(rng.gen_range(0..=10))),
        };
    }
    let and = rng.gen_range(0..2) == 0;
    let left = rng.gen_range(1..leaves);
    let a = Box::new(generate_with_leaves(rng, n, left));
    let b = Box::new(generate_with_leaves(rng, n, leaves - left));
    if and {
        SpecAst::And(a, b)
    } else {
        SpecAst::Or(a, b)
    }
}

// ---------------------------------------------------------------------------
// Semantic fingerprints

/// Seed of the canonical probe stream for `n >= 4` objectives.
pub const FINGERPRINT_SEED: u64 = 0x5eed;

/// A semantic fingerprint: evaluation results over a probe set, stored as
/// exact bit patterns so fingerprints can key maps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(Vec<u64>);

impl Fingerprint {
    pub fn from_values(values: &[f64]) -> Self {
        Self(values.iter().map(|v| v.to_bits()).collect())
    }
}

/// Evaluates `ast` on every probe, in order.
pub fn fingerprint(ast: &SpecAst, probes: &[RewardVector]) -> Result<Vec<f64>, SpecError> {
    probes.iter().map(|p| evaluate(p, ast)).collect()
}

/// The canonical probe set for an `n`-objective environment.
///
/// For `n <= 3` this is the full grid `{0.0, 0.05, ..., 1.0}^n`, which
/// straddles every threshold boundary since constants lie on a 0.1 grid.
/// For larger `n`, exhaustive grids are too big; instead 4096 seeded uniform
/// draws are combined with per-axis sweeps of `{0.0, 0.1, ..., 1.0}` holding
/// the other axes at 0.5.
pub fn canonical_probes(n: usize) -> Vec<RewardVector> {
    assert!((1..=MAX_OBJECTIVES).contains(&n));
    let mut probes = Vec::new();
    if n <= 3 {
        let steps = 21; // 0.00, 0.05, ..., 1.00
        let mut idx = alloc::vec![0usize; n];
        loop {
            let vals: Vec<f64> = idx.iter().map(|&k| k as f64 * 0.05).collect();
            probes.push(RewardVector::new(&vals).expect("grid values lie in [0,1]"));
            let mut axis = 0;
            loop {
                if axis == n {
                    return probes;
                }
                idx[axis] += 1;
                if idx[axis] < steps {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }
    let mut rng = rng::stream(FINGERPRINT_SEED, TAG_FINGERPRINT, n as u64);
    for _ in 0..4096 {
        let vals: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        probes.push(RewardVector::new(&vals).expect("uniform draws lie in [0,1]"));
    }
    for axis in 0..n {
        for tenth in 0..=10 {
            let mut vals = alloc::vec![0.5; n];
            vals[axis] = f64::from(tenth) / 10.0;
            probes.push(RewardVector::new(&vals).expect("grid values lie in [0,1]"));
        }
    }
    probes
}

/// Fingerprint over the canonical probe set; two specifications with equal
/// canonical fingerprints are declared semantically equivalent.
pub fn canonical_fingerprint(ast: &SpecAst, probes: &[RewardVector]) -> Result<Fingerprint, SpecError> {
    Ok(Fingerprint::from_values(&fingerprint(ast, probes)?))
}

// ---------------------------------------------------------------------------
// Spec-set text format: one canonical string per line

/// Renders a list of specifications as spec-set file content.
pub fn to_lines(asts: &[SpecAst]) -> String {
    let mut s = String::new();
    for ast in asts {
        s.push_str(&render(ast));
        s.push('\n');
    }
    s
}

/// Parses spec-set file content (one specification per line, 0-based line
/// number as identifier).
pub fn from_lines(content: &str, n_objectives: usize) -> Result<Vec<SpecAst>, SpecError> {
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse(l, n_objectives))
        .collect()
}
