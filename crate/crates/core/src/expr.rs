//! Program trees: construction, prefix-notation parsing and printing,
//! random generation, and structural hashing.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::primitives::{Primitive, PrimitiveSet};

/// Variable tokens for the first four axes; higher axes use `v<k>`.
const AXIS_NAMES: [&str; 4] = ["x", "y", "z", "w"];

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Variable(usize),
    Constant(f32),
    Call(Arc<Primitive>, Vec<Tree>),
}

#[derive(Debug)]
struct Node {
    kind: NodeKind,
    hash: u64,
    size: usize,
    depth: usize,
}

/// An immutable expression tree. Cloning is cheap: subtrees are shared.
///
/// Each node stores its structural hash, node count and depth, all computed
/// bottom-up at construction.
#[derive(Clone)]
pub struct Tree(Arc<Node>);

impl PartialEq for Primitive {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.hash == other.0.hash
                && self.0.size == other.0.size
                && match (&self.0.kind, &other.0.kind) {
                    (NodeKind::Variable(a), NodeKind::Variable(b)) => a == b,
                    (NodeKind::Constant(a), NodeKind::Constant(b)) => a.to_bits() == b.to_bits(),
                    (NodeKind::Call(p, a), NodeKind::Call(q, b)) => p.name() == q.name() && a == b,
                    _ => false,
                })
    }
}

impl Eq for Tree {}

impl fmt::Debug for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tree({self})")
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn combine(h: u64, v: u64) -> u64 {
    mix(h.rotate_left(23) ^ v.wrapping_add(0x9e37_79b9_7f4a_7c15))
}

// FNV-1a over the operator name; stable across runs and platforms.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Tree {
    fn from_kind(kind: NodeKind) -> Self {
        let (hash, size, depth) = match &kind {
            NodeKind::Variable(i) => (combine(1, *i as u64), 1, 0),
            NodeKind::Constant(c) => (combine(2, c.to_bits() as u64), 1, 0),
            NodeKind::Call(p, children) => {
                let mut h = combine(3, name_hash(p.name()));
                let mut size = 1;
                let mut depth = 0;
                for c in children {
                    h = combine(h, c.0.hash);
                    size += c.0.size;
                    depth = depth.max(c.0.depth + 1);
                }
                (combine(h, children.len() as u64), size, depth)
            }
        };
        Tree(Arc::new(Node { kind, hash, size, depth }))
    }

    pub fn variable(axis: usize) -> Self {
        Self::from_kind(NodeKind::Variable(axis))
    }

    pub fn constant(value: f32) -> Self {
        Self::from_kind(NodeKind::Constant(value))
    }

    /// Function node. Arity is not checked here; `parse` and the generators
    /// only build well-formed trees, see [`Tree::validate`].
    pub fn call(op: Arc<Primitive>, children: Vec<Tree>) -> Self {
        Self::from_kind(NodeKind::Call(op, children))
    }

    pub fn kind(&self) -> &NodeKind {
        &self.0.kind
    }

    pub fn children(&self) -> &[Tree] {
        match &self.0.kind {
            NodeKind::Call(_, c) => c,
            _ => &[],
        }
    }

    /// Structural hash: equal trees hash equal, constants by bit pattern.
    pub fn subtree_hash(&self) -> u64 {
        self.0.hash
    }

    /// Single node has depth 0.
    pub fn depth(&self) -> usize {
        self.0.depth
    }

    pub fn node_count(&self) -> usize {
        self.0.size
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self.0.kind, NodeKind::Call(..))
    }

    /// Preorder iteration over all subtrees, starting with `self`.
    pub fn preorder(&self) -> Preorder<'_> {
        Preorder { stack: vec![self] }
    }

    /// Subtree at a preorder index.
    pub fn subtree(&self, mut index: usize) -> Option<&Tree> {
        let mut node = self;
        loop {
            if index == 0 {
                return Some(node);
            }
            index -= 1;
            let mut next = None;
            for c in node.children() {
                if index < c.node_count() {
                    next = Some(c);
                    break;
                }
                index -= c.node_count();
            }
            node = next?;
        }
    }

    /// Depth of the node at a preorder index, measured from the root.
    pub fn level_of(&self, mut index: usize) -> Option<usize> {
        let mut node = self;
        let mut level = 0;
        loop {
            if index == 0 {
                return Some(level);
            }
            index -= 1;
            let mut next = None;
            for c in node.children() {
                if index < c.node_count() {
                    next = Some(c);
                    break;
                }
                index -= c.node_count();
            }
            node = next?;
            level += 1;
        }
    }

    /// Copy of `self` with the subtree at `index` replaced. Untouched
    /// branches are shared with the original.
    pub fn replace(&self, index: usize, replacement: Tree) -> Option<Tree> {
        if index == 0 {
            return Some(replacement);
        }
        let NodeKind::Call(op, children) = &self.0.kind else {
            return None;
        };
        let mut offset = 1;
        for (i, c) in children.iter().enumerate() {
            if index < offset + c.node_count() {
                let mut new_children = children.clone();
                new_children[i] = c.replace(index - offset, replacement)?;
                return Some(Tree::call(op.clone(), new_children));
            }
            offset += c.node_count();
        }
        None
    }

    /// Checks arities against `rank` and variable indices against the rank.
    pub fn validate(&self, rank: usize) -> Result<(), String> {
        for t in self.preorder() {
            match t.kind() {
                NodeKind::Variable(i) if *i >= rank => {
                    return Err(format!("variable {} exceeds domain rank {rank}", variable_name(*i)))
                }
                NodeKind::Call(p, c) if c.len() != p.arity_for(rank) => {
                    return Err(format!(
                        "`{}` takes {} arguments, has {}",
                        p.name(),
                        p.arity_for(rank),
                        c.len()
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub struct Preorder<'a> {
    stack: Vec<&'a Tree>,
}

impl<'a> Iterator for Preorder<'a> {
    type Item = &'a Tree;

    fn next(&mut self) -> Option<&'a Tree> {
        let t = self.stack.pop()?;
        self.stack.extend(t.children().iter().rev());
        Some(t)
    }
}

pub fn variable_name(axis: usize) -> String {
    AXIS_NAMES.get(axis).map_or_else(|| format!("v{axis}"), |s| s.to_string())
}

fn variable_index(token: &str) -> Option<usize> {
    if let Some(i) = AXIS_NAMES.iter().position(|n| *n == token) {
        return Some(i);
    }
    let digits = token.strip_prefix('v')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl fmt::Display for Tree {
    /// Canonical prefix form, e.g. `add(x, mult(y, 0.5))`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.kind {
            NodeKind::Variable(i) => f.write_str(&variable_name(*i)),
            // Display for f32 is the shortest string that parses back exactly.
            NodeKind::Constant(c) => write!(f, "{c}"),
            NodeKind::Call(p, children) => {
                write!(f, "{}(", p.name())?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseErrorKind {
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("expected {expected}, found `{found}`")]
    Expected { expected: &'static str, found: String },
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{name}` needs rank > {axis}, domain rank is {rank}")]
    VariableBeyondRank { name: String, axis: usize, rank: usize },
    #[error("`{name}` takes {expected} arguments, found {found}")]
    ArityMismatch { name: String, expected: usize, found: usize },
    #[error("invalid number `{0}`")]
    BadNumber(String),
    #[error("trailing input after expression")]
    Trailing,
}

/// A parse failure at a byte offset into the input.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{kind} at position {position}")]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    /// The input with a caret under the failure position.
    pub fn render(&self, input: &str) -> String {
        format!("{input}\n{}^ {}", " ".repeat(self.position), self)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token<'a> {
    Ident(&'a str),
    Number(&'a str),
    Open,
    Close,
    Comma,
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    set: &'a PrimitiveSet,
    rank: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, position: usize, kind: ParseErrorKind) -> ParseError {
        ParseError { position, kind }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    /// Returns the next token and its start offset.
    fn next(&mut self) -> Result<(Token<'a>, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return Ok((Token::End, start));
        };
        let tok = match c {
            '(' => Token::Open,
            ')' => Token::Close,
            ',' => Token::Comma,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let len = rest
                    .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                    .unwrap_or(rest.len());
                self.pos += len;
                return Ok((Token::Ident(&rest[..len]), start));
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let bytes = rest.as_bytes();
                let mut len = 1;
                while len < bytes.len() {
                    let b = bytes[len];
                    let exp_sign = (b == b'-' || b == b'+') && matches!(bytes[len - 1], b'e' | b'E');
                    if b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'E' || exp_sign {
                        len += 1;
                    } else {
                        break;
                    }
                }
                self.pos += len;
                return Ok((Token::Number(&rest[..len]), start));
            }
            other => return Err(self.err(start, ParseErrorKind::UnexpectedChar(other))),
        };
        self.pos += 1;
        Ok((tok, start))
    }

    fn peek(&mut self) -> Result<(Token<'a>, usize), ParseError> {
        let saved = self.pos;
        let t = self.next();
        self.pos = saved;
        t
    }

    fn describe(tok: &Token<'_>) -> String {
        match tok {
            Token::Ident(s) | Token::Number(s) => s.to_string(),
            Token::Open => "(".into(),
            Token::Close => ")".into(),
            Token::Comma => ",".into(),
            Token::End => "end of input".into(),
        }
    }

    fn expr(&mut self) -> Result<Tree, ParseError> {
        let (tok, at) = self.next()?;
        match tok {
            Token::Number(text) => {
                let v: f32 = text
                    .parse()
                    .map_err(|_| self.err(at, ParseErrorKind::BadNumber(text.into())))?;
                if !v.is_finite() {
                    return Err(self.err(at, ParseErrorKind::BadNumber(text.into())));
                }
                Ok(Tree::constant(v))
            }
            Token::Ident(name) => {
                if matches!(self.peek()?.0, Token::Open) {
                    self.next()?;
                    self.call(name, at)
                } else {
                    let axis = variable_index(name)
                        .ok_or_else(|| self.err(at, ParseErrorKind::UnknownVariable(name.into())))?;
                    if axis >= self.rank {
                        return Err(self.err(
                            at,
                            ParseErrorKind::VariableBeyondRank { name: name.into(), axis, rank: self.rank },
                        ));
                    }
                    Ok(Tree::variable(axis))
                }
            }
            Token::End => Err(self.err(at, ParseErrorKind::UnexpectedEnd)),
            other => Err(self.err(
                at,
                ParseErrorKind::Expected { expected: "an expression", found: Self::describe(&other) },
            )),
        }
    }

    fn call(&mut self, name: &str, at: usize) -> Result<Tree, ParseError> {
        let op = self
            .set
            .get(name)
            .cloned()
            .ok_or_else(|| self.err(at, ParseErrorKind::UnknownOperator(name.into())))?;
        let expected = op.arity_for(self.rank);
        let mut children = Vec::with_capacity(expected);
        if matches!(self.peek()?.0, Token::Close) {
            let (_, close) = self.next()?;
            return Err(self.err(
                close,
                ParseErrorKind::ArityMismatch { name: name.into(), expected, found: 0 },
            ));
        }
        loop {
            children.push(self.expr()?);
            let (tok, pos) = self.next()?;
            match tok {
                Token::Comma => continue,
                Token::Close => {
                    if children.len() != expected {
                        return Err(self.err(
                            pos,
                            ParseErrorKind::ArityMismatch {
                                name: name.into(),
                                expected,
                                found: children.len(),
                            },
                        ));
                    }
                    return Ok(Tree::call(op, children));
                }
                Token::End => return Err(self.err(pos, ParseErrorKind::UnexpectedEnd)),
                other => {
                    return Err(self.err(
                        pos,
                        ParseErrorKind::Expected { expected: "`,` or `)`", found: Self::describe(&other) },
                    ))
                }
            }
        }
    }
}

/// Parses prefix notation such as `add(x, mult(y, 0.5))`.
///
/// Variables are `x y z w` for axes 0..3 and `v<k>` for any axis.
pub fn parse(text: &str, set: &PrimitiveSet, rank: usize) -> Result<Tree, ParseError> {
    let mut p = Parser { src: text, pos: 0, set, rank };
    let tree = p.expr()?;
    let (tok, at) = p.next()?;
    if tok != Token::End {
        return Err(p.err(at, ParseErrorKind::Trailing));
    }
    Ok(tree)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Full,
    Grow,
}

/// Random tree generation over a (possibly restricted) operator set.
///
/// Terminal symbols are the `rank` variables plus one ephemeral constant
/// symbol; constants are drawn uniformly from `[-1, 1]` when chosen.
pub struct Generator<'a> {
    functions: Vec<&'a Arc<Primitive>>,
    rank: usize,
}

impl<'a> Generator<'a> {
    pub fn new(set: &'a PrimitiveSet, rank: usize) -> Self {
        Self { functions: set.iter().collect(), rank }
    }

    fn terminal<R: Rng + ?Sized>(&self, rng: &mut R) -> Tree {
        let pick = rng.gen_range(0..=self.rank);
        if pick < self.rank {
            Tree::variable(pick)
        } else {
            Tree::constant(rng.gen_range(-1.0f32..=1.0))
        }
    }

    fn function<R: Rng + ?Sized>(&self, rng: &mut R, level: usize, target: usize, min: usize, method: Method) -> Tree {
        let op = self.functions[rng.gen_range(0..self.functions.len())].clone();
        let children = (0..op.arity_for(self.rank))
            .map(|_| self.node(rng, level + 1, target, min, method))
            .collect();
        Tree::call(op, children)
    }

    fn node<R: Rng + ?Sized>(&self, rng: &mut R, level: usize, target: usize, min: usize, method: Method) -> Tree {
        if level >= target || self.functions.is_empty() {
            return self.terminal(rng);
        }
        let choose_function = match method {
            Method::Full => true,
            Method::Grow if level < min => true,
            Method::Grow => {
                let terminals = self.rank + 1;
                rng.gen_range(0..self.functions.len() + terminals) < self.functions.len()
            }
        };
        if choose_function {
            self.function(rng, level, target, min, method)
        } else {
            self.terminal(rng)
        }
    }

    /// Full trees have every leaf at the target depth; grow trees stop
    /// anywhere between `min_depth` and the target. The target is drawn
    /// uniformly from `[min_depth, max_depth]`.
    pub fn random_tree<R: Rng + ?Sized>(&self, method: Method, min_depth: usize, max_depth: usize, rng: &mut R) -> Tree {
        assert!(min_depth <= max_depth, "min_depth {min_depth} > max_depth {max_depth}");
        let target = rng.gen_range(min_depth..=max_depth);
        self.node(rng, 0, target, min_depth.min(target), method)
    }

    /// Ramped half-and-half: depth targets cycle through
    /// `min_depth..=max_depth`, and within each target the methods alternate
    /// full, grow. Grow trees may stop anywhere from `min_depth` up to their
    /// target.
    pub fn ramped_half_and_half<R: Rng + ?Sized>(
        &self,
        pop_size: usize,
        min_depth: usize,
        max_depth: usize,
        rng: &mut R,
    ) -> Vec<Tree> {
        let buckets = max_depth - min_depth + 1;
        (0..pop_size)
            .map(|i| {
                let depth = min_depth + (i / 2) % buckets;
                let method = if i % 2 == 0 { Method::Full } else { Method::Grow };
                self.node(rng, 0, depth, min_depth, method)
            })
            .collect()
    }
}

/// Free-function form of [`Generator::random_tree`].
pub fn random_tree<R: Rng + ?Sized>(
    method: Method,
    min_depth: usize,
    max_depth: usize,
    set: &PrimitiveSet,
    rank: usize,
    rng: &mut R,
) -> Tree {
    Generator::new(set, rank).random_tree(method, min_depth, max_depth, rng)
}

/// Free-function form of [`Generator::ramped_half_and_half`].
pub fn ramped_half_and_half<R: Rng + ?Sized>(
    pop_size: usize,
    min_depth: usize,
    max_depth: usize,
    set: &PrimitiveSet,
    rank: usize,
    rng: &mut R,
) -> Vec<Individual> {
    Generator::new(set, rank)
        .ramped_half_and_half(pop_size, min_depth, max_depth, rng)
        .into_iter()
        .map(Individual::new)
        .collect()
}

/// A program plus its fitness once evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub tree: Tree,
    pub fitness: Option<f64>,
}

impl Individual {
    pub fn new(tree: Tree) -> Self {
        Self { tree, fitness: None }
    }

    pub fn with_fitness(tree: Tree, fitness: f64) -> Self {
        Self { tree, fitness: Some(fitness) }
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    pub fn nodes(&self) -> usize {
        self.tree.node_count()
    }

    /// True once fitness has been computed.
    pub fn is_valid(&self) -> bool {
        self.fitness.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set() -> PrimitiveSet {
        PrimitiveSet::default()
    }

    fn p(s: &str) -> Tree {
        parse(s, &set(), 2).unwrap()
    }

    /// Leaf levels, collected by explicit recursion.
    fn leaf_levels(t: &Tree, level: usize, out: &mut Vec<usize>) {
        if t.is_terminal() {
            out.push(level);
        }
        for c in t.children() {
            leaf_levels(c, level + 1, out);
        }
    }

    #[test]
    fn parses_simple_call() {
        let t = p("add(x, y)");
        match t.kind() {
            NodeKind::Call(op, c) => {
                assert_eq!(op.name(), "add");
                assert_eq!(c[0], Tree::variable(0));
                assert_eq!(c[1], Tree::variable(1));
            }
            _ => panic!(),
        }
        assert_eq!(t.to_string(), "add(x, y)");
    }

    #[test]
    fn parses_protected_division_literal() {
        let t = p("div(1.0, 0.0)");
        assert_eq!(t.to_string(), "div(1, 0)");
        assert_eq!(p("pow(x, -4)").to_string(), "pow(x, -4)");
        assert_eq!(p("add(x,1e-3)").to_string(), "add(x, 0.001)");
    }

    #[test]
    fn arity_mismatch_points_at_close_paren() {
        let e = parse("add(x)", &set(), 2).unwrap_err();
        assert_eq!(e.position, 5);
        assert!(matches!(e.kind, ParseErrorKind::ArityMismatch { expected: 2, found: 1, .. }));
        let e = parse("neg()", &set(), 2).unwrap_err();
        assert_eq!(e.position, 4);
    }

    #[test]
    fn reports_errors_with_positions() {
        let s = set();
        let e = parse("add(x", &s, 2).unwrap_err();
        assert_eq!((e.position, e.kind.clone()), (5, ParseErrorKind::UnexpectedEnd));
        assert!(e.render("add(x").contains("     ^"));
        let e = parse("foo(x)", &s, 2).unwrap_err();
        assert_eq!(e.position, 0);
        assert!(matches!(e.kind, ParseErrorKind::UnknownOperator(_)));
        let e = parse("add(x, z)", &s, 2).unwrap_err();
        assert_eq!(e.position, 7);
        assert!(matches!(e.kind, ParseErrorKind::VariableBeyondRank { axis: 2, .. }));
        let e = parse("add(x, y))", &s, 2).unwrap_err();
        assert_eq!((e.position, e.kind), (9, ParseErrorKind::Trailing));
        let e = parse("add(x y)", &s, 2).unwrap_err();
        assert_eq!(e.position, 6);
        let e = parse("add(x, 1e99)", &s, 2).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::BadNumber(_)));
        let e = parse("add(x, #)", &s, 2).unwrap_err();
        assert_eq!((e.position, e.kind), (7, ParseErrorKind::UnexpectedChar('#')));
        let e = parse("q", &s, 2).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::UnknownVariable(_)));
    }

    #[test]
    fn high_rank_variables() {
        let t = parse("add(v4, w)", &set(), 5).unwrap();
        assert_eq!(t.to_string(), "add(v4, w)");
        assert_eq!(parse("v1", &set(), 2).unwrap(), Tree::variable(1));
    }

    #[test]
    fn warp_arity_depends_on_rank() {
        assert!(parse("warp(x, y, x)", &set(), 2).is_ok());
        assert!(parse("warp(x, x)", &set(), 2).is_err());
        assert!(parse("warp(x, x)", &set(), 1).is_ok());
    }

    #[test]
    fn depth_and_count() {
        assert_eq!((p("x").depth(), p("x").node_count()), (0, 1));
        assert_eq!((p("add(x,y)").depth(), p("add(x,y)").node_count()), (1, 3));
        let t = p("add(x, mult(y, sin(0.5)))");
        assert_eq!((t.depth(), t.node_count()), (3, 6));
    }

    #[test]
    fn hashing_is_structural() {
        assert_eq!(p("add(x,y)").subtree_hash(), p("add(x, y)").subtree_hash());
        assert_ne!(p("add(x,y)").subtree_hash(), p("add(y,x)").subtree_hash());
        assert_ne!(p("sub(x,y)").subtree_hash(), p("add(x,y)").subtree_hash());
        assert_ne!(Tree::constant(0.0).subtree_hash(), Tree::constant(-0.0).subtree_hash());
        assert_ne!(Tree::constant(0.0), Tree::constant(-0.0));
    }

    #[test]
    fn subtree_replace_and_levels() {
        let t = p("add(x, mult(y, 0.5))");
        let kinds: Vec<String> = t.preorder().map(|s| s.to_string()).collect();
        assert_eq!(kinds, vec!["add(x, mult(y, 0.5))", "x", "mult(y, 0.5)", "y", "0.5"]);
        for (i, s) in t.preorder().enumerate() {
            assert_eq!(t.subtree(i).unwrap(), s);
        }
        assert!(t.subtree(5).is_none());
        assert_eq!(t.level_of(4), Some(2));
        let r = t.replace(2, p("neg(x)")).unwrap();
        assert_eq!(r.to_string(), "add(x, neg(x))");
        assert_eq!(r.node_count(), 4);
        assert_eq!(r.subtree_hash(), p("add(x, neg(x))").subtree_hash());
        assert_eq!(t.replace(0, p("y")).unwrap(), p("y"));
        assert!(t.replace(9, p("y")).is_none());
    }

    #[test]
    fn full_depth_zero_is_terminal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = random_tree(Method::Full, 0, 0, &set(), 2, &mut rng);
            assert!(t.is_terminal());
        }
    }

    #[test]
    fn full_trees_have_all_leaves_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = set().restrict(&["add", "sin", "if", "warp"]).unwrap();
        for _ in 0..100 {
            let t = random_tree(Method::Full, 3, 3, &s, 2, &mut rng);
            let mut levels = vec![];
            leaf_levels(&t, 0, &mut levels);
            assert!(levels.iter().all(|&l| l == 3), "{t}");
            assert_eq!(t.depth(), 3);
            t.validate(2).unwrap();
        }
    }

    #[test]
    fn grow_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = set().restrict(&["add", "sub", "mult", "div", "sin", "cos", "exp", "log"]).unwrap();
        for _ in 0..1000 {
            let t = random_tree(Method::Grow, 0, 12, &s, 2, &mut rng);
            assert!(t.depth() <= 12);
            for n in t.preorder() {
                if let NodeKind::Constant(c) = n.kind() {
                    assert!((-1.0..=1.0).contains(c));
                }
            }
        }
        for _ in 0..200 {
            let t = random_tree(Method::Grow, 4, 6, &s, 2, &mut rng);
            assert!((4..=6).contains(&t.depth()), "{}", t.depth());
        }
    }

    #[test]
    fn ramped_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = set().restrict(&["add", "sub", "mult", "div", "sin", "cos", "exp", "log"]).unwrap();
        let pop = ramped_half_and_half(50, 2, 12, &s, 2, &mut rng);
        assert_eq!(pop.len(), 50);
        assert!(pop.iter().all(|i| i.depth() <= 12 && !i.is_valid()));
        let pair = ramped_half_and_half(2, 2, 12, &s, 2, &mut rng);
        assert_eq!(pair[0].depth(), 2);
        assert!(pair[1].depth() <= 2);
    }

    #[test]
    fn ramp_depths_are_uniform() {
        // Full-method members realise their target exactly, so their depths
        // trace the ramp. Chi-square against uniform over 11 buckets.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = set().restrict(&["neg", "sin", "add"]).unwrap();
        let trees = Generator::new(&s, 2).ramped_half_and_half(10_000, 2, 12, &mut rng);
        let mut counts = [0usize; 11];
        for t in trees.iter().step_by(2) {
            counts[t.depth() - 2] += 1;
        }
        let expected = 5000.0 / 11.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 10 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 29.59, "chi2 = {chi2}, counts {counts:?}");
        assert!(trees.iter().skip(1).step_by(2).all(|t| (2..=12).contains(&t.depth())));
        // grow members may stop short of their target
        let short = trees
            .iter()
            .enumerate()
            .skip(1)
            .step_by(2)
            .filter(|(i, t)| t.depth() < 2 + (i / 2) % 11)
            .count();
        assert!(short > 1000, "{short}");
    }

    #[test]
    fn registered_operator_appears_in_random_trees() {
        let mut s = set();
        s.register(Primitive::elementwise("cube", 1, |a| a[0] * a[0] * a[0])).unwrap();
        let active = s.restrict(&["add", "sub", "cube"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Generator::new(&active, 2);
        let with_cube = (0..1000)
            .filter(|_| {
                g.random_tree(Method::Grow, 1, 4, &mut rng)
                    .preorder()
                    .any(|n| matches!(n.kind(), NodeKind::Call(op, _) if op.name() == "cube"))
            })
            .count();
        assert!(with_cube > 500, "{with_cube}");
        assert_eq!(parse("cube(x)", &s, 2).unwrap().to_string(), "cube(x)");
    }

    #[test]
    fn hash_collisions_are_negligible() {
        use std::collections::{HashMap, HashSet};
        let s = set().restrict(&["add", "sub", "mult", "div", "sin", "cos", "exp", "log", "if"]).unwrap();
        let g = Generator::new(&s, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen: HashSet<String> = HashSet::new();
        let mut by_hash: HashMap<u64, usize> = HashMap::new();
        let mut collisions = 0usize;
        while seen.len() < 1_000_000 {
            let t = g.random_tree(Method::Grow, 1, 5, &mut rng);
            let text = t.to_string();
            if seen.insert(text) {
                *by_hash.entry(t.subtree_hash()).or_default() += 1;
            }
        }
        for (_, n) in by_hash {
            collisions += n - 1;
        }
        assert!((collisions as f64) / 1e6 < 1e-6, "{collisions} collisions");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn print_parse_round_trip(seed in any::<u64>(), depth in 0usize..8, full in any::<bool>()) {
                let s = set();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let method = if full { Method::Full } else { Method::Grow };
                let narrow = s.restrict(&["add", "sin", "clip", "warp", "pow", "lerp"]).unwrap();
                let t = random_tree(method, 0, depth, &narrow, 3, &mut rng);
                let back = parse(&t.to_string(), &s, 3).unwrap();
                prop_assert_eq!(back.subtree_hash(), t.subtree_hash());
                prop_assert_eq!(back, t);
            }
        }
    }
}
