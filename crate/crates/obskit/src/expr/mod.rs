//! Small symbolic expression kernel.
//!
//! Expressions are immutable trees behind `Arc`, hash-consed per node (the
//! hash and node count are computed once at construction). Constructors
//! normalize as they build: sums are flattened with like terms collected,
//! products are flattened with exponents merged and quotients lifted to a
//! single top-level `Div`, constants fold exactly as rationals. This keeps
//! every expression in a deterministic shape without a separate
//! canonicalization pass.
//!
//! The kernel knows nothing about models: symbols are plain interned ids,
//! and it is the caller's business which of them are states, parameters or
//! inputs.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

mod diff;
mod eval;
mod parse;
mod print;

pub use diff::{differentiate, gradient};
pub use eval::evaluate;
pub use parse::{parse_expr, ParseError};

pub type SymId = u32;

/// Interner mapping symbol names to dense ids.
#[derive(Debug, Default, Clone)]
pub struct SymbolTable {
    names: Vec<String>,
    index: HashMap<String, SymId>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> SymId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as SymId;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<SymId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: SymId) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug)]
pub enum Node {
    Num(BigRational),
    Sym(SymId),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    /// Quotient, kept binary and only at the top of a product chain.
    Div(Expr, Expr),
    /// Integer power, exponent never 0 or 1 after construction.
    Pow(Expr, i32),
    Sin(Expr),
    Cos(Expr),
    Tan(Expr),
    Atan(Expr),
    Sqrt(Expr),
}

struct Inner {
    hash: u64,
    nodes: u32,
    node: Node,
}

/// Immutable shared expression.
#[derive(Clone)]
pub struct Expr(Arc<Inner>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

const FNV_SEED: u64 = 0xcbf29ce484222325;

fn hash_node(node: &Node) -> u64 {
    let mut h = FNV_SEED;
    match node {
        Node::Num(r) => {
            h = fnv1a(&[0], h);
            h = fnv1a(&r.numer().to_signed_bytes_le(), h);
            h = fnv1a(&[0xff], h);
            h = fnv1a(&r.denom().to_signed_bytes_le(), h);
        }
        Node::Sym(s) => {
            h = fnv1a(&[1], h);
            h = fnv1a(&s.to_le_bytes(), h);
        }
        Node::Add(ts) => {
            h = fnv1a(&[2], h);
            for t in ts {
                h = fnv1a(&t.hash().to_le_bytes(), h);
            }
        }
        Node::Mul(fs) => {
            h = fnv1a(&[3], h);
            for f in fs {
                h = fnv1a(&f.hash().to_le_bytes(), h);
            }
        }
        Node::Div(a, b) => {
            h = fnv1a(&[4], h);
            h = fnv1a(&a.hash().to_le_bytes(), h);
            h = fnv1a(&b.hash().to_le_bytes(), h);
        }
        Node::Pow(b, k) => {
            h = fnv1a(&[5], h);
            h = fnv1a(&b.hash().to_le_bytes(), h);
            h = fnv1a(&k.to_le_bytes(), h);
        }
        Node::Sin(u) => {
            h = fnv1a(&[6], h);
            h = fnv1a(&u.hash().to_le_bytes(), h);
        }
        Node::Cos(u) => {
            h = fnv1a(&[7], h);
            h = fnv1a(&u.hash().to_le_bytes(), h);
        }
        Node::Tan(u) => {
            h = fnv1a(&[8], h);
            h = fnv1a(&u.hash().to_le_bytes(), h);
        }
        Node::Atan(u) => {
            h = fnv1a(&[9], h);
            h = fnv1a(&u.hash().to_le_bytes(), h);
        }
        Node::Sqrt(u) => {
            h = fnv1a(&[10], h);
            h = fnv1a(&u.hash().to_le_bytes(), h);
        }
    }
    h
}

/// Nonnegative gcd on rationals: gcd of numerators over lcm of denominators.
fn rat_gcd(a: &BigRational, b: &BigRational) -> BigRational {
    if a.is_zero() {
        return b.abs();
    }
    if b.is_zero() {
        return a.abs();
    }
    BigRational::new(a.numer().gcd(b.numer()), a.denom().lcm(b.denom()))
}

fn count_nodes(node: &Node) -> u32 {
    let children: u32 = match node {
        Node::Num(_) | Node::Sym(_) => 0,
        Node::Add(ts) | Node::Mul(ts) => ts.iter().map(|t| t.inner_nodes()).sum(),
        Node::Div(a, b) => a.inner_nodes() + b.inner_nodes(),
        Node::Pow(b, _) => b.inner_nodes(),
        Node::Sin(u) | Node::Cos(u) | Node::Tan(u) | Node::Atan(u) | Node::Sqrt(u) => {
            u.inner_nodes()
        }
    };
    children.saturating_add(1)
}

fn disc(node: &Node) -> u8 {
    match node {
        Node::Num(_) => 0,
        Node::Sym(_) => 1,
        Node::Add(_) => 2,
        Node::Mul(_) => 3,
        Node::Div(..) => 4,
        Node::Pow(..) => 5,
        Node::Sin(_) => 6,
        Node::Cos(_) => 7,
        Node::Tan(_) => 8,
        Node::Atan(_) => 9,
        Node::Sqrt(_) => 10,
    }
}

impl Expr {
    fn raw(node: Node) -> Expr {
        let hash = hash_node(&node);
        let nodes = count_nodes(&node);
        Expr(Arc::new(Inner { hash, nodes, node }))
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn hash(&self) -> u64 {
        self.0.hash
    }

    fn inner_nodes(&self) -> u32 {
        self.0.nodes
    }

    /// Total tree size counting shared subtrees once per occurrence.
    pub fn nodes(&self) -> usize {
        self.0.nodes as usize
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    // ---- leaf constructors ----

    pub fn num(r: BigRational) -> Expr {
        Expr::raw(Node::Num(r))
    }

    pub fn int(i: i64) -> Expr {
        Expr::num(BigRational::from(BigInt::from(i)))
    }

    pub fn frac(n: i64, d: i64) -> Expr {
        Expr::num(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    pub fn sym(s: SymId) -> Expr {
        Expr::raw(Node::Sym(s))
    }

    pub fn as_num(&self) -> Option<&BigRational> {
        match self.node() {
            Node::Num(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.node(), Node::Num(r) if r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self.node(), Node::Num(r) if r.is_one())
    }

    // ---- compound constructors ----

    /// Flatten, fold constants, collect like terms, extract the numeric
    /// content, sort. Every `Add` this produces is primitive: the gcd of its
    /// coefficients is one and the reference term (smallest core in the
    /// deterministic order) has a positive coefficient. The content, if any,
    /// is returned as an outer numeric factor, which keeps the result
    /// independent of how a sum was associated while it was built.
    pub fn add(terms: Vec<Expr>) -> Expr {
        let mut constant = BigRational::zero();
        // core -> coefficient
        let mut coeffs: Vec<(Expr, BigRational)> = Vec::new();
        let mut index: HashMap<u64, Vec<usize>> = HashMap::new();

        fn push(
            e: Expr,
            constant: &mut BigRational,
            coeffs: &mut Vec<(Expr, BigRational)>,
            index: &mut HashMap<u64, Vec<usize>>,
        ) {
            match e.node() {
                Node::Num(r) => *constant += r,
                Node::Add(ts) => {
                    for t in ts {
                        push(t.clone(), constant, coeffs, index);
                    }
                }
                // a scaled sum is a sum of scaled terms, not a product core
                Node::Mul(fs) if fs.len() == 2 => {
                    if let (Node::Num(c), Node::Add(ts)) = (fs[0].node(), fs[1].node()) {
                        let c = Expr::num(c.clone());
                        for t in ts {
                            push(
                                Expr::mul(vec![c.clone(), t.clone()]),
                                constant,
                                coeffs,
                                index,
                            );
                        }
                    } else {
                        push_term(e, coeffs, index);
                    }
                }
                _ => push_term(e, coeffs, index),
            }
        }

        fn push_term(
            e: Expr,
            coeffs: &mut Vec<(Expr, BigRational)>,
            index: &mut HashMap<u64, Vec<usize>>,
        ) {
            let (c, core) = e.split_coeff();
            let slot = index.entry(core.hash()).or_default();
            for &i in slot.iter() {
                if coeffs[i].0 == core {
                    coeffs[i].1 += &c;
                    return;
                }
            }
            slot.push(coeffs.len());
            coeffs.push((core, c));
        }

        for t in terms {
            push(t, &mut constant, &mut coeffs, &mut index);
        }

        let mut parts: Vec<(Expr, BigRational)> = coeffs
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .collect();
        if !constant.is_zero() {
            parts.push((Expr::one(), constant));
        }

        match parts.len() {
            0 => Expr::zero(),
            1 => {
                let (core, c) = parts.pop().unwrap();
                Expr::mul(vec![Expr::num(c), core])
            }
            _ => {
                let mut content = parts
                    .iter()
                    .fold(BigRational::zero(), |acc, (_, c)| rat_gcd(&acc, c));
                // the reference core is scale invariant, so the sign choice
                // does not depend on the content we are about to divide out
                let reference = parts
                    .iter()
                    .map(|(core, _)| core)
                    .min_by(|a, b| Expr::cmp_det(a, b))
                    .unwrap();
                let neg = parts
                    .iter()
                    .find(|(core, _)| core == reference)
                    .map(|(_, c)| c.is_negative())
                    .unwrap();
                if neg {
                    content = -content;
                }
                if !content.is_one() {
                    for p in parts.iter_mut() {
                        p.1 /= &content;
                    }
                }
                let mut out: Vec<Expr> = parts
                    .into_iter()
                    .map(|(core, c)| Expr::mul(vec![Expr::num(c), core]))
                    .collect();
                out.sort_by(Expr::cmp_det);
                let sum = Expr::raw(Node::Add(out));
                if content.is_one() {
                    sum
                } else {
                    Expr::mul(vec![Expr::num(content), sum])
                }
            }
        }
    }

    /// Split a term into (numeric coefficient, residual core).
    fn split_coeff(&self) -> (BigRational, Expr) {
        match self.node() {
            Node::Num(r) => (r.clone(), Expr::one()),
            Node::Mul(fs) => {
                if let Node::Num(r) = fs[0].node() {
                    let rest: Vec<Expr> = fs[1..].to_vec();
                    let core = if rest.len() == 1 {
                        rest.into_iter().next().unwrap()
                    } else {
                        Expr::raw(Node::Mul(rest))
                    };
                    (r.clone(), core)
                } else {
                    (BigRational::one(), self.clone())
                }
            }
            _ => (BigRational::one(), self.clone()),
        }
    }

    /// Flatten, fold constants, merge exponents, lift quotients out.
    pub fn mul(factors: Vec<Expr>) -> Expr {
        let mut num_factors: Vec<Expr> = Vec::new();
        let mut den_factors: Vec<Expr> = Vec::new();

        fn split(e: Expr, num: &mut Vec<Expr>, den: &mut Vec<Expr>) {
            match e.node() {
                Node::Mul(fs) => {
                    for f in fs {
                        split(f.clone(), num, den);
                    }
                }
                Node::Div(a, b) => {
                    split(a.clone(), num, den);
                    split(b.clone(), den, num);
                }
                _ => num.push(e),
            }
        }

        for f in factors {
            split(f, &mut num_factors, &mut den_factors);
        }

        if den_factors.is_empty() {
            return Expr::mul_flat(num_factors);
        }
        Expr::div(Expr::mul_flat(num_factors), Expr::mul_flat(den_factors))
    }

    /// Product of quotient-free factors.
    fn mul_flat(factors: Vec<Expr>) -> Expr {
        let mut constant = BigRational::one();
        // base -> exponent
        let mut powers: Vec<(Expr, i32)> = Vec::new();
        let mut index: HashMap<u64, Vec<usize>> = HashMap::new();

        for e in factors {
            match e.node() {
                Node::Num(r) => {
                    if r.is_zero() {
                        return Expr::zero();
                    }
                    constant *= r;
                }
                _ => {
                    let (base, k) = match e.node() {
                        Node::Pow(b, k) => (b.clone(), *k),
                        _ => (e.clone(), 1),
                    };
                    let slot = index.entry(base.hash()).or_default();
                    let mut merged = false;
                    for &i in slot.iter() {
                        if powers[i].0 == base {
                            powers[i].1 += k;
                            merged = true;
                            break;
                        }
                    }
                    if !merged {
                        slot.push(powers.len());
                        powers.push((base, k));
                    }
                }
            }
        }

        if constant.is_zero() {
            return Expr::zero();
        }

        let mut neg_pow: Vec<Expr> = Vec::new();
        let mut out: Vec<Expr> = Vec::new();
        for (base, k) in powers {
            match k.cmp(&0) {
                Ordering::Equal => {}
                Ordering::Greater => out.push(Expr::pow_node(base, k)),
                Ordering::Less => neg_pow.push(Expr::pow_node(base, -k)),
            }
        }
        out.sort_by(Expr::cmp_det);

        let numer = {
            let mut v = out;
            if !constant.is_one() || v.is_empty() {
                v.insert(0, Expr::num(constant));
            }
            match v.len() {
                1 => v.pop().unwrap(),
                _ => {
                    if v.len() == 2 && v[0].is_one() {
                        v.pop().unwrap()
                    } else {
                        Expr::raw(Node::Mul(v))
                    }
                }
            }
        };

        if neg_pow.is_empty() {
            return numer;
        }
        neg_pow.sort_by(Expr::cmp_det);
        let denom = match neg_pow.len() {
            1 => neg_pow.pop().unwrap(),
            _ => Expr::raw(Node::Mul(neg_pow)),
        };
        Expr::div(numer, denom)
    }

    /// Power with folding; never produces exponent 0 or 1.
    fn pow_node(base: Expr, k: i32) -> Expr {
        debug_assert!(k > 0);
        if k == 1 {
            return base;
        }
        if let Node::Sqrt(u) = base.node() {
            if k % 2 == 0 {
                return Expr::pow_node(u.clone(), k / 2).intern_pow();
            }
        }
        if let Node::Num(r) = base.node() {
            let mut acc = BigRational::one();
            for _ in 0..k {
                acc *= r;
            }
            return Expr::num(acc);
        }
        Expr::raw(Node::Pow(base, k))
    }

    fn intern_pow(self) -> Expr {
        self
    }

    pub fn pow(self, k: i32) -> Expr {
        if k == 0 {
            return Expr::one();
        }
        match self.node() {
            Node::Num(r) => {
                if k > 0 {
                    let mut acc = BigRational::one();
                    for _ in 0..k {
                        acc *= r;
                    }
                    Expr::num(acc)
                } else {
                    let mut acc = BigRational::one();
                    for _ in 0..(-k) {
                        acc *= r;
                    }
                    Expr::num(acc.recip())
                }
            }
            Node::Pow(b, j) => b.clone().pow(j.saturating_mul(k)),
            Node::Div(a, b) => {
                if k > 0 {
                    Expr::div(a.clone().pow(k), b.clone().pow(k))
                } else {
                    Expr::div(b.clone().pow(-k), a.clone().pow(-k))
                }
            }
            _ => {
                if k > 0 {
                    Expr::pow_node(self, k)
                } else {
                    Expr::div(Expr::one(), Expr::pow_node(self, -k))
                }
            }
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        if b.is_one() || a.is_zero() {
            return a;
        }
        if let (Node::Num(x), Node::Num(y)) = (a.node(), b.node()) {
            if !y.is_zero() {
                return Expr::num(x / y);
            }
        }
        if let Node::Num(y) = b.node() {
            if !y.is_zero() {
                return Expr::mul(vec![Expr::num(y.recip()), a]);
            }
        }
        // flatten nested quotients so Div stays top-level
        let (an, ad) = a.split_quot();
        let (bn, bd) = b.split_quot();
        let numer = Expr::mul_flat_pair(an, bd);
        let denom = Expr::mul_flat_pair(ad, bn);
        if denom.is_one() {
            return numer;
        }
        if let Node::Num(y) = denom.node() {
            if !y.is_zero() {
                return Expr::mul(vec![Expr::num(y.recip()), numer]);
            }
        }
        if numer == denom {
            return Expr::one();
        }
        // cancel shared factor sets cheaply: identical trees only
        Expr::raw(Node::Div(numer, denom))
    }

    fn split_quot(&self) -> (Expr, Expr) {
        match self.node() {
            Node::Div(a, b) => (a.clone(), b.clone()),
            _ => (self.clone(), Expr::one()),
        }
    }

    fn mul_flat_pair(a: Expr, b: Expr) -> Expr {
        if a.is_one() {
            return b;
        }
        if b.is_one() {
            return a;
        }
        Expr::mul(vec![a, b])
    }

    pub fn neg(self) -> Expr {
        Expr::mul(vec![Expr::int(-1), self])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::add(vec![a, b.neg()])
    }

    fn odd_wrap(arg: Expr, make: fn(Expr) -> Node) -> Expr {
        // sin(-u) = -sin(u) style normalization for odd functions
        let (c, _core) = arg.split_coeff();
        if c.is_negative() {
            let inner = arg.neg();
            return Expr::raw(make(inner)).neg();
        }
        Expr::raw(make(arg))
    }

    pub fn sin(arg: Expr) -> Expr {
        if arg.is_zero() {
            return Expr::zero();
        }
        Expr::odd_wrap(arg, Node::Sin)
    }

    pub fn cos(arg: Expr) -> Expr {
        if arg.is_zero() {
            return Expr::one();
        }
        let (c, _) = arg.split_coeff();
        if c.is_negative() {
            return Expr::raw(Node::Cos(arg.neg()));
        }
        Expr::raw(Node::Cos(arg))
    }

    pub fn tan(arg: Expr) -> Expr {
        if arg.is_zero() {
            return Expr::zero();
        }
        Expr::odd_wrap(arg, Node::Tan)
    }

    pub fn atan(arg: Expr) -> Expr {
        if arg.is_zero() {
            return Expr::zero();
        }
        Expr::odd_wrap(arg, Node::Atan)
    }

    pub fn sqrt(arg: Expr) -> Expr {
        if let Node::Num(r) = arg.node() {
            if !r.is_negative() {
                let (ns, nr) = (r.numer().sqrt(), r.denom().sqrt());
                if &(&ns * &ns) == r.numer() && &(&nr * &nr) == r.denom() {
                    return Expr::num(BigRational::new(ns, nr));
                }
            }
        }
        Expr::raw(Node::Sqrt(arg))
    }

    /// Visit every symbol occurrence in the tree.
    pub fn visit_syms(&self, f: &mut impl FnMut(SymId)) {
        match self.node() {
            Node::Num(_) => {}
            Node::Sym(s) => f(*s),
            Node::Add(ts) | Node::Mul(ts) => {
                for t in ts {
                    t.visit_syms(f);
                }
            }
            Node::Div(a, b) => {
                a.visit_syms(f);
                b.visit_syms(f);
            }
            Node::Pow(b, _) => b.visit_syms(f),
            Node::Sin(u) | Node::Cos(u) | Node::Tan(u) | Node::Atan(u) | Node::Sqrt(u) => {
                u.visit_syms(f)
            }
        }
    }

    /// Deterministic total order: hash first, structural tie-break.
    pub fn cmp_det(a: &Expr, b: &Expr) -> Ordering {
        if a.ptr_eq(b) {
            return Ordering::Equal;
        }
        match a.hash().cmp(&b.hash()) {
            Ordering::Equal => a.cmp_structural(b),
            o => o,
        }
    }

    fn cmp_structural(&self, other: &Expr) -> Ordering {
        let (x, y) = (self.node(), other.node());
        match disc(x).cmp(&disc(y)) {
            Ordering::Equal => {}
            o => return o,
        }
        match (x, y) {
            (Node::Num(a), Node::Num(b)) => a.cmp(b),
            (Node::Sym(a), Node::Sym(b)) => a.cmp(b),
            (Node::Add(a), Node::Add(b)) | (Node::Mul(a), Node::Mul(b)) => {
                match a.len().cmp(&b.len()) {
                    Ordering::Equal => {
                        for (u, v) in a.iter().zip(b.iter()) {
                            match Expr::cmp_det(u, v) {
                                Ordering::Equal => {}
                                o => return o,
                            }
                        }
                        Ordering::Equal
                    }
                    o => o,
                }
            }
            (Node::Div(a1, b1), Node::Div(a2, b2)) => match Expr::cmp_det(a1, a2) {
                Ordering::Equal => Expr::cmp_det(b1, b2),
                o => o,
            },
            (Node::Pow(b1, k1), Node::Pow(b2, k2)) => match Expr::cmp_det(b1, b2) {
                Ordering::Equal => k1.cmp(k2),
                o => o,
            },
            (Node::Sin(a), Node::Sin(b))
            | (Node::Cos(a), Node::Cos(b))
            | (Node::Tan(a), Node::Tan(b))
            | (Node::Atan(a), Node::Atan(b))
            | (Node::Sqrt(a), Node::Sqrt(b)) => Expr::cmp_det(a, b),
            _ => unreachable!("discriminants matched"),
        }
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        if self.ptr_eq(other) {
            return true;
        }
        self.hash() == other.hash() && self.cmp_structural(other) == Ordering::Equal
    }
}

impl Eq for Expr {}

impl std::hash::Hash for Expr {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

/// Rebuild an expression bottom-up through the normalizing constructors.
///
/// Constructors already normalize everything they touch, so this is mostly
/// useful after structural surgery or parsing, and as the idempotent
/// canonical form for tests.
pub fn simplify(e: &Expr) -> Expr {
    let mut memo: HashMap<usize, Expr> = HashMap::new();
    simplify_memo(e, &mut memo)
}

fn simplify_memo(e: &Expr, memo: &mut HashMap<usize, Expr>) -> Expr {
    let key = Arc::as_ptr(&e.0) as usize;
    if let Some(r) = memo.get(&key) {
        return r.clone();
    }
    let out = match e.node() {
        Node::Num(_) | Node::Sym(_) => e.clone(),
        Node::Add(ts) => Expr::add(ts.iter().map(|t| simplify_memo(t, memo)).collect()),
        Node::Mul(fs) => Expr::mul(fs.iter().map(|f| simplify_memo(f, memo)).collect()),
        Node::Div(a, b) => Expr::div(simplify_memo(a, memo), simplify_memo(b, memo)),
        Node::Pow(b, k) => simplify_memo(b, memo).pow(*k),
        Node::Sin(u) => Expr::sin(simplify_memo(u, memo)),
        Node::Cos(u) => Expr::cos(simplify_memo(u, memo)),
        Node::Tan(u) => Expr::tan(simplify_memo(u, memo)),
        Node::Atan(u) => Expr::atan(simplify_memo(u, memo)),
        Node::Sqrt(u) => Expr::sqrt(simplify_memo(u, memo)),
    };
    memo.insert(key, out.clone());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(table: &mut SymbolTable, n: &str) -> Expr {
        Expr::sym(table.intern(n))
    }

    #[test]
    fn add_collects_like_terms() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        let e = Expr::add(vec![x.clone(), x.clone(), Expr::int(3), Expr::int(-3)]);
        assert_eq!(e, Expr::mul(vec![Expr::int(2), x]));
    }

    #[test]
    fn add_cancels_to_zero() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        let e = Expr::sub(x.clone(), x);
        assert!(e.is_zero());
    }

    #[test]
    fn mul_merges_exponents() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        let e = Expr::mul(vec![x.clone(), x.clone(), x.clone()]);
        assert_eq!(e, x.pow(3));
    }

    #[test]
    fn mul_by_zero_annihilates() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        assert!(Expr::mul(vec![Expr::zero(), x]).is_zero());
    }

    #[test]
    fn quotients_lift_to_top() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        let y = s(&mut t, "y");
        let z = s(&mut t, "z");
        let e = Expr::mul(vec![Expr::div(x.clone(), y.clone()), z.clone()]);
        match e.node() {
            Node::Div(n, d) => {
                assert_eq!(n, &Expr::mul(vec![x, z]));
                assert_eq!(d, &y);
            }
            other => panic!("expected top-level quotient, got {other:?}"),
        }
    }

    #[test]
    fn pow_of_pow_multiplies() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        assert_eq!(x.clone().pow(2).pow(3), x.pow(6));
    }

    #[test]
    fn negative_pow_becomes_quotient() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        let e = x.clone().pow(-2);
        assert_eq!(e, Expr::div(Expr::one(), x.pow(2)));
    }

    #[test]
    fn trig_constant_folds() {
        assert!(Expr::sin(Expr::zero()).is_zero());
        assert!(Expr::cos(Expr::zero()).is_one());
        assert!(Expr::tan(Expr::zero()).is_zero());
    }

    #[test]
    fn odd_function_pulls_sign() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        let e = Expr::sin(x.clone().neg());
        assert_eq!(e, Expr::sin(x.clone()).neg());
        let c = Expr::cos(x.clone().neg());
        assert_eq!(c, Expr::cos(x));
    }

    #[test]
    fn sqrt_of_square_number() {
        assert_eq!(Expr::sqrt(Expr::frac(9, 4)), Expr::frac(3, 2));
    }

    #[test]
    fn even_power_of_sqrt_unwraps() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        assert_eq!(Expr::sqrt(x.clone()).pow(2), x);
    }

    #[test]
    fn deterministic_ordering() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        let y = s(&mut t, "y");
        let a = Expr::add(vec![x.clone(), y.clone()]);
        let b = Expr::add(vec![y, x]);
        assert_eq!(a, b);
    }

    #[test]
    fn simplify_is_idempotent() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        let y = s(&mut t, "y");
        let e = Expr::div(
            Expr::add(vec![
                Expr::mul(vec![x.clone(), Expr::cos(y.clone())]),
                Expr::mul(vec![Expr::cos(y.clone()), x.clone()]),
            ]),
            Expr::sub(x.clone(), x.clone().neg()),
        );
        let s1 = simplify(&e);
        let s2 = simplify(&s1);
        assert_eq!(s1, s2);
    }

    #[test]
    fn node_count_tracks_size() {
        let mut t = SymbolTable::new();
        let x = s(&mut t, "x");
        assert_eq!(x.nodes(), 1);
        let e = Expr::add(vec![x.clone(), Expr::sin(x)]);
        assert_eq!(e.nodes(), 4); // add, x, sin, x
    }
}
