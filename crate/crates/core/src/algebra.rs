//! Signature-generic Clifford algebra.
//!
//! Basis blades are stored as bitmasks over the basis vectors (bit `i` set
//! when vector `i` is a factor), in ascending bitmask order: the scalar is
//! blade 0 and the pseudoscalar is blade `2^dim - 1`. Every product goes
//! through a precomputed [`CayleyTable`].

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of basis vectors (64 blades).
pub const MAX_DIM: usize = 6;

/// Squares of the basis vectors, in index order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    metric: Vec<i8>,
    index_base: u8,
}

impl Signature {
    /// `index_base` is the written index of basis vector 0 in blade names:
    /// 1 for `e1, e2, ..`, 0 for spacetime `g0, g1, ..`.
    pub fn new(metric: &[i8], index_base: u8) -> Result<Self> {
        if metric.is_empty() || metric.len() > MAX_DIM {
            return Err(Error::config(format!(
                "signature must have 1..={MAX_DIM} basis vectors, got {}",
                metric.len()
            )));
        }
        if let Some(m) = metric.iter().find(|m| !matches!(m, -1..=1)) {
            return Err(Error::config(format!("metric entry {m} is not one of -1, 0, +1")));
        }
        if index_base > 1 {
            return Err(Error::config("index base must be 0 or 1"));
        }
        Ok(Self {
            metric: metric.to_vec(),
            index_base,
        })
    }

    /// G(p,q,r): `p` positive, then `q` negative, then `r` null vectors.
    ///
    /// Spacetime-style signatures (`p == 1`, `q >= 1`, `r == 0`) number their
    /// basis vectors from 0 so that `g0` is the timelike vector.
    pub fn pqr(p: usize, q: usize, r: usize) -> Result<Self> {
        let mut metric = vec![1i8; p];
        metric.extend(std::iter::repeat_n(-1i8, q));
        metric.extend(std::iter::repeat_n(0i8, r));
        let base = if p == 1 && q >= 1 && r == 0 { 0 } else { 1 };
        Self::new(&metric, base)
    }

    pub fn metric(&self) -> &[i8] {
        &self.metric
    }

    pub fn dim(&self) -> usize {
        self.metric.len()
    }

    pub fn num_blades(&self) -> usize {
        1 << self.dim()
    }

    pub fn index_base(&self) -> u8 {
        self.index_base
    }

    fn counts(&self) -> (usize, usize, usize) {
        let p = self.metric.iter().filter(|&&m| m == 1).count();
        let q = self.metric.iter().filter(|&&m| m == -1).count();
        (p, q, self.dim() - p - q)
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (p, q, r) = self.counts();
        write!(f, "G({p},{q},{r})")
    }
}

/// Bitmask index of a basis blade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Blade(pub u8);

impl Blade {
    pub const SCALAR: Blade = Blade(0);

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn grade(self) -> usize {
        self.0.count_ones() as usize
    }
}

/// Blade-product table: for every pair `(a, b)` the result blade and sign.
#[derive(Debug, Clone)]
pub struct CayleyTable {
    signature: Signature,
    n: usize,
    results: Vec<u8>,
    signs: Vec<i8>,
}

impl CayleyTable {
    pub fn build(signature: &Signature) -> Result<Self> {
        let dim = signature.dim();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::config(format!("dimension {dim} out of range")));
        }
        let n = 1usize << dim;
        let mut results = Vec::with_capacity(n * n);
        let mut signs = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                results.push((a ^ b) as u8);
                signs.push(blade_product_sign(signature.metric(), a, b));
            }
        }
        Ok(Self {
            signature: signature.clone(),
            n,
            results,
            signs,
        })
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn num_blades(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn entry(&self, a: Blade, b: Blade) -> (Blade, i8) {
        let k = a.index() * self.n + b.index();
        (Blade(self.results[k]), self.signs[k])
    }

    #[inline]
    pub fn sign(&self, a: usize, b: usize) -> i8 {
        self.signs[a * self.n + b]
    }
}

/// Sign of `e_a e_b` after reordering into canonical order and contracting
/// repeated vectors with the metric.
fn blade_product_sign(metric: &[i8], a: usize, b: usize) -> i8 {
    // each vector of b must hop over the vectors of a with a higher index
    let mut swaps = 0u32;
    let mut rest = b;
    while rest != 0 {
        let j = rest.trailing_zeros();
        swaps += (a >> (j + 1)).count_ones();
        rest &= rest - 1;
    }
    let mut sign: i8 = if swaps.is_multiple_of(2) { 1 } else { -1 };
    let mut common = a & b;
    while common != 0 {
        let j = common.trailing_zeros() as usize;
        sign *= metric[j];
        common &= common - 1;
    }
    sign
}

/// Shared handle to a signature and its Cayley table.
#[derive(Clone)]
pub struct Algebra {
    table: Arc<CayleyTable>,
}

impl fmt::Debug for Algebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Algebra({})", self.signature())
    }
}

impl PartialEq for Algebra {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.table, &other.table) || self.signature() == other.signature()
    }
}

impl Algebra {
    pub fn new(signature: &Signature) -> Result<Self> {
        Ok(Self {
            table: Arc::new(CayleyTable::build(signature)?),
        })
    }

    pub fn signature(&self) -> &Signature {
        self.table.signature()
    }

    pub fn table(&self) -> &CayleyTable {
        &self.table
    }

    pub fn dim(&self) -> usize {
        self.signature().dim()
    }

    pub fn num_blades(&self) -> usize {
        self.table.num_blades()
    }

    pub fn pseudoscalar_blade(&self) -> Blade {
        Blade((self.num_blades() - 1) as u8)
    }

    pub fn zero(&self) -> Multivector {
        Multivector {
            algebra: self.clone(),
            coeffs: vec![0.0; self.num_blades()],
        }
    }

    pub fn scalar(&self, value: f64) -> Multivector {
        self.blade(Blade::SCALAR, value)
    }

    pub fn blade(&self, blade: Blade, value: f64) -> Multivector {
        let mut mv = self.zero();
        mv.coeffs[blade.index()] = value;
        mv
    }

    /// Unit basis vector `i` (0-based, independent of the naming base).
    pub fn basis_vector(&self, i: usize) -> Multivector {
        self.blade(Blade(1 << i), 1.0)
    }

    pub fn pseudoscalar(&self) -> Multivector {
        self.blade(self.pseudoscalar_blade(), 1.0)
    }

    /// Multivector for a written blade name, carrying the reordering sign.
    pub fn named(&self, name: &str) -> Result<Multivector> {
        let (blade, sign) = parse_blade(name, self.signature())?;
        Ok(self.blade(blade, f64::from(sign)))
    }

    pub fn from_coeffs(&self, coeffs: Vec<f64>) -> Result<Multivector> {
        if coeffs.len() != self.num_blades() {
            return Err(Error::usage(format!(
                "expected {} coefficients, got {}",
                self.num_blades(),
                coeffs.len()
            )));
        }
        Ok(Multivector {
            algebra: self.clone(),
            coeffs,
        })
    }
}

/// The four algebras the networks are built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlgebraKind {
    #[serde(rename = "G(2,0,0)")]
    Ga2,
    #[serde(rename = "G(3,0,0)")]
    Ga3,
    #[serde(rename = "G(1,2,0)")]
    Sta2,
    #[serde(rename = "G(1,3,0)")]
    Sta3,
}

impl AlgebraKind {
    pub const ALL: [AlgebraKind; 4] = [Self::Ga2, Self::Ga3, Self::Sta2, Self::Sta3];

    pub fn signature(self) -> Signature {
        let (p, q) = match self {
            Self::Ga2 => (2, 0),
            Self::Ga3 => (3, 0),
            Self::Sta2 => (1, 2),
            Self::Sta3 => (1, 3),
        };
        Signature::pqr(p, q, 0).expect("shipped signatures are valid")
    }

    pub fn algebra(self) -> Algebra {
        Algebra::new(&self.signature()).expect("shipped signatures are valid")
    }

    /// Number of spatial dimensions of the fields embedded in this algebra.
    pub fn spatial_dim(self) -> usize {
        match self {
            Self::Ga2 | Self::Sta2 => 2,
            Self::Ga3 | Self::Sta3 => 3,
        }
    }

    pub fn is_spacetime(self) -> bool {
        matches!(self, Self::Sta2 | Self::Sta3)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ga2 => "G(2,0,0)",
            Self::Ga3 => "G(3,0,0)",
            Self::Sta2 => "G(1,2,0)",
            Self::Sta3 => "G(1,3,0)",
        }
    }
}

impl fmt::Display for AlgebraKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgebraKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == compact || k.name().replace(['(', ')', ','], "") == compact)
            .ok_or_else(|| Error::Parse(format!("unknown algebra '{s}'")))
    }
}

/// Dense multivector: one coefficient per basis blade.
#[derive(Debug, Clone, PartialEq)]
pub struct Multivector {
    algebra: Algebra,
    coeffs: Vec<f64>,
}

impl Multivector {
    pub fn algebra(&self) -> &Algebra {
        &self.algebra
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn get(&self, blade: Blade) -> f64 {
        self.coeffs[blade.index()]
    }

    pub fn scalar_part(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn gp(&self, rhs: &Multivector) -> Result<Multivector> {
        if self.algebra != rhs.algebra {
            return Err(Error::usage(format!(
                "geometric product across algebras {} and {}",
                self.algebra.signature(),
                rhs.algebra.signature()
            )));
        }
        let table = self.algebra.table();
        let mut out = vec![0.0; self.coeffs.len()];
        for (a, &ca) in self.coeffs.iter().enumerate() {
            if ca == 0.0 {
                continue;
            }
            for (b, &cb) in rhs.coeffs.iter().enumerate() {
                let sign = table.sign(a, b);
                if sign != 0 {
                    out[a ^ b] += f64::from(sign) * ca * cb;
                }
            }
        }
        Ok(Multivector {
            algebra: self.algebra.clone(),
            coeffs: out,
        })
    }

    pub fn square(&self) -> Multivector {
        self.gp(self).expect("same algebra")
    }

    pub fn grade_project(&self, k: usize) -> Result<Multivector> {
        if k > self.algebra.dim() {
            return Err(Error::usage(format!(
                "grade {k} exceeds algebra dimension {}",
                self.algebra.dim()
            )));
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(b, &c)| if (b as u8).count_ones() as usize == k { c } else { 0.0 })
            .collect();
        Ok(Multivector {
            algebra: self.algebra.clone(),
            coeffs,
        })
    }

    pub fn scale(&self, s: f64) -> Multivector {
        Multivector {
            algebra: self.algebra.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    fn zip_with(&self, rhs: &Multivector, f: impl Fn(f64, f64) -> f64) -> Multivector {
        assert!(self.algebra == rhs.algebra, "multivectors from different algebras");
        Multivector {
            algebra: self.algebra.clone(),
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

impl fmt::Display for Multivector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sig = self.algebra.signature();
        let mut first = true;
        for (b, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if !first {
                f.write_str(if c < 0.0 { " - " } else { " + " })?;
            } else if c < 0.0 {
                f.write_str("-")?;
            }
            first = false;
            write!(f, "{}", c.abs())?;
            if b != 0 {
                write!(f, "*{}", blade_name(Blade(b as u8), sig))?;
            }
        }
        if first {
            f.write_str("0")?;
        }
        Ok(())
    }
}

impl Add for &Multivector {
    type Output = Multivector;
    fn add(self, rhs: &Multivector) -> Multivector {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Multivector {
    type Output = Multivector;
    fn sub(self, rhs: &Multivector) -> Multivector {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for &Multivector {
    type Output = Multivector;
    fn neg(self) -> Multivector {
        self.scale(-1.0)
    }
}

/// Geometric product. Panics on mismatched algebras; use [`Multivector::gp`]
/// for a fallible version.
impl Mul for &Multivector {
    type Output = Multivector;
    fn mul(self, rhs: &Multivector) -> Multivector {
        self.gp(rhs).expect("geometric product across algebras")
    }
}

impl Mul<f64> for &Multivector {
    type Output = Multivector;
    fn mul(self, s: f64) -> Multivector {
        self.scale(s)
    }
}

/// Parse a written blade such as `e12`, `g10` or `e` (scalar).
///
/// Returns the canonical blade plus the sign of the permutation from the
/// written order to ascending order.
pub fn parse_blade(name: &str, sig: &Signature) -> Result<(Blade, i8)> {
    let name = name.trim();
    let digits = name
        .strip_prefix('e')
        .or_else(|| name.strip_prefix('g'))
        .or_else(|| name.strip_prefix('γ'))
        .ok_or_else(|| Error::Parse(format!("blade name '{name}' must start with e or g")))?;
    let base = u32::from(sig.index_base());
    let mut order = Vec::with_capacity(digits.len());
    let mut bits = 0u8;
    for ch in digits.chars() {
        let d = ch
            .to_digit(10)
            .ok_or_else(|| Error::Parse(format!("invalid index '{ch}' in blade '{name}'")))?;
        if d < base || (d - base) as usize >= sig.dim() {
            return Err(Error::Parse(format!(
                "index {d} out of range in blade '{name}' for {sig}"
            )));
        }
        let i = (d - base) as u8;
        if bits & (1 << i) != 0 {
            return Err(Error::Parse(format!("repeated index {d} in blade '{name}'")));
        }
        bits |= 1 << i;
        order.push(i);
    }
    let mut inversions = 0usize;
    for (k, &i) in order.iter().enumerate() {
        inversions += order[k + 1..].iter().filter(|&&j| j < i).count();
    }
    let sign = if inversions.is_multiple_of(2) { 1 } else { -1 };
    Ok((Blade(bits), sign))
}

/// Canonical (ascending-index) name of a blade, `1` for the scalar.
pub fn blade_name(blade: Blade, sig: &Signature) -> String {
    if blade.bits() == 0 {
        return "1".to_string();
    }
    let prefix = if sig.index_base() == 0 { 'g' } else { 'e' };
    let mut s = String::from(prefix);
    for i in 0..sig.dim() {
        if blade.bits() & (1 << i) != 0 {
            s.push(char::from_digit(i as u32 + u32::from(sig.index_base()), 10).unwrap());
        }
    }
    s
}
