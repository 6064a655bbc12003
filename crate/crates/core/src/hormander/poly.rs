//! Sparse polynomial vector fields with packed monomials.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Variables representable in a packed monomial (8 bits of exponent each).
pub const MAX_VARS: usize = 16;

const PRUNE_RELATIVE: f64 = 1e-14;

/// Exponent vector packed into a `u128`, 8 bits per variable. Ordering of the
/// packed value is the canonical term order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial(pub u128);

impl Monomial {
    pub const ONE: Monomial = Monomial(0);

    pub fn var(k: usize) -> Self {
        Monomial(1u128 << (8 * k))
    }

    pub fn from_exponents(e: &[u8]) -> Self {
        Monomial(e.iter().enumerate().fold(0, |m, (k, &x)| m | (u128::from(x) << (8 * k))))
    }

    #[inline]
    pub fn exponent(self, k: usize) -> u32 {
        ((self.0 >> (8 * k)) & 0xff) as u32
    }

    pub fn degree(self) -> u32 {
        self.0.to_le_bytes().iter().map(|&b| u32::from(b)).sum()
    }

    /// Exponent addition; callers keep degrees below 256.
    #[allow(clippy::should_implement_trait)]
    #[inline]
    pub fn mul(self, o: Monomial) -> Monomial {
        Monomial(self.0 + o.0)
    }

    /// `∂/∂u_k`: `(factor, monomial)` or `None` if `u_k` is absent.
    #[inline]
    pub fn diff(self, k: usize) -> Option<(f64, Monomial)> {
        let e = self.exponent(k);
        (e > 0).then(|| (f64::from(e), Monomial(self.0 - (1u128 << (8 * k)))))
    }

    pub fn eval(self, u: &[f64]) -> f64 {
        u.iter()
            .enumerate()
            .map(|(k, &x)| x.powi(self.exponent(k) as i32))
            .product()
    }
}

/// Polynomial as sorted `(monomial, coefficient)` pairs without duplicates.
pub type Poly = Vec<(Monomial, f64)>;

fn collect(map: HashMap<Monomial, f64>) -> Poly {
    let mut p: Poly = map.into_iter().filter(|(_, c)| *c != 0.0).collect();
    p.sort_unstable_by_key(|t| t.0);
    p
}

/// Polynomial vector field on `R^{n_vars}`: component `j` is a [`Poly`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolyVectorField {
    n_vars: usize,
    comps: Vec<Poly>,
}

impl PolyVectorField {
    pub fn zero(n_vars: usize) -> Self {
        assert!(n_vars <= MAX_VARS, "at most {MAX_VARS} variables");
        Self {
            n_vars,
            comps: vec![Vec::new(); n_vars],
        }
    }

    /// Constant field `e_k`.
    pub fn constant(n_vars: usize, k: usize) -> Self {
        let mut f = Self::zero(n_vars);
        f.comps[k].push((Monomial::ONE, 1.0));
        f
    }

    /// Build from unsorted terms `(component, monomial, coefficient)`.
    pub fn from_terms(n_vars: usize, terms: impl IntoIterator<Item = (usize, Monomial, f64)>) -> Self {
        let mut maps = vec![HashMap::new(); n_vars];
        for (j, m, c) in terms {
            *maps[j].entry(m).or_insert(0.0) += c;
        }
        let mut f = Self {
            n_vars,
            comps: maps.into_iter().map(collect).collect(),
        };
        f.prune();
        f
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn components(&self) -> &[Poly] {
        &self.comps
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, Monomial, f64)> + '_ {
        self.comps
            .iter()
            .enumerate()
            .flat_map(|(j, p)| p.iter().map(move |&(m, c)| (j, m, c)))
    }

    pub fn term_count(&self) -> usize {
        self.comps.iter().map(Vec::len).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(Vec::is_empty)
    }

    /// Highest total degree, `None` for the zero field.
    pub fn degree(&self) -> Option<u32> {
        self.terms().map(|(_, m, _)| m.degree()).max()
    }

    pub fn is_constant(&self) -> bool {
        self.degree().is_none_or(|d| d == 0)
    }

    /// Constant part as a dense vector.
    pub fn constant_vector(&self) -> Vec<f64> {
        self.comps
            .iter()
            .map(|p| p.first().filter(|t| t.0 == Monomial::ONE).map_or(0.0, |t| t.1))
            .collect()
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms().fold(0.0, |m, (_, _, c)| m.max(c.abs()))
    }

    /// Drop coefficients below `1e−14 ×` the largest one.
    pub fn prune(&mut self) {
        let cut = PRUNE_RELATIVE * self.max_abs_coefficient();
        for p in &mut self.comps {
            p.retain(|t| t.1.abs() > cut);
        }
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        self.comps
            .iter()
            .map(|p| p.iter().map(|&(m, c)| c * m.eval(u)).sum())
            .collect()
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut f = self.clone();
        for p in &mut f.comps {
            for t in p.iter_mut() {
                t.1 *= k;
            }
        }
        f
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check_same(o)?;
        Ok(Self::from_terms(self.n_vars, self.terms().chain(o.terms())))
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.check_same(o)?;
        Ok(Self::from_terms(
            self.n_vars,
            self.terms().chain(o.terms().map(|(j, m, c)| (j, m, -c))),
        ))
    }

    fn check_same(&self, o: &Self) -> Result<()> {
        if self.n_vars != o.n_vars {
            return Err(Error::TruncationMismatch {
                left: self.n_vars,
                right: o.n_vars,
            });
        }
        Ok(())
    }

    /// `−∂G/∂u_k`, which is `[G, e_k]`.
    pub fn neg_partial(&self, k: usize) -> Self {
        Self::from_terms(
            self.n_vars,
            self.terms()
                .filter_map(|(j, m, c)| m.diff(k).map(|(e, d)| (j, d, -c * e))),
        )
    }

    /// Keep only terms of total degree exactly `d`.
    pub fn homogeneous_part(&self, d: u32) -> Self {
        let mut f = self.clone();
        for p in &mut f.comps {
            p.retain(|t| t.0.degree() == d);
        }
        f
    }

    /// Accumulate `(∇G) H` into `maps`, i.e. `Σ_k H_k ∂_k G_j`, scaled by `sign`.
    fn accumulate_jacobian_apply(
        g: &Self,
        h: &Self,
        sign: f64,
        maps: &mut [HashMap<Monomial, f64>],
        keep_degree: Option<u32>,
    ) {
        for (j, gj) in g.comps.iter().enumerate() {
            if gj.is_empty() {
                continue;
            }
            for (k, hk) in h.comps.iter().enumerate() {
                if hk.is_empty() {
                    continue;
                }
                for &(m, c) in gj {
                    let Some((e, d)) = m.diff(k) else { continue };
                    let base = sign * c * e;
                    for &(mh, ch) in hk {
                        let prod = d.mul(mh);
                        if keep_degree.is_some_and(|deg| prod.degree() != deg) {
                            continue;
                        }
                        *maps[j].entry(prod).or_insert(0.0) += base * ch;
                    }
                }
            }
        }
    }

    fn bracket_impl(g1: &Self, g2: &Self, keep_degree: Option<u32>, cap: usize, prune: bool) -> Result<Self> {
        g1.check_same(g2)?;
        // [G1, G2] = ∇G2·G1 − ∇G1·G2; the two products are formed separately
        // and subtracted termwise so that swapping the arguments negates the
        // result exactly.
        let product = |g: &Self, h: &Self| {
            let mut maps = vec![HashMap::new(); g.n_vars];
            Self::accumulate_jacobian_apply(g, h, 1.0, &mut maps, keep_degree);
            maps.into_iter().map(collect).collect::<Vec<Poly>>()
        };
        let plus = product(g2, g1);
        let minus = product(g1, g2);
        let comps: Vec<Poly> = plus
            .into_iter()
            .zip(minus)
            .map(|(p, q)| {
                let mut map: HashMap<Monomial, (f64, f64)> = HashMap::with_capacity(p.len() + q.len());
                for (m, c) in p {
                    map.entry(m).or_default().0 = c;
                }
                for (m, c) in q {
                    map.entry(m).or_default().1 = c;
                }
                collect(map.into_iter().map(|(m, (a, b))| (m, a - b)).collect())
            })
            .collect();
        let terms: usize = comps.iter().map(Vec::len).sum();
        if terms > cap {
            return Err(Error::TermExplosion {
                depth: 0,
                terms,
                cap,
            });
        }
        let mut f = Self {
            n_vars: g1.n_vars,
            comps,
        };
        if prune {
            f.prune();
        }
        Ok(f)
    }

    /// `[self, other] = ∇other·self − ∇self·other`.
    pub fn bracket(&self, other: &Self, cap: usize) -> Result<Self> {
        Self::bracket_impl(self, other, None, cap, true)
    }

    /// Degree-`d` part of `[self, other]` only.
    ///
    /// Only exact zeros are dropped: this feeds extraction of individual
    /// coefficients, which may be many orders of magnitude below the largest.
    pub fn bracket_degree(&self, other: &Self, d: u32, cap: usize) -> Result<Self> {
        Self::bracket_impl(self, other, Some(d), cap, false)
    }
}
