//! Lie brackets of polynomial vector fields and the bracket-spanning
//! certificate for finite truncations.
//!
//! Admissible fields are left-normed words over `{e₀, F}` applied to the seed
//! `e₀`: `[e0, F, e0]` is `[[e₀, F], e₀]`. Since `[G, e₀] = −∂G/∂u₀`, the
//! `e₀` letters lower polynomial degree and are how constant directions are
//! extracted.

pub mod poly;

use std::collections::HashSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ShellParams;
pub use poly::{Monomial, Poly, PolyVectorField};

/// Largest truncation index accepted by [`drift_field`].
pub const MAX_TRUNCATION: usize = 12;
/// Per-field monomial cap.
pub const TERM_CAP: usize = 2_000_000;
pub const DEFAULT_RANK_TOL: f64 = 1e-9;
/// Depth up to which [`verify_span`] enumerates every admissible word.
pub const EXHAUSTIVE_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Letter {
    E0,
    F,
}

impl Letter {
    fn symbol(self) -> &'static str {
        match self {
            Letter::E0 => "e0",
            Letter::F => "F",
        }
    }
}

/// Letters applied after the seed `e₀`; the depth is the word length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BracketWord(pub Vec<Letter>);

impl BracketWord {
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn then(&self, letter: Letter, times: usize) -> Self {
        let mut w = self.0.clone();
        w.extend(std::iter::repeat_n(letter, times));
        BracketWord(w)
    }
}

impl fmt::Display for BracketWord {
    /// Run-length form, e.g. `[e0, F^2, e0^2]`; the bare seed prints `e0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("e0");
        }
        let mut parts = vec!["e0".to_string()];
        let mut i = 0;
        while i < self.0.len() {
            let l = self.0[i];
            let run = self.0[i..].iter().take_while(|&&x| x == l).count();
            parts.push(if run == 1 {
                l.symbol().to_string()
            } else {
                format!("{}^{run}", l.symbol())
            });
            i += run;
        }
        write!(f, "[{}]", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleField {
    pub word: BracketWord,
    pub field: PolyVectorField,
}

/// `[G1, G2] = ∇G2·G1 − ∇G1·G2`.
pub fn lie_bracket(g1: &PolyVectorField, g2: &PolyVectorField) -> Result<PolyVectorField> {
    g1.bracket(g2, TERM_CAP)
}

/// `F(u) = νAu + B(u,u)` on shells `0..=n_trunc` with `u_{N+1} = 0`.
pub fn drift_field(params: &ShellParams, n_trunc: usize) -> Result<PolyVectorField> {
    if n_trunc > MAX_TRUNCATION {
        return Err(Error::TruncationTooLarge {
            n_trunc,
            limit: MAX_TRUNCATION,
        });
    }
    let n = n_trunc + 1;
    let (nu, c) = (params.nu(), params.c());
    let mut terms = Vec::new();
    for j in 0..n {
        let x = Monomial::var(j);
        terms.push((j, x, nu * 4f64.powi(j as i32)));
        if j + 1 < n {
            terms.push((j, x.mul(Monomial::var(j + 1)), (c * j as f64).exp2()));
        }
        if j >= 1 {
            let y = Monomial::var(j - 1);
            terms.push((j, y.mul(y), -(c * (j - 1) as f64).exp2()));
        }
    }
    Ok(PolyVectorField::from_terms(n, terms))
}

fn scalar_key(f: &PolyVectorField) -> Option<Vec<(usize, u128, i64)>> {
    let (_, _, lead) = f.terms().next()?;
    Some(
        f.terms()
            .map(|(j, m, c)| (j, m.0, (c / lead * 1e9).round() as i64))
            .collect(),
    )
}

/// Generating family of `𝔎_m`: every nonzero word of depth `≤ m`, with members
/// that are scalar multiples of earlier ones removed.
pub fn generate_admissible(params: &ShellParams, n_trunc: usize, m: usize) -> Result<Vec<AdmissibleField>> {
    let f = drift_field(params, n_trunc)?;
    let e0 = PolyVectorField::constant(n_trunc + 1, 0);
    let mut seen = HashSet::new();
    seen.insert(scalar_key(&e0).expect("nonzero"));
    let mut family = vec![AdmissibleField {
        word: BracketWord::default(),
        field: e0.clone(),
    }];
    let mut frontier = vec![0usize];
    for depth in 1..=m {
        let mut next = Vec::new();
        for &i in &frontier {
            for letter in [Letter::E0, Letter::F] {
                let parent = &family[i].field;
                let field = match letter {
                    Letter::E0 => parent.neg_partial(0),
                    Letter::F => parent.bracket(&f, TERM_CAP).map_err(|e| match e {
                        Error::TermExplosion { terms, cap, .. } => Error::TermExplosion { depth, terms, cap },
                        other => other,
                    })?,
                };
                let Some(key) = scalar_key(&field) else { continue };
                if seen.insert(key) {
                    let word = family[i].word.then(letter, 1);
                    next.push(family.len());
                    family.push(AdmissibleField { word, field });
                }
            }
        }
        frontier = next;
    }
    Ok(family)
}

/// Depth cap sufficient for the cascade construction; see [`verify_span`].
pub fn depth_cap(n_target: usize) -> usize {
    (1usize << (n_target + 1)) + 2 * n_target + 4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketCertificate {
    pub n_target: usize,
    pub n_trunc: usize,
    pub c: f64,
    pub nu: f64,
    pub max_m: usize,
    /// Largest witness depth; the depth at which full rank was reached when passed.
    pub m: usize,
    pub achieved_rank: usize,
    /// Smallest singular value of the normalized witness rows.
    pub min_singular_value: f64,
    pub witness: Vec<String>,
    pub witness_depths: Vec<usize>,
    /// Constant evaluations restricted to shells `0..=n_target`.
    pub constants: Vec<Vec<f64>>,
    pub passed: bool,
}

struct SpanBuilder {
    dim: usize,
    tol: f64,
    rows: Vec<Vec<f64>>,
    words: Vec<BracketWord>,
    full: Vec<Vec<f64>>,
}

impl SpanBuilder {
    fn singular_values(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
        let m = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    fn rank_of(&self, rows: &[Vec<f64>]) -> usize {
        let sv = Self::singular_values(rows, self.dim);
        let top = sv.first().copied().unwrap_or(0.0);
        sv.iter().filter(|&&s| s > self.tol * top).count()
    }

    /// Accept `full` (a constant field) if it raises the rank on `0..dim`.
    fn offer(&mut self, full: Vec<f64>, word: &BracketWord) -> bool {
        let row: Vec<f64> = full[..self.dim].to_vec();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) || self.rank() == self.dim {
            return false;
        }
        let row: Vec<f64> = row.iter().map(|x| x / norm).collect();
        let mut trial = self.rows.clone();
        trial.push(row);
        if self.rank_of(&trial) > self.rows.len() {
            self.rows = trial;
            self.words.push(word.clone());
            self.full.push(full);
            true
        } else {
            false
        }
    }

    fn rank(&self) -> usize {
        self.rows.len()
    }
}

/// Certify that constant admissible fields span shells `0..=n_target` on the
/// truncation `n_trunc`.
///
/// Phase one enumerates every word of depth `≤ min(max_m, EXHAUSTIVE_DEPTH)`,
/// offering each constant member and the `e₀`-reduction of each nonconstant
/// one in order of depth, so the recorded depths are minimal there. Phase two
/// continues the cascade from the newest witness `W`: `[W, F^p, e0^p]` for
/// `p = 1, 2, …`. Only the top-degree part of `ad_F^p W` survives the `p`
/// reductions, so that part alone is tracked. Returns a failed certificate if
/// `max_m` is exhausted.
pub fn verify_span(
    params: &ShellParams,
    n_target: usize,
    n_trunc: usize,
    max_m: usize,
    tol: f64,
) -> Result<BracketCertificate> {
    if n_target > n_trunc {
        return Err(Error::InvalidParameter {
            name: "n_target",
            reason: format!("n_target = {n_target} exceeds the truncation {n_trunc}"),
        });
    }
    let f = drift_field(params, n_trunc)?;
    let n = n_trunc + 1;
    let dim = n_target + 1;
    let mut span = SpanBuilder {
        dim,
        tol,
        rows: Vec::new(),
        words: Vec::new(),
        full: Vec::new(),
    };
    span.offer(PolyVectorField::constant(n, 0).constant_vector(), &BracketWord::default());

    if span.rank() < dim {
        let family = generate_admissible(params, n_trunc, max_m.min(EXHAUSTIVE_DEPTH))?;
        let mut candidates: Vec<(usize, BracketWord, Vec<f64>)> = Vec::new();
        for member in &family {
            let mut g = member.field.clone();
            let mut word = member.word.clone();
            while !g.is_constant() && word.depth() < max_m {
                g = g.neg_partial(0);
                word = word.then(Letter::E0, 1);
            }
            if g.is_constant() && !g.is_zero() {
                candidates.push((word.depth(), word, g.constant_vector()));
            }
        }
        candidates.sort_by_key(|c| c.0);
        for (_, word, v) in candidates {
            span.offer(v, &word);
        }
    }

    'cascade: while span.rank() < dim {
        for s in (0..span.rank()).rev() {
            let seed_word = span.words[s].clone();
            let mut g = PolyVectorField::from_terms(
                n,
                span.full[s].iter().enumerate().map(|(j, &c)| (j, Monomial::ONE, c)),
            );
            let mut p = 0usize;
            while seed_word.depth() + 2 * (p + 1) <= max_m {
                p += 1;
                g = g.bracket_degree(&f, p as u32, TERM_CAP).map_err(|e| match e {
                    Error::TermExplosion { terms, cap, .. } => Error::TermExplosion {
                        depth: seed_word.depth() + p,
                        terms,
                        cap,
                    },
                    other => other,
                })?;
                if g.is_zero() {
                    break;
                }
                // (−∂₀)^p of a degree-p field: (−1)^p p! × coefficient of u₀^p
                let top = Monomial(p as u128);
                let factor = (1..=p).fold(1.0, |acc, k| acc * k as f64) * if p.is_multiple_of(2) { 1.0 } else { -1.0 };
                let v: Vec<f64> = g
                    .components()
                    .iter()
                    .map(|poly| {
                        poly.binary_search_by_key(&top, |t| t.0)
                            .map_or(0.0, |i| factor * poly[i].1)
                    })
                    .collect();
                let word = seed_word.then(Letter::F, p).then(Letter::E0, p);
                if span.offer(v, &word) {
                    continue 'cascade;
                }
            }
        }
        break;
    }

    let sv = SpanBuilder::singular_values(&span.rows, dim);
    let depths: Vec<usize> = span.words.iter().map(BracketWord::depth).collect();
    let rank = span.rank();
    Ok(BracketCertificate {
        n_target,
        n_trunc,
        c: params.c(),
        nu: params.nu(),
        max_m,
        m: if rank == dim {
            depths.iter().copied().max().unwrap_or(0)
        } else {
            max_m
        },
        achieved_rank: rank,
        min_singular_value: sv.get(rank.saturating_sub(1)).copied().unwrap_or(0.0),
        witness: span.words.iter().map(ToString::to_string).collect(),
        witness_depths: depths,
        constants: span.rows.clone(),
        passed: rank == dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(nu: f64, c: f64) -> ShellParams {
        ShellParams::new(nu, c, 1.0, 4).unwrap()
    }

    fn e(n: usize, k: usize) -> PolyVectorField {
        PolyVectorField::constant(n, k)
    }

    fn assert_fields_close(a: &PolyVectorField, b: &PolyVectorField, tol: f64) {
        let d = a.sub(b).unwrap();
        let scale = a.max_abs_coefficient().max(b.max_abs_coefficient()).max(1.0);
        assert!(d.max_abs_coefficient() <= tol * scale, "{a:?}\n vs\n{b:?}");
    }

    #[test]
    fn constant_fields_commute() {
        assert!(lie_bracket(&e(3, 0), &e(3, 1)).unwrap().is_zero());
    }

    #[test]
    fn drift_small_truncation_by_hand() {
        let f = drift_field(&params(1.0, 1.0), 1).unwrap();
        let (x0, x1) = (Monomial::var(0), Monomial::var(1));
        let expect = PolyVectorField::from_terms(
            2,
            [(0, x0, 1.0), (0, x0.mul(x1), 1.0), (1, x1, 4.0), (1, x0.mul(x0), -1.0)],
        );
        assert_eq!(f, expect);
        let inviscid = drift_field(&params(0.0, 1.0), 3).unwrap();
        assert!(inviscid.terms().all(|(_, m, _)| m.degree() == 2));
        assert_eq!(f.eval(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert!(matches!(
            drift_field(&params(1.0, 1.0), 13),
            Err(Error::TruncationTooLarge { n_trunc: 13, limit: 12 })
        ));
    }

    #[test]
    fn drift_matches_model_drift() {
        let p = ShellParams::new(0.3, 1.7, 1.0, 6).unwrap();
        let f = drift_field(&p, 5).unwrap();
        let u = [0.3, -0.7, 1.1, 0.4, -0.2, 0.9];
        let minus: Vec<f64> = crate::model::drift(&p, &u).unwrap().iter().map(|x| -x).collect();
        for (a, b) in f.eval(&u).iter().zip(&minus) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn double_bracket_with_shell_direction() {
        // [[F, e_k], e_k] = 2B(e_k, e_k) = −2^{ck+1} e_{k+1}
        for &c in &[1.0, 1.5, 2.0] {
            let n = 6;
            let f = drift_field(&params(0.4, c), n - 1).unwrap();
            for k in 0..n - 1 {
                let b = lie_bracket(&lie_bracket(&f, &e(n, k)).unwrap(), &e(n, k)).unwrap();
                let expect = e(n, k + 1).scale(-(c * k as f64 + 1.0).exp2());
                assert_fields_close(&b, &expect, 1e-14);
            }
        }
    }

    #[test]
    fn bracket_of_drift_with_shell_direction() {
        // [F, e_k] = −∂_k F = −(νA e_k + 2B(e_k, u)); the opposite order
        // [e_k, F] equals νA e_k + 2B(e_k, u).
        let n = 5;
        let p = params(0.25, 1.3);
        let f = drift_field(&p, n - 1).unwrap();
        for k in 0..n {
            let fe = lie_bracket(&f, &e(n, k)).unwrap();
            let ef = lie_bracket(&e(n, k), &f).unwrap();
            assert_fields_close(&fe, &ef.scale(-1.0), 0.0);
            let u = [0.3, -0.4, 0.8, 0.1, -0.6];
            let mut ek = vec![0.0; n];
            ek[k] = 1.0;
            let sym = crate::model::apply_b(
                &ShellParams::new(0.25, 1.3, 1.0, n).unwrap(),
                &ek,
                &u,
                crate::model::BForm::Symmetrized,
            )
            .unwrap();
            let got = ef.eval(&u);
            for j in 0..n {
                let expect = if j == k { 0.25 * 4f64.powi(k as i32) } else { 0.0 } + 2.0 * sym[j];
                assert!((got[j] - expect).abs() < 1e-12, "k={k} j={j}: {} vs {expect}", got[j]);
            }
        }
    }

    #[test]
    fn admissible_examples() {
        let p = params(1.0, 1.0);
        let fam0 = generate_admissible(&p, 3, 0).unwrap();
        assert_eq!(fam0.len(), 1);
        assert_eq!(fam0[0].field, e(4, 0));
        let fam1 = generate_admissible(&p, 3, 1).unwrap();
        let f = drift_field(&p, 3).unwrap();
        let e0f = lie_bracket(&e(4, 0), &f).unwrap();
        assert!(fam1.iter().any(|a| a.field == e0f && a.word.to_string() == "[e0, F]"));
        assert_eq!(e0f.degree(), Some(1));
        let fam2 = generate_admissible(&p, 3, 2).unwrap();
        let target = e(4, 1).scale(2.0); // [[e0,F],e0] = −[[F,e0],e0] = 2e1
        assert!(fam2.iter().any(|a| a.field == target && a.word.to_string() == "[e0, F, e0]"));
    }

    #[test]
    fn word_formatting() {
        let w = BracketWord::default().then(Letter::E0, 1).then(Letter::F, 2).then(Letter::E0, 3);
        assert_eq!(w.to_string(), "[e0, e0, F^2, e0^3]");
        assert_eq!(BracketWord::default().to_string(), "e0");
        assert_eq!(w.depth(), 6);
    }

    #[test]
    fn small_certificates() {
        let p = params(1.0, 1.0);
        let c0 = verify_span(&p, 0, 2, depth_cap(0), DEFAULT_RANK_TOL).unwrap();
        assert!(c0.passed);
        assert_eq!((c0.m, c0.achieved_rank), (0, 1));
        assert_eq!(c0.witness, vec!["e0"]);
        let c1 = verify_span(&p, 1, 3, depth_cap(1), DEFAULT_RANK_TOL).unwrap();
        assert!(c1.passed && c1.m <= 2, "{c1:?}");
        assert_eq!(c1.witness[1], "[e0, F, e0]");
        assert!((c1.constants[1][1].abs() - 1.0).abs() < 1e-12);
        assert_eq!(c1.witness.len(), c1.achieved_rank);
    }

    #[test]
    fn depth_exhaustion_gives_failed_certificate() {
        let cert = verify_span(&params(1.0, 1.0), 2, 4, 3, DEFAULT_RANK_TOL).unwrap();
        assert!(!cert.passed);
        assert_eq!(cert.achieved_rank, 2);
        assert_eq!(cert.m, 3);
    }

    #[test]
    fn rank_is_monotone_in_depth_and_local() {
        let p = params(1.0, 1.5);
        let mut last = 0;
        for max_m in 0..=8 {
            let cert = verify_span(&p, 3, 5, max_m, DEFAULT_RANK_TOL).unwrap();
            assert!(cert.achieved_rank >= last);
            last = cert.achieved_rank;
            for (v, &d) in cert.constants.iter().zip(&cert.witness_depths) {
                assert!(v.iter().enumerate().all(|(j, &x)| j <= d || x == 0.0));
            }
        }
    }

    fn random_field(n: usize, coefs: &[f64]) -> PolyVectorField {
        // degree ≤ 2 field in 3 variables, coefficients drawn in order
        let mut monos = vec![Monomial::ONE];
        for i in 0..n {
            monos.push(Monomial::var(i));
            for k in i..n {
                monos.push(Monomial::var(i).mul(Monomial::var(k)));
            }
        }
        let mut it = coefs.iter().copied();
        let mut terms = Vec::new();
        for j in 0..n {
            for &m in &monos {
                terms.push((j, m, it.next().unwrap_or(0.0)));
            }
        }
        PolyVectorField::from_terms(n, terms)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn antisymmetry_is_exact(a in proptest::collection::vec(-2.0f64..2.0, 30),
                                 b in proptest::collection::vec(-2.0f64..2.0, 30)) {
            let (g1, g2) = (random_field(3, &a), random_field(3, &b));
            let x = lie_bracket(&g1, &g2).unwrap();
            let y = lie_bracket(&g2, &g1).unwrap();
            prop_assert_eq!(x, y.scale(-1.0));
        }

        #[test]
        fn jacobi_identity(a in proptest::collection::vec(-2.0f64..2.0, 30),
                           b in proptest::collection::vec(-2.0f64..2.0, 30),
                           c in proptest::collection::vec(-2.0f64..2.0, 30)) {
            let (x, y, z) = (random_field(3, &a), random_field(3, &b), random_field(3, &c));
            let t1 = lie_bracket(&x, &lie_bracket(&y, &z).unwrap()).unwrap();
            let t2 = lie_bracket(&y, &lie_bracket(&z, &x).unwrap()).unwrap();
            let t3 = lie_bracket(&z, &lie_bracket(&x, &y).unwrap()).unwrap();
            let sum = t1.add(&t2).unwrap().add(&t3).unwrap();
            let scale = t1.max_abs_coefficient().max(t2.max_abs_coefficient()).max(t3.max_abs_coefficient());
            prop_assert!(sum.max_abs_coefficient() <= 1e-10 * scale.max(1e-300));
        }

        #[test]
        fn bracket_matches_finite_differences(a in proptest::collection::vec(-2.0f64..2.0, 30),
                                              b in proptest::collection::vec(-2.0f64..2.0, 30),
                                              u in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let (g1, g2) = (random_field(3, &a), random_field(3, &b));
            let exact = lie_bracket(&g1, &g2).unwrap().eval(&u);
            // ∇G·V at u by central differences along V
            let dir = |g: &PolyVectorField, v: &[f64]| -> Vec<f64> {
                let h = 1e-5;
                let up: Vec<f64> = u.iter().zip(v).map(|(x, d)| x + h * d).collect();
                let dn: Vec<f64> = u.iter().zip(v).map(|(x, d)| x - h * d).collect();
                g.eval(&up).iter().zip(g.eval(&dn)).map(|(p, q)| (p - q) / (2.0 * h)).collect()
            };
            let fd: Vec<f64> = dir(&g2, &g1.eval(&u)).iter().zip(dir(&g1, &g2.eval(&u)))
                .map(|(p, q)| p - q).collect();
            let scale = fd.iter().chain(&exact).fold(1.0f64, |m, x| m.max(x.abs()));
            for (x, y) in exact.iter().zip(&fd) {
                prop_assert!((x - y).abs() <= 1e-6 * scale, "{x} vs {y}");
            }
        }
    }
}
