//! Mess3 processes: construction, stationary structure, exact sequence
//! probabilities, context enumeration and sampling.
//!
//! Matrices act on row vectors. `labeled[z][i][j]` is the probability of moving
//! from hidden state `i` to state `j` while emitting token `z`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Mat3, Vec3, ONES3};
use crate::math;
use crate::{Error, Result};

/// Number of hidden states and tokens in every process handled here.
pub const VOCAB: usize = 3;

/// Longest context length [`enumerate_contexts`] will materialize.
pub const MAX_ENUMERATION_LEN: usize = 12;

const STATIONARY_TOL: f64 = 1e-14;
const STATIONARY_ACCEPT: f64 = 1e-12;
const STATIONARY_MAX_ITERS: usize = 100_000;

/// The two free parameters of the Mess3 family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mess3Params {
    pub alpha: f64,
    pub x: f64,
}

impl Mess3Params {
    pub fn new(alpha: f64, x: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Domain { name: "alpha", range: "[0, 1]", value: alpha });
        }
        if !(x > 0.0 && x <= 0.5) {
            return Err(Error::Domain { name: "x", range: "(0, 0.5]", value: x });
        }
        Ok(Self { alpha, x })
    }

    pub fn beta(&self) -> f64 {
        (1.0 - self.alpha) / 2.0
    }

    pub fn y(&self) -> f64 {
        1.0 - 2.0 * self.x
    }

    /// The non-unit eigenvalue of the hidden-state transition matrix, `1 - 3x`.
    pub fn zeta(&self) -> f64 {
        1.0 - 3.0 * self.x
    }
}

/// A 3-state, 3-token edge-emitting HMM together with its derived matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmSpec {
    /// Present when the spec was built by [`build_mess3`].
    #[serde(flatten)]
    pub params: Option<Mess3Params>,
    pub labeled: [Mat3; 3],
    pub marginal: Mat3,
    /// `None` when some labeled matrix has a zero row.
    pub conditional: Option<[Mat3; 3]>,
    pub pi: Vec3,
}

impl HmmSpec {
    /// Builds a spec from arbitrary labeled matrices, validating them and
    /// deriving the marginal, conditional and stationary quantities.
    pub fn from_labeled(labeled: [Mat3; 3], params: Option<Mess3Params>) -> Result<Self> {
        for m in &labeled {
            for row in m {
                for &v in row {
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::Config(alloc::format!("labeled entry {v} is not a finite nonnegative number")));
                    }
                }
            }
        }
        let marginal = linalg::mat_add(&linalg::mat_add(&labeled[0], &labeled[1]), &labeled[2]);
        for (i, row) in marginal.iter().enumerate() {
            let s = linalg::sum3(row);
            if math::abs(s - 1.0) > 1e-12 {
                return Err(Error::Config(alloc::format!("row {i} of the marginal transition matrix sums to {s}")));
            }
        }
        let conditional = (0..VOCAB as u8)
            .map(|z| normalize_rows(&labeled[z as usize], z))
            .collect::<Result<Vec<_>>>()
            .ok()
            .map(|v| [v[0], v[1], v[2]]);
        let mut spec = Self { params, labeled, marginal, conditional, pi: [1.0 / 3.0; 3] };
        spec.pi = stationary_distribution(&spec)?;
        Ok(spec)
    }

    pub fn labeled(&self, z: u8) -> Result<&Mat3> {
        check_token(z)?;
        Ok(&self.labeled[z as usize])
    }

    /// Probability of emitting each token from belief `eta`: `eta T^(z) 1`.
    pub fn emission_probs(&self, eta: &Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for (z, o) in out.iter_mut().enumerate() {
            *o = linalg::sum3(&linalg::vec_mat(eta, &self.labeled[z]));
        }
        out
    }
}

pub(crate) fn check_token(z: u8) -> Result<()> {
    if (z as usize) < VOCAB {
        Ok(())
    } else {
        Err(Error::InvalidToken { token: z, vocab: VOCAB })
    }
}

pub(crate) fn check_tokens(seq: &[u8]) -> Result<()> {
    seq.iter().try_for_each(|&z| check_token(z))
}

fn normalize_rows(m: &Mat3, z: u8) -> Result<Mat3> {
    let mut out = *m;
    for (row, r) in out.iter_mut().enumerate() {
        let s = linalg::sum3(r);
        if s <= 0.0 {
            return Err(Error::DegenerateProcess { token: z, row });
        }
        for v in r.iter_mut() {
            *v /= s;
        }
    }
    Ok(out)
}

/// Labeled transition matrices of Mess3 with parameters `(alpha, x)`.
pub fn mess3_labeled(p: &Mess3Params) -> [Mat3; 3] {
    let (a, b, x, y) = (p.alpha, p.beta(), p.x, p.y());
    [
        [[a * y, b * x, b * x], [a * x, b * y, b * x], [a * x, b * x, b * y]],
        [[b * y, a * x, b * x], [b * x, a * y, b * x], [b * x, a * x, b * y]],
        [[b * y, b * x, a * x], [b * x, b * y, a * x], [b * x, b * x, a * y]],
    ]
}

/// Builds the Mess3 process with emission fidelity `alpha` and transition rate `x`.
pub fn build_mess3(alpha: f64, x: f64) -> Result<HmmSpec> {
    let params = Mess3Params::new(alpha, x)?;
    HmmSpec::from_labeled(mess3_labeled(&params), Some(params))
}

/// Left fixed vector of the marginal transition matrix.
///
/// Power iteration from the uniform vector on the lazy chain `(T + I) / 2`,
/// which shares its stationary vector with `T` and is aperiodic.
pub fn stationary_distribution(spec: &HmmSpec) -> Result<Vec3> {
    let t = &spec.marginal;
    let residual = |p: &Vec3| linalg::max_abs3(&linalg::vec_mat(p, t), p);
    let mut pi = [1.0 / 3.0; 3];
    let mut iters = 0;
    while residual(&pi) > STATIONARY_TOL && iters < STATIONARY_MAX_ITERS {
        let next = linalg::vec_mat(&pi, t);
        let mut lazy = linalg::scale3(&linalg::add3(&pi, &next), 0.5);
        let s = linalg::sum3(&lazy);
        for v in lazy.iter_mut() {
            *v = v.max(0.0) / s;
        }
        pi = lazy;
        iters += 1;
    }
    let r = residual(&pi);
    if r > STATIONARY_ACCEPT {
        return Err(Error::NonConvergence { what: "stationary distribution", residual: r });
    }
    Ok(pi)
}

/// `T^{|z}`: the labeled matrix for `z` with every row normalized to sum 1.
pub fn conditional_matrix(spec: &HmmSpec, z: u8) -> Result<Mat3> {
    normalize_rows(spec.labeled(z)?, z)
}

/// Unnormalized forward vector `pi T^(z_1) ... T^(z_d)`.
pub fn forward_vector(spec: &HmmSpec, seq: &[u8]) -> Result<Vec3> {
    check_tokens(seq)?;
    Ok(seq.iter().fold(spec.pi, |v, &z| linalg::vec_mat(&v, &spec.labeled[z as usize])))
}

/// Exact probability of observing `seq` from the stationary process.
pub fn sequence_probability(spec: &HmmSpec, seq: &[u8]) -> Result<f64> {
    Ok(linalg::dot3(&forward_vector(spec, seq)?, &ONES3))
}

/// A validated token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct TokenSeq(Vec<u8>);

impl TokenSeq {
    pub fn new(tokens: Vec<u8>) -> Result<Self> {
        check_tokens(&tokens)?;
        Ok(Self(tokens))
    }

    /// Parses a string of digits such as `"0120"`.
    pub fn parse(digits: &str) -> Result<Self> {
        let tokens = digits
            .bytes()
            .map(|b| {
                if b.is_ascii_digit() {
                    Ok(b - b'0')
                } else {
                    Err(Error::Config(alloc::format!("invalid token character {:?}", b as char)))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(tokens)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }

    pub fn to_digits(&self) -> String {
        self.0.iter().map(|&z| (b'0' + z) as char).collect()
    }
}

impl Deref for TokenSeq {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl TryFrom<Vec<u8>> for TokenSeq {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TokenSeq> for Vec<u8> {
    fn from(s: TokenSeq) -> Vec<u8> {
        s.0
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &z in &self.0 {
            write!(f, "{z}")?;
        }
        Ok(())
    }
}

/// Number of contexts of length `1..=max_len`.
pub fn context_count(max_len: usize) -> usize {
    (1..=max_len).map(|d| VOCAB.pow(d as u32)).sum()
}

/// Position of `seq` (length ≥ 1) in shortlex order: by length, then
/// lexicographically.
pub fn context_index(seq: &[u8]) -> usize {
    let offset = context_count(seq.len().saturating_sub(1));
    offset + seq.iter().fold(0usize, |acc, &z| acc * VOCAB + z as usize)
}

fn check_enumeration_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    if max_len > MAX_ENUMERATION_LEN {
        return Err(Error::ResourceLimit { what: "context length", requested: max_len, limit: MAX_ENUMERATION_LEN });
    }
    Ok(())
}

/// Every context of length `1..=max_len` in shortlex order with its
/// unnormalized forward vector `pi T^(z_1) ... T^(z_d)`.
pub fn enumerate_forward(spec: &HmmSpec, max_len: usize) -> Result<Vec<(TokenSeq, Vec3)>> {
    check_enumeration_len(max_len)?;
    let mut out: Vec<(TokenSeq, Vec3)> = Vec::with_capacity(context_count(max_len));
    let mut prev: Vec<(TokenSeq, Vec3)> = alloc::vec![(TokenSeq::default(), spec.pi)];
    for _ in 1..=max_len {
        let mut level = Vec::with_capacity(prev.len() * VOCAB);
        for (seq, v) in &prev {
            for z in 0..VOCAB as u8 {
                let mut tokens = Vec::with_capacity(seq.len() + 1);
                tokens.extend_from_slice(seq);
                tokens.push(z);
                level.push((TokenSeq(tokens), linalg::vec_mat(v, &spec.labeled[z as usize])));
            }
        }
        out.extend(level.iter().cloned());
        prev = level;
    }
    Ok(out)
}

/// Every context of length `1..=max_len` (shortlex order) with its exact
/// probability.
pub fn enumerate_contexts(spec: &HmmSpec, max_len: usize) -> Result<Vec<(TokenSeq, f64)>> {
    Ok(enumerate_forward(spec, max_len)?
        .into_iter()
        .map(|(seq, v)| (seq, linalg::sum3(&v)))
        .collect())
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave u just above the final partial sum.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Samples `len` tokens, starting from a hidden state drawn from `pi`.
pub fn sample_sequence<R: Rng + ?Sized>(spec: &HmmSpec, rng: &mut R, len: usize) -> TokenSeq {
    let mut tokens = Vec::with_capacity(len);
    sample_into(spec, rng, len, &mut tokens);
    TokenSeq(tokens)
}

/// Appends `len` sampled tokens to `out`.
pub fn sample_into<R: Rng + ?Sized>(spec: &HmmSpec, rng: &mut R, len: usize, out: &mut Vec<u8>) {
    let mut state = sample_index(rng, &spec.pi);
    let mut joint = [0.0; VOCAB * 3];
    for _ in 0..len {
        for z in 0..VOCAB {
            joint[z * 3..z * 3 + 3].copy_from_slice(&spec.labeled[z][state]);
        }
        let k = sample_index(rng, &joint);
        out.push((k / 3) as u8);
        state = k % 3;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::string::ToString;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn labeled_rows_match_substitution() {
        let spec = build_mess3(0.6, 0.15).unwrap();
        let expect0 = [0.42, 0.03, 0.03];
        let expect1 = [0.09, 0.14, 0.03];
        for j in 0..3 {
            assert!(close(spec.labeled[0][0][j], expect0[j], 1e-15));
            assert!(close(spec.labeled[0][1][j], expect1[j], 1e-15));
        }
    }

    #[test]
    fn token_one_is_token_zero_with_states_swapped() {
        let spec = build_mess3(0.37, 0.22).unwrap();
        let swap = [1usize, 0, 2];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(spec.labeled[1][i][j], spec.labeled[0][swap[i]][swap[j]]);
            }
        }
    }

    #[test]
    fn parameter_validation_names_the_offender() {
        let err = build_mess3(0.5, 0.6).unwrap_err();
        assert_eq!(err.to_string(), "x must be in (0, 0.5], got 0.6");
        assert!(matches!(build_mess3(1.2, 0.1), Err(Error::Domain { name: "alpha", .. })));
        assert!(matches!(build_mess3(0.5, 0.0), Err(Error::Domain { name: "x", .. })));
    }

    #[test]
    fn stationary_is_uniform_for_mess3() {
        for (a, x) in [(0.6, 0.15), (0.2, 0.5), (0.0, 0.01), (1.0, 0.3)] {
            let spec = build_mess3(a, x).unwrap();
            for v in spec.pi {
                assert!(close(v, 1.0 / 3.0, 1e-12));
            }
        }
    }

    #[test]
    fn stationary_solver_handles_asymmetric_chains() {
        // Deterministic 3-cycle (periodic) split across tokens, plus a biased chain.
        let z = linalg::zeros3();
        let cycle = [[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], [[0.0; 3], [0.0, 0.0, 1.0], [0.0; 3]], [[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]]];
        let spec = HmmSpec::from_labeled(cycle, None).unwrap();
        for v in spec.pi {
            assert!(close(v, 1.0 / 3.0, 1e-12));
        }
        assert!(spec.conditional.is_none());

        let biased = [[[0.5, 0.0, 0.0], [0.5, 0.0, 0.0], [0.3, 0.0, 0.0]], [[0.0, 0.5, 0.0], [0.0, 0.25, 0.0], [0.0, 0.2, 0.0]], [z[0], [0.0, 0.0, 0.25], [0.0, 0.0, 0.5]]];
        let spec = HmmSpec::from_labeled(biased, None).unwrap();
        let res = linalg::max_abs3(&linalg::vec_mat(&spec.pi, &spec.marginal), &spec.pi);
        assert!(res <= 1e-12);
        assert!(close(linalg::sum3(&spec.pi), 1.0, 1e-12));
    }

    #[test]
    fn conditional_rows_normalized() {
        let spec = build_mess3(0.6, 0.15).unwrap();
        let c = conditional_matrix(&spec, 0).unwrap();
        let expect0 = [0.875, 0.0625, 0.0625];
        let expect1 = [0.09 / 0.26, 0.14 / 0.26, 0.03 / 0.26];
        for j in 0..3 {
            assert!(close(c[0][j], expect0[j], 1e-15));
            assert!(close(c[1][j], expect1[j], 1e-15));
        }
        for z in 0..3 {
            for row in conditional_matrix(&spec, z).unwrap() {
                assert!(close(linalg::sum3(&row), 1.0, 1e-15));
            }
        }
    }

    #[test]
    fn zero_row_is_reported() {
        // alpha = 1, x = 0.5: row 0 of T^(0) is (alpha y, beta x, beta x) = 0.
        let spec = build_mess3(1.0, 0.5).unwrap();
        assert_eq!(conditional_matrix(&spec, 0).unwrap_err(), Error::DegenerateProcess { token: 0, row: 0 });
        assert!(spec.conditional.is_none());
    }

    #[test]
    fn sequence_probabilities() {
        let spec = build_mess3(0.6, 0.15).unwrap();
        assert_eq!(sequence_probability(&spec, &[]).unwrap(), 1.0);
        let p0 = sequence_probability(&spec, &[0]).unwrap();
        assert!(close(p0, (0.48 + 0.26 + 0.26) / 3.0, 1e-15));
        assert!(matches!(sequence_probability(&spec, &[3]), Err(Error::InvalidToken { token: 3, .. })));
    }

    #[test]
    fn enumeration_counts_and_order() {
        let spec = build_mess3(0.6, 0.15).unwrap();
        let one = enumerate_contexts(&spec, 1).unwrap();
        let seqs: Vec<_> = one.iter().map(|(s, _)| s.to_digits()).collect();
        assert_eq!(seqs, vec!["0", "1", "2"]);
        assert_eq!(context_count(10), 88_572);
        let two = enumerate_contexts(&spec, 3).unwrap();
        for (i, (s, p)) in two.iter().enumerate() {
            assert_eq!(context_index(s), i);
            assert!(close(*p, sequence_probability(&spec, s).unwrap(), 1e-15));
        }
        assert!(matches!(enumerate_contexts(&spec, 13), Err(Error::ResourceLimit { requested: 13, .. })));
        assert!(enumerate_contexts(&spec, 0).is_err());
    }

    #[test]
    fn per_length_probabilities_sum_to_one() {
        let spec = build_mess3(0.6, 0.15).unwrap();
        let ctx = enumerate_contexts(&spec, 8).unwrap();
        for d in 1..=8 {
            let total: f64 = ctx.iter().filter(|(s, _)| s.len() == d).map(|(_, p)| p).sum();
            assert!(close(total, 1.0, 1e-10), "length {d}: {total}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = build_mess3(0.6, 0.15).unwrap();
        let a = sample_sequence(&spec, &mut ChaCha8Rng::seed_from_u64(7), 10);
        let b = sample_sequence(&spec, &mut ChaCha8Rng::seed_from_u64(7), 10);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let one = sample_sequence(&spec, &mut ChaCha8Rng::seed_from_u64(1), 1);
        assert_eq!(one.len(), 1);
        assert!(one[0] < 3);
    }

    #[test]
    fn sampled_token_frequencies_are_uniform() {
        let spec = build_mess3(0.6, 0.15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 3];
        let mut total = 0;
        while total < 100_000 {
            for z in sample_sequence(&spec, &mut rng, 100).iter() {
                counts[*z as usize] += 1;
            }
            total += 100;
        }
        for c in counts {
            assert!(close(c as f64 / total as f64, 1.0 / 3.0, 0.01), "{counts:?}");
        }
    }

    #[test]
    fn token_seq_parsing() {
        assert_eq!(TokenSeq::parse("0120").unwrap().as_slice(), &[0, 1, 2, 0]);
        assert!(TokenSeq::parse("013").is_err());
        assert!(TokenSeq::parse("0a").is_err());
        assert_eq!(TokenSeq::new(vec![2, 1]).unwrap().to_string(), "21");
    }
}
