//! Sherrington-Kirkpatrick instances: generation, energies and the text file format.
//!
//! Spins are encoded in the bits of a basis index. Bit `i` equal to 0 means
//! spin `i` is up (+1), bit `i` equal to 1 means down (-1). The least
//! significant bit is the first spin.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{QamcError, Result};
use crate::rng;
use crate::scalar::Real;

pub const MIN_SPINS: usize = 2;
/// Dense transition matrices at this size already need about 2 GB.
pub const MAX_SPINS: usize = 14;

pub fn check_spin_count(n: usize) -> Result<()> {
    if (MIN_SPINS..=MAX_SPINS).contains(&n) {
        Ok(())
    } else {
        Err(QamcError::SpinCount {
            n,
            min: MIN_SPINS,
            max: MAX_SPINS,
        })
    }
}

fn check_explicit_size(n: usize) -> Result<()> {
    if (1..=MAX_SPINS).contains(&n) {
        Ok(())
    } else {
        Err(QamcError::SpinCount {
            n,
            min: 1,
            max: MAX_SPINS,
        })
    }
}

/// A basis state of `n` Ising spins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SpinConfig(u32);

impl SpinConfig {
    #[inline]
    pub fn new(index: usize) -> Self {
        SpinConfig(index as u32)
    }

    /// Checked constructor for indices coming from outside the crate.
    pub fn checked(index: usize, n: usize) -> Result<Self> {
        if n < 32 && index < (1usize << n) {
            Ok(SpinConfig(index as u32))
        } else {
            Err(QamcError::Domain(format!(
                "state index {index} out of range for {n} spins"
            )))
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Spin value of site `i` as +1 or -1.
    #[inline]
    pub fn spin(self, i: usize) -> i8 {
        if (self.0 >> i) & 1 == 0 {
            1
        } else {
            -1
        }
    }

    pub fn spins(self, n: usize) -> Vec<i8> {
        (0..n).map(|i| self.spin(i)).collect()
    }

    pub fn from_spins(spins: &[i8]) -> Result<Self> {
        let mut index = 0u32;
        for (i, &s) in spins.iter().enumerate() {
            match s {
                1 => {}
                -1 => index |= 1 << i,
                other => {
                    return Err(QamcError::Domain(format!(
                        "spin {i} has value {other}, expected +1 or -1"
                    )))
                }
            }
        }
        Ok(SpinConfig(index))
    }

    #[inline]
    pub fn flip(self, i: usize) -> Self {
        SpinConfig(self.0 ^ (1 << i))
    }

    /// Number of differing spins.
    #[inline]
    pub fn hamming(self, other: SpinConfig) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

/// An SK problem instance: couplings `J_ij` for `i < j` and fields `h_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkInstance<F> {
    n: usize,
    couplings: Vec<F>,
    fields: Vec<F>,
    seed: u64,
}

#[inline]
fn pair_offset(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

impl<F: Real> SkInstance<F> {
    /// Draws i.i.d. standard-normal couplings and fields from the instance
    /// stream of `seed`. Couplings come first in row-major upper-triangular
    /// order, then fields.
    pub fn generate(n: usize, seed: u64) -> Result<Self> {
        check_spin_count(n)?;
        let mut rng = rng::stream(seed, rng::purpose::INSTANCE);
        let mut draw = || F::lit(StandardNormal.sample(&mut rng));
        let couplings = (0..n * (n - 1) / 2).map(|_| draw()).collect();
        let fields = (0..n).map(|_| draw()).collect();
        Ok(SkInstance {
            n,
            couplings,
            fields,
            seed,
        })
    }

    /// Builds an instance from explicit arrays, validating lengths and finiteness.
    /// Hand-built instances may have a single spin.
    pub fn from_parts(n: usize, couplings: Vec<F>, fields: Vec<F>, seed: u64) -> Result<Self> {
        check_explicit_size(n)?;
        if couplings.len() != n * (n - 1) / 2 {
            return Err(QamcError::Validation(format!(
                "{} couplings supplied for n={n}, expected {}",
                couplings.len(),
                n * (n - 1) / 2
            )));
        }
        if fields.len() != n {
            return Err(QamcError::Validation(format!(
                "{} fields supplied for n={n}",
                fields.len()
            )));
        }
        if couplings.iter().chain(&fields).any(|v| !v.is_finite()) {
            return Err(QamcError::Validation("non-finite coupling or field".into()));
        }
        Ok(SkInstance {
            n,
            couplings,
            fields,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn couplings(&self) -> &[F] {
        &self.couplings
    }

    pub fn fields(&self) -> &[F] {
        &self.fields
    }

    pub fn instance_id(&self) -> String {
        format!("n{}-{:016x}", self.n, self.seed)
    }

    /// `J_ij` for any ordered or unordered pair of distinct sites, zero on the diagonal.
    pub fn coupling(&self, i: usize, j: usize) -> F {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Less => self.couplings[pair_offset(self.n, i, j)],
            Greater => self.couplings[pair_offset(self.n, j, i)],
            Equal => F::zero(),
        }
    }

    /// `E(σ) = Σ_{i<j} J_ij σ_i σ_j + Σ_i h_i σ_i`.
    pub fn energy(&self, cfg: SpinConfig) -> F {
        let mut e = F::zero();
        let mut k = 0;
        for i in 0..self.n {
            let si = F::from_i8(cfg.spin(i)).unwrap();
            e = e + self.fields[i] * si;
            for j in i + 1..self.n {
                let sj = F::from_i8(cfg.spin(j)).unwrap();
                e = e + self.couplings[k] * si * sj;
                k += 1;
            }
        }
        e
    }

    /// Energy change when flipping spin `i` of `cfg`.
    pub fn flip_delta(&self, cfg: SpinConfig, i: usize) -> F {
        let mut local = self.fields[i];
        for j in 0..self.n {
            if j != i {
                local = local + self.coupling(i, j) * F::from_i8(cfg.spin(j)).unwrap();
            }
        }
        let two = F::lit(2.0);
        -two * F::from_i8(cfg.spin(i)).unwrap() * local
    }

    /// Energies of all `2^n` basis states in index order.
    ///
    /// Each state is reached from the state without its lowest set bit by a
    /// single flip, so the whole table costs `O(n 2^n)`.
    pub fn all_energies(&self) -> Vec<F> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(dim);
        out.push(self.energy(SpinConfig(0)));
        for k in 1..dim {
            let low = k.trailing_zeros() as usize;
            // `parent` differs from `k` only in bit `low`.
            let parent = SpinConfig::new(k & (k - 1));
            let e = out[parent.index()] + self.flip_delta(parent, low);
            out.push(e);
        }
        out
    }

    /// Serializes to the text instance format with 1-based site indices.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n={}", self.n).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "couplings:").unwrap();
        for i in 0..self.n {
            for j in i + 1..self.n {
                writeln!(s, "{} {} {}", i + 1, j + 1, self.coupling(i, j)).unwrap();
            }
        }
        writeln!(s, "fields:").unwrap();
        for (i, h) in self.fields.iter().enumerate() {
            writeln!(s, "{} {}", i + 1, h).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        parse_instance(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

#[derive(PartialEq)]
enum Section {
    Header,
    Couplings,
    Fields,
}

fn parse_err(line: usize, msg: impl Into<String>) -> QamcError {
    QamcError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

fn parse_instance<F: Real>(text: &str) -> Result<SkInstance<F>> {
    let mut n: Option<usize> = None;
    let mut seed: Option<u64> = None;
    let mut section = Section::Header;
    let mut couplings: Vec<Option<F>> = Vec::new();
    let mut fields: Vec<Option<F>> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "couplings:" | "fields:" => {
                let size = n.ok_or_else(|| parse_err(line_no, "section before n= header"))?;
                if seed.is_none() {
                    return Err(parse_err(line_no, "section before seed= header"));
                }
                if line == "couplings:" {
                    if section != Section::Header {
                        return Err(parse_err(line_no, "unexpected couplings: section"));
                    }
                    section = Section::Couplings;
                    couplings = vec![None; size * (size - 1) / 2];
                } else {
                    if section != Section::Couplings {
                        return Err(parse_err(line_no, "fields: must follow couplings:"));
                    }
                    section = Section::Fields;
                    fields = vec![None; size];
                }
                continue;
            }
            _ => {}
        }
        match section {
            Section::Header => {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| parse_err(line_no, format!("expected key=value, got '{line}'")))?;
                match key.trim() {
                    "n" => {
                        let v: usize = parse_num(Some(value.trim()), line_no, "n")?;
                        check_explicit_size(v).map_err(|e| parse_err(line_no, e.to_string()))?;
                        n = Some(v);
                    }
                    "seed" => seed = Some(parse_num(Some(value.trim()), line_no, "seed")?),
                    other => return Err(parse_err(line_no, format!("unknown header key '{other}'"))),
                }
            }
            Section::Couplings => {
                let size = n.unwrap();
                let mut toks = line.split_whitespace();
                let i: usize = parse_num(toks.next(), line_no, "coupling index i")?;
                let j: usize = parse_num(toks.next(), line_no, "coupling index j")?;
                let v: F = parse_num(toks.next(), line_no, "coupling value")?;
                if toks.next().is_some() {
                    return Err(parse_err(line_no, "trailing tokens in coupling line"));
                }
                if !(1 <= i && i < j && j <= size) {
                    return Err(parse_err(line_no, format!("coupling indices ({i},{j}) must satisfy 1<=i<j<={size}")));
                }
                if !v.is_finite() {
                    return Err(parse_err(line_no, "non-finite coupling"));
                }
                let slot = &mut couplings[pair_offset(size, i - 1, j - 1)];
                if slot.is_some() {
                    return Err(parse_err(line_no, format!("duplicate coupling ({i},{j})")));
                }
                *slot = Some(v);
            }
            Section::Fields => {
                let size = n.unwrap();
                let mut toks = line.split_whitespace();
                let i: usize = parse_num(toks.next(), line_no, "field index")?;
                let v: F = parse_num(toks.next(), line_no, "field value")?;
                if toks.next().is_some() {
                    return Err(parse_err(line_no, "trailing tokens in field line"));
                }
                if !(1..=size).contains(&i) {
                    return Err(parse_err(line_no, format!("field index {i} outside 1..={size}")));
                }
                if !v.is_finite() {
                    return Err(parse_err(line_no, "non-finite field"));
                }
                if fields[i - 1].is_some() {
                    return Err(parse_err(line_no, format!("duplicate field {i}")));
                }
                fields[i - 1] = Some(v);
            }
        }
    }

    let n = n.ok_or_else(|| parse_err(last_line, "missing n= header"))?;
    let seed = seed.ok_or_else(|| parse_err(last_line, "missing seed= header"))?;
    if section != Section::Fields {
        return Err(parse_err(last_line, "file ended before the fields: section"));
    }
    let couplings = collect_complete(couplings, "couplings", n)?;
    let fields = collect_complete(fields, "fields", n)?;
    SkInstance::from_parts(n, couplings, fields, seed)
}

fn collect_complete<F>(values: Vec<Option<F>>, what: &str, n: usize) -> Result<Vec<F>> {
    let expected = values.len();
    let got: Vec<F> = values.into_iter().flatten().collect();
    if got.len() != expected {
        return Err(QamcError::Validation(format!(
            "{what}: {} of {expected} entries present for n={n}",
            got.len()
        )));
    }
    Ok(got)
}
