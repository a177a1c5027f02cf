//! Bell-basis configurations and unsigned Pauli strings.
//!
//! Bits are packed little-endian: site `i` lives in word `i / 64` at bit
//! `i % 64`. A site with `(r^z, r^x)` is the Pauli factor
//! `00 = I`, `01 = X`, `10 = Z`, `11 = ZX = iY`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Region;

#[inline]
fn words(n: usize) -> usize {
    n.div_ceil(64)
}

#[inline]
fn get(v: &[u64], i: usize) -> bool {
    (v[i >> 6] >> (i & 63)) & 1 == 1
}

#[inline]
fn flip(v: &mut [u64], i: usize) {
    v[i >> 6] ^= 1 << (i & 63);
}

#[inline]
fn set(v: &mut [u64], i: usize, b: bool) {
    let m = 1u64 << (i & 63);
    if b {
        v[i >> 6] |= m;
    } else {
        v[i >> 6] &= !m;
    }
}

/// Packed site mask used to evaluate signs over a region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteMask {
    n: usize,
    bits: Vec<u64>,
}

impl SiteMask {
    pub fn from_sites(n: usize, sites: &[usize]) -> Result<Self> {
        let mut bits = vec![0; words(n)];
        for &s in sites {
            if s >= n {
                return Err(Error::IndexOutOfRange { index: s, len: n });
            }
            set(&mut bits, s, true);
        }
        Ok(SiteMask { n, bits })
    }

    pub fn from_region(n: usize, region: &Region) -> Result<Self> {
        Self::from_sites(n, &region.sites)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BellConfig {
    n: usize,
    z: Vec<u64>,
    x: Vec<u64>,
}

impl BellConfig {
    /// All sites in `|0,0>`.
    pub fn identity(n: usize) -> Self {
        BellConfig { n, z: vec![0; words(n)], x: vec![0; words(n)] }
    }

    pub fn from_bits(rz: &[bool], rx: &[bool]) -> Result<Self> {
        if rz.len() != rx.len() {
            return Err(Error::LengthMismatch { expected: rz.len(), got: rx.len() });
        }
        let mut c = Self::identity(rz.len());
        for i in 0..rz.len() {
            set(&mut c.z, i, rz[i]);
            set(&mut c.x, i, rx[i]);
        }
        Ok(c)
    }

    /// Site `i` takes the two bits `(code >> 2i) & 3` as `r^z + 2 r^x`.
    pub fn from_index(n: usize, code: u64) -> Self {
        let mut c = Self::identity(n);
        for i in 0..n {
            let d = (code >> (2 * i)) & 3;
            set(&mut c.z, i, d & 1 == 1);
            set(&mut c.x, i, d & 2 == 2);
        }
        c
    }

    /// Inverse of [`BellConfig::from_index`]; valid for `n <= 32`.
    pub fn to_index(&self) -> u64 {
        let mut code = 0u64;
        for i in 0..self.n {
            code |= (self.z(i) as u64 | (self.x(i) as u64) << 1) << (2 * i);
        }
        code
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn z(&self, i: usize) -> bool {
        get(&self.z, i)
    }

    #[inline]
    pub fn x(&self, i: usize) -> bool {
        get(&self.x, i)
    }

    #[inline]
    pub fn flip_z(&mut self, i: usize) {
        flip(&mut self.z, i)
    }

    #[inline]
    pub fn flip_x(&mut self, i: usize) {
        flip(&mut self.x, i)
    }

    pub fn z_words(&self) -> &[u64] {
        &self.z
    }

    pub fn x_words(&self) -> &[u64] {
        &self.x
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.n {
            Err(Error::IndexOutOfRange { index: i, len: self.n })
        } else {
            Ok(())
        }
    }

    /// Transverse-field term on a site: needs `r^z_i = 0`, flips `r^x_i`.
    pub fn try_apply_site_x(&mut self, i: usize) -> Result<bool> {
        self.check(i)?;
        if self.z(i) {
            return Ok(false);
        }
        self.flip_x(i);
        Ok(true)
    }

    /// Ising bond: needs `r^x_i = r^x_j`, flips `r^z` on both.
    pub fn try_apply_bond_zz(&mut self, i: usize, j: usize) -> Result<bool> {
        self.check(i)?;
        self.check(j)?;
        if i == j {
            return Err(Error::InvalidRegion(format!("bond ({i},{j}) is degenerate")));
        }
        if self.x(i) != self.x(j) {
            return Ok(false);
        }
        self.flip_z(i);
        self.flip_z(j);
        Ok(true)
    }

    /// Plaquette term: needs even `r^z` parity on the four links, flips their `r^x`.
    pub fn try_apply_plaquette_x(&mut self, links: [usize; 4]) -> Result<bool> {
        for &l in &links {
            self.check(l)?;
        }
        if links.iter().map(|&l| self.z(l) as u8).sum::<u8>() % 2 == 1 {
            return Ok(false);
        }
        for &l in &links {
            self.flip_x(l);
        }
        Ok(true)
    }

    /// Electric-field term on a link: needs `r^x_i = 0`, flips `r^z_i`.
    pub fn try_apply_site_z(&mut self, i: usize) -> Result<bool> {
        self.check(i)?;
        if self.x(i) {
            return Ok(false);
        }
        self.flip_z(i);
        Ok(true)
    }

    /// `(-1)^{s^x . r^z + s^z . r^x}`.
    pub fn pauli_sign(&self, s: &PauliString) -> Result<i8> {
        if s.n != self.n {
            return Err(Error::LengthMismatch { expected: self.n, got: s.n });
        }
        Ok(self.pauli_sign_unchecked(s))
    }

    #[inline]
    pub fn pauli_sign_unchecked(&self, s: &PauliString) -> i8 {
        let mut acc = 0u32;
        for k in 0..self.z.len() {
            acc ^= ((s.x[k] & self.z[k]) ^ (s.z[k] & self.x[k])).count_ones();
        }
        1 - 2 * (acc & 1) as i8
    }

    /// `prod_{i in A} (-1)^{r^x_i r^z_i}`.
    pub fn swap_sign(&self, a: &Region) -> i8 {
        let mut acc = 0u8;
        for &i in &a.sites {
            acc ^= (self.z(i) & self.x(i)) as u8;
        }
        1 - 2 * acc as i8
    }

    #[inline]
    pub fn swap_sign_mask(&self, a: &SiteMask) -> i8 {
        let mut acc = 0u32;
        for k in 0..self.z.len() {
            acc ^= (self.z[k] & self.x[k] & a.bits[k]).count_ones();
        }
        1 - 2 * (acc & 1) as i8
    }

    /// Parity of `r^z` over a mask.
    #[inline]
    pub fn z_parity_mask(&self, m: &SiteMask) -> bool {
        let mut acc = 0u32;
        for k in 0..self.z.len() {
            acc ^= (self.z[k] & m.bits[k]).count_ones();
        }
        acc & 1 == 1
    }

    /// Parity of `r^x` over a mask.
    #[inline]
    pub fn x_parity_mask(&self, m: &SiteMask) -> bool {
        let mut acc = 0u32;
        for k in 0..self.x.len() {
            acc ^= (self.x[k] & m.bits[k]).count_ones();
        }
        acc & 1 == 1
    }

    /// Whether every masked site has `r^x = 0`.
    pub fn x_zero_on(&self, m: &SiteMask) -> bool {
        self.x.iter().zip(&m.bits).all(|(x, b)| x & b == 0)
    }

    /// XOR of all `r^z` bits.
    pub fn parity_z(&self) -> bool {
        self.z.iter().map(|w| w.count_ones()).sum::<u32>() & 1 == 1
    }

    /// Number of non-identity factors restricted to a mask.
    pub fn weight_on(&self, m: &SiteMask) -> usize {
        self.z
            .iter()
            .zip(&self.x)
            .zip(&m.bits)
            .map(|((z, x), b)| ((z | x) & b).count_ones() as usize)
            .sum()
    }

    pub fn weight(&self) -> usize {
        self.z.iter().zip(&self.x).map(|(z, x)| (z | x).count_ones() as usize).sum()
    }

    pub fn as_pauli(&self) -> PauliString {
        PauliString { n: self.n, z: self.z.clone(), x: self.x.clone() }
    }
}

impl fmt::Display for BellConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            write!(f, "{}{}", self.z(i) as u8, self.x(i) as u8)?;
        }
        Ok(())
    }
}

impl FromStr for BellConfig {
    type Err = Error;

    /// Two characters per site, `r^z` then `r^x`.
    fn from_str(s: &str) -> Result<Self> {
        let b: Vec<u8> = s.bytes().filter(|c| !c.is_ascii_whitespace()).collect();
        if b.len() % 2 != 0 || b.iter().any(|&c| c != b'0' && c != b'1') {
            return Err(Error::Parse(format!("bad Bell configuration `{s}`")));
        }
        let n = b.len() / 2;
        let rz: Vec<bool> = (0..n).map(|i| b[2 * i] == b'1').collect();
        let rx: Vec<bool> = (0..n).map(|i| b[2 * i + 1] == b'1').collect();
        BellConfig::from_bits(&rz, &rx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliString {
    n: usize,
    z: Vec<u64>,
    x: Vec<u64>,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString { n, z: vec![0; words(n)], x: vec![0; words(n)] }
    }

    /// Places the factor `p` in `{I, X, Y, Z}` on each listed site.
    pub fn from_factors(n: usize, factors: &[(usize, char)]) -> Result<Self> {
        let mut s = Self::identity(n);
        for &(i, p) in factors {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            let (bz, bx) = match p.to_ascii_uppercase() {
                'I' => (false, false),
                'X' => (false, true),
                'Y' => (true, true),
                'Z' => (true, false),
                other => return Err(Error::Parse(format!("unknown Pauli factor `{other}`"))),
            };
            set(&mut s.z, i, bz);
            set(&mut s.x, i, bx);
        }
        Ok(s)
    }

    /// Parses compact text like `X0X1` or `Z3 Z4 Y7` against `n` sites.
    pub fn parse(n: usize, text: &str) -> Result<Self> {
        let mut factors = Vec::new();
        let mut chars = text.chars().filter(|c| !c.is_whitespace()).peekable();
        while let Some(p) = chars.next() {
            let mut digits = String::new();
            while let Some(d) = chars.peek().filter(|d| d.is_ascii_digit()) {
                digits.push(*d);
                chars.next();
            }
            let i = digits
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("missing site index after `{p}` in `{text}`")))?;
            factors.push((i, p));
        }
        Self::from_factors(n, &factors)
    }

    /// The Pauli string `prod_{i in mask} X_i`.
    pub fn x_string(n: usize, sites: &[usize]) -> Result<Self> {
        Self::from_factors(n, &sites.iter().map(|&i| (i, 'X')).collect::<Vec<_>>())
    }

    pub fn z_string(n: usize, sites: &[usize]) -> Result<Self> {
        Self::from_factors(n, &sites.iter().map(|&i| (i, 'Z')).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn z(&self, i: usize) -> bool {
        get(&self.z, i)
    }

    pub fn x(&self, i: usize) -> bool {
        get(&self.x, i)
    }

    pub fn weight(&self) -> usize {
        self.z.iter().zip(&self.x).map(|(z, x)| (z | x).count_ones() as usize).sum()
    }

    /// Bit masks of the `Z` and `X` parts for `n <= 64`.
    pub fn masks(&self) -> (u64, u64) {
        (self.z.first().copied().unwrap_or(0), self.x.first().copied().unwrap_or(0))
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut any = false;
        for i in 0..self.n {
            let c = match (self.z(i), self.x(i)) {
                (false, false) => continue,
                (false, true) => 'X',
                (true, true) => 'Y',
                (true, false) => 'Z',
            };
            write!(f, "{c}{i}")?;
            any = true;
        }
        if !any {
            write!(f, "I")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(z: bool, x: bool) -> BellConfig {
        BellConfig::from_bits(&[z], &[x]).unwrap()
    }

    #[test]
    fn site_x_action() {
        let mut c = one(false, false);
        assert!(c.try_apply_site_x(0).unwrap());
        assert_eq!(c, one(false, true));
        assert!(c.try_apply_site_x(0).unwrap());
        assert_eq!(c, one(false, false));
        let mut c = one(true, false);
        assert!(!c.try_apply_site_x(0).unwrap());
        assert_eq!(c, one(true, false));
        assert!(matches!(c.try_apply_site_x(3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn bond_zz_action() {
        let mut c: BellConfig = "0000".parse().unwrap();
        assert!(c.try_apply_bond_zz(0, 1).unwrap());
        assert_eq!(c.to_string(), "1010");
        let mut c: BellConfig = "0100".parse().unwrap();
        assert!(!c.try_apply_bond_zz(0, 1).unwrap());
        let mut c: BellConfig = "0101".parse().unwrap();
        assert!(c.try_apply_bond_zz(0, 1).unwrap());
        assert_eq!(c.to_string(), "1111");
    }

    #[test]
    fn plaquette_action() {
        let mut c = BellConfig::identity(4);
        assert!(c.try_apply_plaquette_x([0, 1, 2, 3]).unwrap());
        assert_eq!(c.to_string(), "01010101");
        let mut c: BellConfig = "10000000".parse().unwrap();
        assert!(!c.try_apply_plaquette_x([0, 1, 2, 3]).unwrap());
        let mut c: BellConfig = "10100000".parse().unwrap();
        assert!(c.try_apply_plaquette_x([0, 1, 2, 3]).unwrap());
    }

    #[test]
    fn site_z_action() {
        let mut c = one(false, false);
        assert!(c.try_apply_site_z(0).unwrap());
        assert_eq!(c, one(true, false));
        assert!(c.try_apply_site_z(0).unwrap());
        assert_eq!(c, one(false, false));
        assert!(!one(false, true).try_apply_site_z(0).unwrap());
    }

    #[test]
    fn signs() {
        let x = PauliString::parse(1, "X0").unwrap();
        let y = PauliString::parse(1, "Y0").unwrap();
        assert_eq!(BellConfig::identity(1).pauli_sign(&x).unwrap(), 1);
        assert_eq!(one(true, false).pauli_sign(&x).unwrap(), -1);
        assert_eq!(one(true, true).pauli_sign(&y).unwrap(), 1);
        assert!(one(true, true).pauli_sign(&PauliString::identity(2)).is_err());

        let c: BellConfig = "110010".parse().unwrap();
        assert_eq!(c.swap_sign(&Region::empty("e")), 1);
        assert_eq!(c.swap_sign(&Region::new("a", vec![0, 1], 3).unwrap()), -1);
        let allz: BellConfig = "101010".parse().unwrap();
        assert_eq!(allz.swap_sign(&Region::new("a", vec![0, 1, 2], 3).unwrap()), 1);
    }

    #[test]
    fn parity() {
        assert!(!BellConfig::identity(5).parity_z());
        assert!("0010".parse::<BellConfig>().unwrap().parity_z());
        assert!(!"1010".parse::<BellConfig>().unwrap().parity_z());
    }

    #[test]
    fn text_round_trip() {
        let c: BellConfig = "00 01 10 11".parse().unwrap();
        assert_eq!(c.to_string(), "00011011");
        assert!("012".parse::<BellConfig>().is_err());
        let s = PauliString::parse(8, "X0 Z3Y7").unwrap();
        assert_eq!(s.to_string(), "X0Z3Y7");
        assert_eq!(s.weight(), 3);
    }

    fn arb_config(n: usize) -> impl Strategy<Value = BellConfig> {
        (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
            .prop_map(|(z, x)| BellConfig::from_bits(&z, &x).unwrap())
    }

    proptest! {
        #[test]
        fn actions_are_involutions(c in arb_config(70), i in 0usize..70, j in 0usize..70) {
            prop_assume!(i != j);
            let links = [i, j, (i + 1) % 70, (j + 2) % 70];
            let distinct = {
                let mut l = links.to_vec();
                l.sort();
                l.dedup();
                l.len() == 4
            };
            let mut d = c.clone();
            let ok = d.try_apply_site_x(i).unwrap();
            prop_assert_eq!(d.try_apply_site_x(i).unwrap(), ok);
            prop_assert_eq!(&d, &c);
            let ok = d.try_apply_site_z(i).unwrap();
            prop_assert_eq!(d.try_apply_site_z(i).unwrap(), ok);
            prop_assert_eq!(&d, &c);
            let ok = d.try_apply_bond_zz(i, j).unwrap();
            prop_assert_eq!(d.try_apply_bond_zz(i, j).unwrap(), ok);
            prop_assert_eq!(&d, &c);
            if distinct {
                let ok = d.try_apply_plaquette_x(links).unwrap();
                prop_assert_eq!(d.try_apply_plaquette_x(links).unwrap(), ok);
                prop_assert_eq!(&d, &c);
            }
        }

        #[test]
        fn bond_preserves_parity(c in arb_config(20), i in 0usize..20, j in 0usize..20) {
            prop_assume!(i != j);
            let mut d = c.clone();
            d.try_apply_bond_zz(i, j).unwrap();
            prop_assert_eq!(d.parity_z(), c.parity_z());
        }

        #[test]
        fn identity_string_has_plus_sign(c in arb_config(90)) {
            prop_assert_eq!(c.pauli_sign(&PauliString::identity(90)).unwrap(), 1);
        }

        #[test]
        fn swap_sign_factorizes(c in arb_config(80), sel in prop::collection::vec(any::<bool>(), 80)) {
            let a: Vec<usize> = (0..80).filter(|&i| sel[i]).collect();
            let a = Region::new("A", a, 80).unwrap();
            let b = a.complement(80, "B");
            let all = Region::new("all", (0..80).collect(), 80).unwrap();
            prop_assert_eq!(c.swap_sign(&a) * c.swap_sign(&b), c.swap_sign(&all));
            let m = SiteMask::from_region(80, &a).unwrap();
            prop_assert_eq!(c.swap_sign_mask(&m), c.swap_sign(&a));
        }

        #[test]
        fn packed_sign_matches_site_formula(c in arb_config(70), sz in prop::collection::vec(any::<bool>(), 70), sx in prop::collection::vec(any::<bool>(), 70)) {
            let factors: Vec<(usize, char)> = (0..70).map(|i| (i, match (sz[i], sx[i]) {
                (false, false) => 'I', (false, true) => 'X', (true, true) => 'Y', (true, false) => 'Z',
            })).collect();
            let s = PauliString::from_factors(70, &factors).unwrap();
            let e: usize = (0..70).map(|i| (sx[i] & c.z(i)) as usize + (sz[i] & c.x(i)) as usize).sum();
            let want = if e % 2 == 0 { 1 } else { -1 };
            prop_assert_eq!(c.pauli_sign(&s).unwrap(), want);
        }

        #[test]
        fn index_round_trip(code in 0u64..(1 << 20)) {
            prop_assert_eq!(BellConfig::from_index(10, code).to_index(), code);
        }
    }
}
