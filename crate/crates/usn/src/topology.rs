//! Uniform sparse bipartite topology generation.
//!
//! A sparsity pattern is a set of edges between `n_in` input neurons and
//! `n_out` output neurons, stored in CSR over input rows. A *uniform* pattern
//! additionally satisfies the USN constraint: row degrees take at most two
//! consecutive values `q_out`/`q_out+1` with exactly `out_remainder` rows on
//! the high value, and likewise for column degrees.
//!
//! Generation uses a configuration-model dealing scheme: a multiset of column
//! slots (one per incoming connection) is shuffled and dealt to the rows,
//! then duplicate edges inside a row are repaired by swapping slots between
//! rows. Dealing preserves both degree sequences exactly; repair swaps keep
//! them intact. For density above 0.5 the complement pattern is generated
//! instead, which keeps the collision rate low at any density.

use std::collections::HashSet;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const MAGIC: &[u8; 4] = b"USN1";
const MAX_DEALS: usize = 64;
const MAX_REPAIR_PASSES: usize = 32;
const MAX_SWAP_TRIES: usize = 64;

/// Derived degree targets for a `(n_in, n_out, density)` triple.
///
/// `total_edges = n_in * base_out_degree + out_remainder
///              = n_out * base_in_degree + in_remainder`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeSpec {
    pub n_in: u32,
    pub n_out: u32,
    pub density: f64,
    pub total_edges: u64,
    pub base_out_degree: u32,
    pub out_remainder: u32,
    pub base_in_degree: u32,
    pub in_remainder: u32,
}

/// Connection budget for a grid: `round(density * n_in * n_out)`, half-up.
pub fn edge_count(n_in: u32, n_out: u32, density: f64) -> u64 {
    let slots = n_in as u64 * n_out as u64;
    let e = (density.clamp(0.0, 1.0) * slots as f64 + 0.5).floor() as u64;
    e.min(slots)
}

/// Degree targets for a `(n_in, n_out, density)` triple. Density is clamped
/// to `[0, 1]`.
pub fn degree_spec(n_in: u32, n_out: u32, density: f64) -> DegreeSpec {
    assert!(n_in >= 1 && n_out >= 1, "empty layer");
    let density = density.clamp(0.0, 1.0);
    let e = edge_count(n_in, n_out, density);
    DegreeSpec {
        n_in,
        n_out,
        density,
        total_edges: e,
        base_out_degree: (e / n_in as u64) as u32,
        out_remainder: (e % n_in as u64) as u32,
        base_in_degree: (e / n_out as u64) as u32,
        in_remainder: (e % n_out as u64) as u32,
    }
}

impl DegreeSpec {
    /// The complementary spec at `E' = n_in * n_out - E`.
    fn complement(&self) -> DegreeSpec {
        let slots = self.n_in as u64 * self.n_out as u64;
        let e = slots - self.total_edges;
        DegreeSpec {
            n_in: self.n_in,
            n_out: self.n_out,
            density: 1.0 - self.density,
            total_edges: e,
            base_out_degree: (e / self.n_in as u64) as u32,
            out_remainder: (e % self.n_in as u64) as u32,
            base_in_degree: (e / self.n_out as u64) as u32,
            in_remainder: (e % self.n_out as u64) as u32,
        }
    }
}

/// A bipartite edge set in CSR layout over input rows; the USN topology.
///
/// Immutable after construction; may be shared freely across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n_in: u32,
    n_out: u32,
    row_offsets: Vec<u64>,
    col_indices: Vec<u32>,
    seed: u64,
}

impl SparsityPattern {
    /// Builds a pattern from per-row column lists. Rows are sorted here;
    /// duplicate edges are rejected.
    fn from_rows(n_in: u32, n_out: u32, mut rows: Vec<Vec<u32>>, seed: u64) -> Result<Self> {
        let mut row_offsets = Vec::with_capacity(n_in as usize + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0u64);
        for row in &mut rows {
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Construction("duplicate edge in row".into()));
            }
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len() as u64);
        }
        Ok(SparsityPattern {
            n_in,
            n_out,
            row_offsets,
            col_indices,
            seed,
        })
    }

    pub fn n_in(&self) -> u32 {
        self.n_in
    }

    pub fn n_out(&self) -> u32 {
        self.n_out
    }

    pub fn n_edges(&self) -> u64 {
        self.col_indices.len() as u64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row_offsets(&self) -> &[u64] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    /// Column indices of row `i`, sorted ascending.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.col_indices[self.row_offsets[i] as usize..self.row_offsets[i + 1] as usize]
    }

    pub fn row_degree(&self, i: usize) -> u32 {
        (self.row_offsets[i + 1] - self.row_offsets[i]) as u32
    }

    /// In-degree of every column.
    pub fn col_degrees(&self) -> Vec<u32> {
        let mut deg = vec![0u32; self.n_out as usize];
        for &c in &self.col_indices {
            deg[c as usize] += 1;
        }
        deg
    }

    /// Iterates `(row, col)` pairs in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n_in as usize)
            .flat_map(move |i| self.row(i).iter().map(move |&c| (i as u32, c)))
    }

    /// Checks the full USN invariant set: structural CSR validity plus
    /// degree spread <= 1 with exact remainder counts on both sides.
    pub fn validate_uniform(&self) -> Result<()> {
        self.validate_structure()?;
        // Re-derive the remainder split directly from the edge count so the
        // check does not depend on density rounding.
        let (q_out, r_out) = (
            self.n_edges() / self.n_in as u64,
            self.n_edges() % self.n_in as u64,
        );
        let (q_in, r_in) = (
            self.n_edges() / self.n_out as u64,
            self.n_edges() % self.n_out as u64,
        );
        let mut high_rows = 0u64;
        for i in 0..self.n_in as usize {
            let d = self.row_degree(i) as u64;
            if d == q_out + 1 {
                high_rows += 1;
            } else if d != q_out {
                return Err(Error::Construction(format!(
                    "row {i} degree {d} outside {{{q_out}, {}}}",
                    q_out + 1
                )));
            }
        }
        if high_rows != r_out {
            return Err(Error::Construction(format!(
                "{high_rows} high-degree rows, expected {r_out}"
            )));
        }
        let mut high_cols = 0u64;
        for (j, &d) in self.col_degrees().iter().enumerate() {
            let d = d as u64;
            if d == q_in + 1 {
                high_cols += 1;
            } else if d != q_in {
                return Err(Error::Construction(format!(
                    "column {j} degree {d} outside {{{q_in}, {}}}",
                    q_in + 1
                )));
            }
        }
        if high_cols != r_in {
            return Err(Error::Construction(format!(
                "{high_cols} high-degree columns, expected {r_in}"
            )));
        }
        Ok(())
    }

    /// Structural CSR validity: monotone offsets, in-range sorted
    /// deduplicated rows.
    pub fn validate_structure(&self) -> Result<()> {
        if self.row_offsets.len() != self.n_in as usize + 1
            || self.row_offsets[0] != 0
            || *self.row_offsets.last().unwrap() != self.col_indices.len() as u64
        {
            return Err(Error::Construction("inconsistent row offsets".into()));
        }
        if self.row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Construction("row offsets not monotone".into()));
        }
        for i in 0..self.n_in as usize {
            let row = self.row(i);
            if row.iter().any(|&c| c >= self.n_out) {
                return Err(Error::Construction(format!("column out of range in row {i}")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Construction(format!(
                    "row {i} not strictly increasing"
                )));
            }
        }
        Ok(())
    }

    /// Binary pattern file: magic `USN1`, u32 n_in, u32 n_out, u64 E,
    /// u64 seed, n_in+1 u64 row offsets, E u32 column indices, all
    /// little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(self.n_in)?;
        w.write_u32::<LittleEndian>(self.n_out)?;
        w.write_u64::<LittleEndian>(self.n_edges())?;
        w.write_u64::<LittleEndian>(self.seed)?;
        for &o in &self.row_offsets {
            w.write_u64::<LittleEndian>(o)?;
        }
        for &c in &self.col_indices {
            w.write_u32::<LittleEndian>(c)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let parse_err = |offset: u64, message: &str| Error::Parse {
            offset,
            message: message.into(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| parse_err(0, "truncated magic"))?;
        if &magic != MAGIC {
            return Err(parse_err(0, "bad magic, expected USN1"));
        }
        let n_in = r
            .read_u32::<LittleEndian>()
            .map_err(|_| parse_err(4, "truncated n_in"))?;
        let n_out = r
            .read_u32::<LittleEndian>()
            .map_err(|_| parse_err(8, "truncated n_out"))?;
        if n_in == 0 || n_out == 0 {
            return Err(parse_err(4, "zero-sized pattern"));
        }
        let e = r
            .read_u64::<LittleEndian>()
            .map_err(|_| parse_err(12, "truncated edge count"))?;
        if e > n_in as u64 * n_out as u64 {
            return Err(parse_err(12, "edge count exceeds grid"));
        }
        let seed = r
            .read_u64::<LittleEndian>()
            .map_err(|_| parse_err(20, "truncated seed"))?;
        let mut row_offsets = Vec::with_capacity(n_in as usize + 1);
        let mut offset = 28u64;
        for _ in 0..=n_in {
            row_offsets.push(
                r.read_u64::<LittleEndian>()
                    .map_err(|_| parse_err(offset, "truncated row offsets"))?,
            );
            offset += 8;
        }
        let mut col_indices = Vec::with_capacity(e as usize);
        for _ in 0..e {
            col_indices.push(
                r.read_u32::<LittleEndian>()
                    .map_err(|_| parse_err(offset, "truncated column indices"))?,
            );
            offset += 4;
        }
        let p = SparsityPattern {
            n_in,
            n_out,
            row_offsets,
            col_indices,
            seed,
        };
        p.validate_uniform().map_err(|e| Error::Parse {
            offset: 28,
            message: format!("invariant violation: {e}"),
        })?;
        Ok(p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = std::io::Cursor::new(bytes);
        Self::read_from(&mut cur)
    }
}

/// Generates a uniform sparse pattern: deterministic in `(spec, seed)`.
/// The rows and columns that receive the +1 remainder degree are uniformly
/// random subsets, re-drawn per pattern.
pub fn generate_uniform(spec: &DegreeSpec, seed: u64) -> Result<SparsityPattern> {
    if spec.out_remainder > 0 && spec.base_out_degree + 1 > spec.n_out {
        return Err(Error::Infeasible(format!(
            "out-degree {} exceeds {} outputs",
            spec.base_out_degree + 1,
            spec.n_out
        )));
    }
    let mut rng = rng_from_seed(seed);
    let slots = spec.n_in as u64 * spec.n_out as u64;
    // Generating the complement at density > 0.5 keeps within-row collisions
    // rare during dealing.
    if 2 * spec.total_edges > slots {
        let rows = deal_and_repair(&spec.complement(), &mut rng)?;
        let full: Vec<u32> = (0..spec.n_out).collect();
        let complemented: Vec<Vec<u32>> = rows
            .into_iter()
            .map(|mut row| {
                row.sort_unstable();
                let mut out = Vec::with_capacity(spec.n_out as usize - row.len());
                let mut it = row.iter().peekable();
                for &c in &full {
                    if it.peek() == Some(&&c) {
                        it.next();
                    } else {
                        out.push(c);
                    }
                }
                out
            })
            .collect();
        let p = SparsityPattern::from_rows(spec.n_in, spec.n_out, complemented, seed)?;
        debug_assert!(p.validate_uniform().is_ok());
        return Ok(p);
    }
    let rows = deal_and_repair(spec, &mut rng)?;
    let p = SparsityPattern::from_rows(spec.n_in, spec.n_out, rows, seed)?;
    debug_assert!(p.validate_uniform().is_ok());
    Ok(p)
}

/// Configuration-model dealing with duplicate repair. Returns per-row column
/// lists realizing both degree sequences with no duplicate edges.
fn deal_and_repair(spec: &DegreeSpec, rng: &mut Xoshiro256PlusPlus) -> Result<Vec<Vec<u32>>> {
    let n_in = spec.n_in as usize;
    let n_out = spec.n_out as usize;

    // Random remainder subsets: which rows/columns carry the +1 degree.
    let row_degrees = remainder_degrees(n_in, spec.base_out_degree, spec.out_remainder, rng);
    let col_degrees = remainder_degrees(n_out, spec.base_in_degree, spec.in_remainder, rng);

    let mut slots: Vec<u32> = Vec::with_capacity(spec.total_edges as usize);
    for (j, &d) in col_degrees.iter().enumerate() {
        for _ in 0..d {
            slots.push(j as u32);
        }
    }

    for _ in 0..MAX_DEALS {
        slots.shuffle(rng);
        let mut rows: Vec<Vec<u32>> = Vec::with_capacity(n_in);
        let mut cursor = 0usize;
        for &d in &row_degrees {
            rows.push(slots[cursor..cursor + d as usize].to_vec());
            cursor += d as usize;
        }
        if repair_duplicates(&mut rows, rng) {
            return Ok(rows);
        }
    }
    Err(Error::Construction(format!(
        "duplicate repair failed after {MAX_DEALS} deals (n_in={n_in}, n_out={n_out}, E={})",
        spec.total_edges
    )))
}

/// Degree per index: `remainder` uniformly chosen indices get `base + 1`.
fn remainder_degrees(
    n: usize,
    base: u32,
    remainder: u32,
    rng: &mut Xoshiro256PlusPlus,
) -> Vec<u32> {
    let mut degrees = vec![base; n];
    if remainder > 0 {
        let chosen = rand::seq::index::sample(rng, n, remainder as usize);
        for i in chosen {
            degrees[i] += 1;
        }
    }
    degrees
}

/// Swaps away duplicate `(row, col)` edges. A duplicate occurrence of column
/// `c1` in row `r1` is exchanged with a slot `(r2, c2)` such that neither row
/// gains a duplicate. Swaps preserve both degree sequences. Returns true if
/// all duplicates were eliminated.
fn repair_duplicates(rows: &mut [Vec<u32>], rng: &mut Xoshiro256PlusPlus) -> bool {
    let n_in = rows.len();
    let mut seen: Vec<HashSet<u32>> = rows
        .iter()
        .map(|r| r.iter().copied().collect::<HashSet<u32>>())
        .collect();

    for _ in 0..MAX_REPAIR_PASSES {
        let mut dups: Vec<(usize, usize)> = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let mut present: HashSet<u32> = HashSet::with_capacity(row.len());
            for (idx, &c) in row.iter().enumerate() {
                if !present.insert(c) {
                    dups.push((r, idx));
                }
            }
        }
        if dups.is_empty() {
            return true;
        }
        for (r1, idx1) in dups {
            let c1 = rows[r1][idx1];
            for _ in 0..MAX_SWAP_TRIES {
                let r2 = rng.random_range(0..n_in);
                if r2 == r1 || rows[r2].is_empty() {
                    continue;
                }
                let idx2 = rng.random_range(0..rows[r2].len());
                let c2 = rows[r2][idx2];
                if c1 != c2 && !seen[r1].contains(&c2) && !seen[r2].contains(&c1) {
                    rows[r1][idx1] = c2;
                    rows[r2][idx2] = c1;
                    // c1 stays present in r1 (it was duplicated there).
                    seen[r1].insert(c2);
                    seen[r2].remove(&c2);
                    seen[r2].insert(c1);
                    break;
                }
            }
        }
    }
    false
}

/// Uniformly random size-E subset of the `n_in x n_out` slot grid; the
/// general sparse baseline. Degree uniformity is NOT enforced.
pub fn generate_random(
    n_in: u32,
    n_out: u32,
    total_edges: u64,
    seed: u64,
) -> Result<SparsityPattern> {
    let slots = n_in as u64 * n_out as u64;
    if total_edges > slots {
        return Err(Error::Domain(format!(
            "{total_edges} edges exceed {slots} slots"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut picked: Vec<u64> = rand::seq::index::sample(&mut rng, slots as usize, total_edges as usize)
        .into_iter()
        .map(|i| i as u64)
        .collect();
    picked.sort_unstable();
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_in as usize];
    for slot in picked {
        rows[(slot / n_out as u64) as usize].push((slot % n_out as u64) as u32);
    }
    SparsityPattern::from_rows(n_in, n_out, rows, seed)
}

/// Fraction of edges of `a` absent from `b`: `1 - |a ∩ b| / E`.
pub fn pattern_distance(a: &SparsityPattern, b: &SparsityPattern) -> Result<f64> {
    if a.n_in != b.n_in || a.n_out != b.n_out {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.n_in, a.n_out, b.n_in, b.n_out
        )));
    }
    if a.n_edges() != b.n_edges() {
        return Err(Error::Shape(format!(
            "edge counts differ: {} vs {}",
            a.n_edges(),
            b.n_edges()
        )));
    }
    if a.n_edges() == 0 {
        return Err(Error::Domain("distance undefined for empty patterns".into()));
    }
    let mut common = 0u64;
    for i in 0..a.n_in as usize {
        let (ra, rb) = (a.row(i), b.row(i));
        let (mut x, mut y) = (0usize, 0usize);
        while x < ra.len() && y < rb.len() {
            match ra[x].cmp(&rb[y]) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    common += 1;
                    x += 1;
                    y += 1;
                }
            }
        }
    }
    Ok(1.0 - common as f64 / a.n_edges() as f64)
}
