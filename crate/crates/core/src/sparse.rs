//! Hybrid sparse codec for the decomposed factor matrices/vectors.
//!
//! Low-sparsity (< 80%) factors use a bitmap format with a per-row pointer
//! vector so any element decodes in a fixed latency: 1 cycle for a zero bit,
//! 3 cycles for a present value (row fetch, prefix popcount + address add,
//! value fetch). High-sparsity (>= 80%) factors use a coordinate list paired
//! with a balanced binary search tree whose nodes each perform one single-axis
//! comparison; every query costs height + 1 cycles regardless of hit or miss.

use crate::matrix::Matrix;
use crate::scene::VmDecomposition;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("query ({x}, {y}) out of bounds for {rows}x{cols}")]
    OutOfBounds {
        x: usize,
        y: usize,
        rows: usize,
        cols: usize,
    },
    #[error("cannot encode an empty matrix")]
    EmptyMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Bitmap,
    Coo,
}

/// Byte widths of the size model. The tree node width is one axis byte plus
/// one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeModel {
    pub value_width: u64,
    pub coord_width: u64,
    pub ptr_width: u64,
}

impl Default for SizeModel {
    fn default() -> Self {
        SizeModel {
            value_width: 4,
            coord_width: 2,
            ptr_width: 4,
        }
    }
}

impl SizeModel {
    pub fn node_width(&self) -> u64 {
        1 + self.coord_width
    }
}

/// Result of one decode: the element value (0 for absent) and the modeled
/// latency in cycles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub value: f32,
    pub cycles: u32,
}

/// Bitmap format: per-row start offsets into the packed non-zero values plus
/// one presence bit per element.
#[derive(Debug, Clone, PartialEq)]
pub struct BitmapEncoding {
    rows: usize,
    cols: usize,
    row_ptr: Vec<u32>,
    words_per_row: usize,
    bits: Vec<u64>,
    values: Vec<f32>,
}

impl BitmapEncoding {
    pub fn from_matrix(m: &Matrix) -> Self {
        let (rows, cols) = (m.rows(), m.cols());
        let words_per_row = cols.div_ceil(64);
        let mut bits = vec![0u64; rows * words_per_row];
        let mut row_ptr = Vec::with_capacity(rows);
        let mut values = Vec::new();
        for r in 0..rows {
            row_ptr.push(values.len() as u32);
            for c in 0..cols {
                let v = m.at(r, c);
                if v != 0.0 {
                    bits[r * words_per_row + c / 64] |= 1u64 << (c % 64);
                    values.push(v);
                }
            }
        }
        BitmapEncoding {
            rows,
            cols,
            row_ptr,
            words_per_row,
            bits,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[u32] {
        &self.row_ptr
    }

    fn bit(&self, x: usize, y: usize) -> bool {
        self.bits[x * self.words_per_row + y / 64] >> (y % 64) & 1 == 1
    }

    /// Popcount of row bits in columns [0, y).
    fn row_prefix_popcount(&self, x: usize, y: usize) -> u32 {
        let base = x * self.words_per_row;
        let mut count = 0u32;
        let full_words = y / 64;
        for w in 0..full_words {
            count += self.bits[base + w].count_ones();
        }
        let rem = y % 64;
        if rem > 0 {
            count += (self.bits[base + full_words] & ((1u64 << rem) - 1)).count_ones();
        }
        count
    }

    pub fn query(&self, x: usize, y: usize) -> Result<QueryResult, SparseError> {
        if x >= self.rows || y >= self.cols {
            return Err(SparseError::OutOfBounds {
                x,
                y,
                rows: self.rows,
                cols: self.cols,
            });
        }
        // cycle 1: fetch row bits, check the presence bit
        if !self.bit(x, y) {
            return Ok(QueryResult {
                value: 0.0,
                cycles: 1,
            });
        }
        // cycle 2: prefix popcount + row start, cycle 3: value fetch
        let addr = self.row_ptr[x] + self.row_prefix_popcount(x, y);
        Ok(QueryResult {
            value: self.values[addr as usize],
            cycles: 3,
        })
    }
}

/// Maximum entries held in one search-tree leaf bucket.
pub const LEAF_BUCKET_CAPACITY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TreeNode {
    axis: Axis,
    threshold: u32,
}

/// Coordinate (COO) format: lexicographically sorted entries plus a perfect
/// binary search tree routing queries to buckets of at most
/// [`LEAF_BUCKET_CAPACITY`] entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CooEncoding {
    rows: usize,
    cols: usize,
    entries: Vec<(u32, u32, f32)>,
    height: usize,
    nodes: Vec<TreeNode>,
    leaves: Vec<Vec<u32>>,
}

impl CooEncoding {
    pub fn from_matrix(m: &Matrix) -> Self {
        let (rows, cols) = (m.rows(), m.cols());
        let mut entries = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = m.at(r, c);
                if v != 0.0 {
                    entries.push((r as u32, c as u32, v));
                }
            }
        }
        entries.sort_unstable_by_key(|e| (e.0, e.1));

        let needed = entries.len().div_ceil(LEAF_BUCKET_CAPACITY).max(1);
        let mut height = needed.next_power_of_two().trailing_zeros() as usize;
        loop {
            if let Some((nodes, leaves)) = build_tree(&entries, height) {
                return CooEncoding {
                    rows,
                    cols,
                    entries,
                    height,
                    nodes,
                    leaves,
                };
            }
            height += 1;
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn query(&self, x: usize, y: usize) -> Result<QueryResult, SparseError> {
        if x >= self.rows || y >= self.cols {
            return Err(SparseError::OutOfBounds {
                x,
                y,
                rows: self.rows,
                cols: self.cols,
            });
        }
        // one comparison per level, then the leaf's direct match
        let mut node = 0usize;
        for _ in 0..self.height {
            let n = &self.nodes[node];
            let coord = match n.axis {
                Axis::X => x as u32,
                Axis::Y => y as u32,
            };
            node = 2 * node + if coord < n.threshold { 1 } else { 2 };
        }
        let leaf = node - (self.nodes.len());
        let mut value = 0.0f32;
        for &i in &self.leaves[leaf] {
            let e = self.entries[i as usize];
            if e.0 == x as u32 && e.1 == y as u32 {
                value = e.2;
                break;
            }
        }
        Ok(QueryResult {
            value,
            cycles: self.height as u32 + 1,
        })
    }
}

/// Build a perfect tree of the given height: split entry sets at the median
/// coordinate of the preferred axis (alternating x then y with depth),
/// falling back to the other axis when every entry lands on one side.
/// Returns None when some leaf overflows its bucket.
fn build_tree(
    entries: &[(u32, u32, f32)],
    height: usize,
) -> Option<(Vec<TreeNode>, Vec<Vec<u32>>)> {
    let n_nodes = (1usize << height) - 1;
    let mut nodes = vec![
        TreeNode {
            axis: Axis::X,
            threshold: 0
        };
        n_nodes
    ];
    let mut leaves = vec![Vec::new(); 1usize << height];
    let all: Vec<u32> = (0..entries.len() as u32).collect();

    fn coord(e: (u32, u32, f32), axis: Axis) -> u32 {
        match axis {
            Axis::X => e.0,
            Axis::Y => e.1,
        }
    }

    fn split(
        entries: &[(u32, u32, f32)],
        idx: &[u32],
        axis: Axis,
    ) -> Option<(u32, Vec<u32>, Vec<u32>)> {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable_by_key(|&i| coord(entries[i as usize], axis));
        let t = coord(entries[sorted[sorted.len() / 2] as usize], axis);
        let cut = sorted.partition_point(|&i| coord(entries[i as usize], axis) < t);
        if cut == 0 || cut == sorted.len() {
            return None;
        }
        let right = sorted.split_off(cut);
        Some((t, sorted, right))
    }

    fn descend(
        entries: &[(u32, u32, f32)],
        nodes: &mut [TreeNode],
        leaves: &mut [Vec<u32>],
        node: usize,
        depth: usize,
        height: usize,
        idx: Vec<u32>,
    ) -> bool {
        if depth == height {
            if idx.len() > LEAF_BUCKET_CAPACITY {
                return false;
            }
            leaves[node - nodes.len()] = idx;
            return true;
        }
        let preferred = if depth.is_multiple_of(2) {
            Axis::X
        } else {
            Axis::Y
        };
        let other = if depth.is_multiple_of(2) {
            Axis::Y
        } else {
            Axis::X
        };
        let (axis, t, left, right) = match split(entries, &idx, preferred) {
            Some((t, l, r)) => (preferred, t, l, r),
            None => match split(entries, &idx, other) {
                Some((t, l, r)) => (other, t, l, r),
                None => {
                    // zero or one distinct coordinate: route everything left
                    let t = idx
                        .iter()
                        .map(|&i| coord(entries[i as usize], preferred))
                        .max()
                        .map_or(1, |m| m + 1);
                    (preferred, t, idx, Vec::new())
                }
            },
        };
        nodes[node] = TreeNode { axis, threshold: t };
        descend(
            entries,
            nodes,
            leaves,
            2 * node + 1,
            depth + 1,
            height,
            left,
        ) && descend(
            entries,
            nodes,
            leaves,
            2 * node + 2,
            depth + 1,
            height,
            right,
        )
    }

    if height == 0 {
        if entries.len() > LEAF_BUCKET_CAPACITY {
            return None;
        }
        leaves[0] = all;
        return Some((nodes, leaves));
    }
    if descend(entries, &mut nodes, &mut leaves, 0, 0, height, all) {
        Some((nodes, leaves))
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Bitmap(BitmapEncoding),
    Coo(CooEncoding),
}

/// A factor encoded under the hybrid policy, with its decode-latency and
/// size metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridEncoding {
    pub variant: Variant,
    pub payload: Payload,
    /// Zero fraction of the source matrix in [0, 1].
    pub sparsity: f64,
    /// Size in bytes under the default [`SizeModel`].
    pub encoded_bytes: u64,
}

/// The selection policy: COO at sparsity >= 0.80 (exact rational compare),
/// bitmap below.
pub fn choose_variant(zeros: usize, total: usize) -> Variant {
    if zeros * 5 >= total * 4 {
        Variant::Coo
    } else {
        Variant::Bitmap
    }
}

pub fn encode(m: &Matrix) -> Result<HybridEncoding, SparseError> {
    if m.data().is_empty() {
        return Err(SparseError::EmptyMatrix);
    }
    let variant = choose_variant(m.zero_count(), m.data().len());
    encode_forced(m, variant)
}

pub fn encode_forced(m: &Matrix, variant: Variant) -> Result<HybridEncoding, SparseError> {
    if m.data().is_empty() {
        return Err(SparseError::EmptyMatrix);
    }
    let payload = match variant {
        Variant::Bitmap => Payload::Bitmap(BitmapEncoding::from_matrix(m)),
        Variant::Coo => Payload::Coo(CooEncoding::from_matrix(m)),
    };
    let mut enc = HybridEncoding {
        variant,
        payload,
        sparsity: m.sparsity(),
        encoded_bytes: 0,
    };
    enc.encoded_bytes = encoded_size(&enc, &SizeModel::default());
    Ok(enc)
}

impl HybridEncoding {
    pub fn rows(&self) -> usize {
        match &self.payload {
            Payload::Bitmap(b) => b.rows(),
            Payload::Coo(c) => c.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match &self.payload {
            Payload::Bitmap(b) => b.cols(),
            Payload::Coo(c) => c.cols(),
        }
    }

    pub fn nnz(&self) -> usize {
        match &self.payload {
            Payload::Bitmap(b) => b.nnz(),
            Payload::Coo(c) => c.nnz(),
        }
    }

    pub fn tree_height(&self) -> Option<usize> {
        match &self.payload {
            Payload::Bitmap(_) => None,
            Payload::Coo(c) => Some(c.height()),
        }
    }

    pub fn query(&self, x: usize, y: usize) -> Result<QueryResult, SparseError> {
        match &self.payload {
            Payload::Bitmap(b) => b.query(x, y),
            Payload::Coo(c) => c.query(x, y),
        }
    }

    /// JSON dump for inspection: header fields plus base64 payloads.
    pub fn dump_json(&self) -> serde_json::Value {
        let mut doc = serde_json::json!({
            "variant": match self.variant { Variant::Bitmap => "bitmap", Variant::Coo => "coo" },
            "rows": self.rows(),
            "cols": self.cols(),
            "sparsity": self.sparsity,
            "nnz": self.nnz(),
            "encoded_bytes": self.encoded_bytes,
            "tree_height": self.tree_height(),
        });
        let payloads = match &self.payload {
            Payload::Bitmap(b) => {
                let mut bitmap_bytes = Vec::new();
                for w in &b.bits {
                    bitmap_bytes.extend_from_slice(&w.to_le_bytes());
                }
                serde_json::json!({
                    "row_ptr": base64_encode(&le_bytes_u32(&b.row_ptr)),
                    "bitmap": base64_encode(&bitmap_bytes),
                    "values": base64_encode(&le_bytes_f32(&b.values)),
                })
            }
            Payload::Coo(c) => {
                let mut entry_bytes = Vec::new();
                for (x, y, v) in &c.entries {
                    entry_bytes.extend_from_slice(&x.to_le_bytes());
                    entry_bytes.extend_from_slice(&y.to_le_bytes());
                    entry_bytes.extend_from_slice(&v.to_le_bytes());
                }
                let mut node_bytes = Vec::new();
                for n in &c.nodes {
                    node_bytes.push(match n.axis {
                        Axis::X => 0u8,
                        Axis::Y => 1u8,
                    });
                    node_bytes.extend_from_slice(&n.threshold.to_le_bytes());
                }
                serde_json::json!({
                    "entries": base64_encode(&entry_bytes),
                    "tree_nodes": base64_encode(&node_bytes),
                })
            }
        };
        doc["payload"] = payloads;
        doc
    }
}

/// Size in bytes under a given width model.
pub fn encoded_size(enc: &HybridEncoding, model: &SizeModel) -> u64 {
    match &enc.payload {
        Payload::Bitmap(b) => {
            let cells = (b.rows() * b.cols()) as u64;
            cells.div_ceil(8)
                + b.rows() as u64 * model.ptr_width
                + b.nnz() as u64 * model.value_width
        }
        Payload::Coo(c) => {
            c.nnz() as u64 * (2 * model.coord_width + model.value_width)
                + c.node_count() as u64 * model.node_width()
        }
    }
}

fn le_bytes_u32(vals: &[u32]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn le_bytes_f32(vals: &[f32]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
}

const B64_ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

fn base64_encode(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len().div_ceil(3) * 4);
    for chunk in bytes.chunks(3) {
        let b = [
            chunk[0],
            *chunk.get(1).unwrap_or(&0),
            *chunk.get(2).unwrap_or(&0),
        ];
        let n = (b[0] as u32) << 16 | (b[1] as u32) << 8 | b[2] as u32;
        out.push(B64_ALPHABET[(n >> 18) as usize & 63] as char);
        out.push(B64_ALPHABET[(n >> 12) as usize & 63] as char);
        out.push(if chunk.len() > 1 {
            B64_ALPHABET[(n >> 6) as usize & 63] as char
        } else {
            '='
        });
        out.push(if chunk.len() > 2 {
            B64_ALPHABET[n as usize & 63] as char
        } else {
            '='
        });
    }
    out
}

/// Per-factor sparsity census of a decomposition, with the low/high split
/// under the 0.80 policy threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusEntry {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub zeros: usize,
    pub total: usize,
    pub sparsity: f64,
    pub variant: Variant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Census {
    pub factors: Vec<CensusEntry>,
    /// Fraction of factors below the 0.80 threshold (bitmap side).
    pub low_share: f64,
    pub high_share: f64,
}

pub fn sparsity_census(decomp: &VmDecomposition) -> Census {
    let mut factors = Vec::new();
    let mut low = 0usize;
    for (label, view) in decomp.labeled_factors() {
        let zeros = view.data.iter().filter(|v| **v == 0.0).count();
        let total = view.data.len();
        let variant = choose_variant(zeros, total);
        if variant == Variant::Bitmap {
            low += 1;
        }
        factors.push(CensusEntry {
            label,
            rows: view.rows,
            cols: view.cols,
            zeros,
            total,
            sparsity: zeros as f64 / total as f64,
            variant,
        });
    }
    let n = factors.len().max(1);
    Census {
        low_share: low as f64 / n as f64,
        high_share: (factors.len() - low) as f64 / n as f64,
        factors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(rows: usize, cols: usize, zeros: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n = rows * cols;
        let mut data: Vec<f32> = (0..n).map(|_| 0.5 + rng.random::<f32>()).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..zeros.min(n) {
            let j = i + (rng.random::<u64>() as usize) % (n - i);
            idx.swap(i, j);
            data[idx[i]] = 0.0;
        }
        Matrix::from_vec(rows, cols, data)
    }

    #[test]
    fn variant_threshold_is_inclusive_on_the_coo_side() {
        let just_below = random_matrix(100, 100, 7900, 1);
        assert_eq!(encode(&just_below).unwrap().variant, Variant::Bitmap);
        let at_boundary = random_matrix(100, 100, 8000, 2);
        assert_eq!(encode(&at_boundary).unwrap().variant, Variant::Coo);
    }

    #[test]
    fn all_zero_matrix_encodes_as_minimal_coo() {
        let m = Matrix::zeros(16, 16);
        let enc = encode(&m).unwrap();
        assert_eq!(enc.variant, Variant::Coo);
        assert_eq!(enc.nnz(), 0);
        assert_eq!(enc.tree_height(), Some(0));
        assert_eq!(
            enc.query(3, 3).unwrap(),
            QueryResult {
                value: 0.0,
                cycles: 1
            }
        );
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let m = Matrix::zeros(0, 4);
        assert_eq!(encode(&m).unwrap_err(), SparseError::EmptyMatrix);
    }

    #[test]
    fn bitmap_query_cycles_follow_the_zero_law() {
        let m = random_matrix(64, 64, 2000, 3);
        let enc = encode_forced(&m, Variant::Bitmap).unwrap();
        for x in 0..64 {
            for y in 0..64 {
                let q = enc.query(x, y).unwrap();
                assert_eq!(q.value, m.at(x, y));
                if m.at(x, y) == 0.0 {
                    assert_eq!(q.cycles, 1);
                } else {
                    assert_eq!(q.cycles, 3);
                }
            }
        }
    }

    #[test]
    fn coo_query_cycles_are_constant_height_plus_one() {
        let m = random_matrix(128, 128, 128 * 128 * 95 / 100, 4);
        let enc = encode_forced(&m, Variant::Coo).unwrap();
        let height = enc.tree_height().unwrap();
        for x in 0..128 {
            for y in 0..128 {
                let q = enc.query(x, y).unwrap();
                assert_eq!(q.value, m.at(x, y));
                assert_eq!(q.cycles, height as u32 + 1);
            }
        }
    }

    #[test]
    fn height_three_tree_costs_four_cycles() {
        // 100 entries in a 256x256 matrix: ceil(100/16) = 7 leaves -> 8,
        // height 3, so the walk is three comparisons plus the leaf match
        let mut m = Matrix::zeros(256, 256);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut placed = 0;
        while placed < 99 {
            let (x, y) = (
                (rng.random::<u32>() as usize) % 256,
                (rng.random::<u32>() as usize) % 256,
            );
            if m.at(x, y) == 0.0 {
                m.set(x, y, 1.0 + placed as f32);
                placed += 1;
            }
        }
        m.set(3, 161, 42.0);
        let enc = encode_forced(&m, Variant::Coo).unwrap();
        assert_eq!(enc.tree_height(), Some(3));
        assert_eq!(
            enc.query(3, 161).unwrap(),
            QueryResult {
                value: 42.0,
                cycles: 4
            }
        );
        // absent coordinate: same fixed latency
        let absent = enc.query(4, 200).unwrap();
        assert_eq!(
            absent,
            QueryResult {
                value: m.at(4, 200),
                cycles: 4
            }
        );
    }

    #[test]
    fn row_ptr_matches_prefix_popcount() {
        let m = random_matrix(33, 70, 800, 6);
        if let Payload::Bitmap(b) = encode_forced(&m, Variant::Bitmap).unwrap().payload {
            let mut running = 0u32;
            for r in 0..33 {
                assert_eq!(b.row_ptr()[r], running);
                running += b.row_prefix_popcount(r, 70);
            }
            assert_eq!(running as usize, b.nnz());
        } else {
            panic!("expected bitmap payload");
        }
    }

    #[test]
    fn vectors_encode_as_one_row_matrices() {
        let v = Matrix::from_row(vec![0.0, 3.0, 0.0, 0.0, 7.0]);
        for variant in [Variant::Bitmap, Variant::Coo] {
            let enc = encode_forced(&v, variant).unwrap();
            for y in 0..5 {
                assert_eq!(enc.query(0, y).unwrap().value, v.at(0, y));
            }
            assert!(enc.query(1, 0).is_err());
        }
    }

    #[test]
    fn bitmap_size_follows_the_model() {
        // 128x128, nnz = 0: 2048 bitmap bytes + 512 pointer bytes
        let m = Matrix::zeros(128, 128);
        let enc = encode_forced(&m, Variant::Bitmap).unwrap();
        assert_eq!(encoded_size(&enc, &SizeModel::default()), 2560);
    }

    #[test]
    fn coo_size_follows_the_model() {
        let m = random_matrix(128, 128, 128 * 128 - 164, 8);
        let enc = encode_forced(&m, Variant::Coo).unwrap();
        let nodes = match &enc.payload {
            Payload::Coo(c) => c.node_count() as u64,
            _ => unreachable!(),
        };
        // 164 entries * (2*2 + 4) bytes = 1312 payload bytes + tree nodes
        assert_eq!(encoded_size(&enc, &SizeModel::default()), 1312 + nodes * 3);
    }

    #[test]
    fn hybrid_policy_size_tradeoff_across_sparsities() {
        // The 0.80 rule is a fixed-latency policy, not the size-optimal
        // crossover: below the threshold the chosen bitmap side is also the
        // smaller one, at and above it the chosen COO side costs extra bytes
        // in exchange for tree-routed decode.
        let total = 100 * 100;
        for (i, sparsity) in [0.04, 0.3, 0.6, 0.8, 0.92].iter().enumerate() {
            let zeros = (sparsity * total as f64).round() as usize;
            let m = random_matrix(100, 100, zeros, 10 + i as u64);
            let chosen = encode(&m).unwrap();
            let other_variant = match chosen.variant {
                Variant::Bitmap => Variant::Coo,
                Variant::Coo => Variant::Bitmap,
            };
            let other = encode_forced(&m, other_variant).unwrap();
            let ratio = chosen.encoded_bytes as f64 / other.encoded_bytes as f64;
            if *sparsity < 0.8 {
                assert!(
                    ratio <= 1.25,
                    "sparsity {sparsity}: chosen {} vs other {}",
                    chosen.encoded_bytes,
                    other.encoded_bytes
                );
            } else {
                assert_eq!(chosen.variant, Variant::Coo);
                assert!(
                    ratio > 1.25 && ratio < 1.75,
                    "sparsity {sparsity}: ratio {ratio} outside the documented band"
                );
            }
        }
    }

    #[test]
    fn dump_json_has_header_fields() {
        let m = random_matrix(32, 32, 512, 12);
        let enc = encode(&m).unwrap();
        let doc = enc.dump_json();
        for key in [
            "variant",
            "rows",
            "cols",
            "sparsity",
            "nnz",
            "encoded_bytes",
            "tree_height",
            "payload",
        ] {
            assert!(doc.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn census_counts_low_and_high_split() {
        let scene = crate::scene::generate_synthetic_scene(&crate::scene::SceneGenConfig {
            resolution: [16, 16, 16],
            target_occupancy: 0.2,
            rank: 2,
            channels: 2,
            seed: 40,
            factor_sparsity: vec![0.3, 0.9],
            ..Default::default()
        })
        .unwrap();
        let census = sparsity_census(&scene.decomp);
        assert_eq!(census.factors.len(), 6 * (2 + 4));
        assert!((census.low_share + census.high_share - 1.0).abs() < 1e-12);
        for entry in &census.factors {
            let zeros = entry.zeros;
            assert_eq!(entry.variant, choose_variant(zeros, entry.total));
        }
    }

    #[test]
    fn census_all_dense_is_all_low() {
        let scene = crate::scene::generate_synthetic_scene(&crate::scene::SceneGenConfig {
            resolution: [8, 8, 8],
            target_occupancy: 0.5,
            rank: 1,
            channels: 1,
            seed: 2,
            factor_sparsity: vec![0.0],
            ..Default::default()
        })
        .unwrap();
        let census = sparsity_census(&scene.decomp);
        assert_eq!(census.low_share, 1.0);
        assert!(census.factors.iter().all(|f| f.sparsity == 0.0));
    }

    #[test]
    fn lossless_round_trip_across_sparsity_range() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for case in 0..60 {
            let rows = 1 + (rng.random::<u32>() as usize) % 40;
            let cols = 1 + (rng.random::<u32>() as usize) % 40;
            let total = rows * cols;
            let sparsity = 0.04 + rng.random::<f64>() * 0.88;
            let zeros = (sparsity * total as f64).round() as usize;
            let m = random_matrix(rows, cols, zeros, 1000 + case);
            for variant in [Variant::Bitmap, Variant::Coo] {
                let enc = encode_forced(&m, variant).unwrap();
                for x in 0..rows {
                    for y in 0..cols {
                        assert_eq!(enc.query(x, y).unwrap().value, m.at(x, y));
                    }
                }
            }
        }
    }
}
