//! Matrix storage layouts and the N-dimensional affine access patterns the
//! streamer frontends execute.
//!
//! An [`AffinePattern`] is a list of `(bound, stride)` dimensions, innermost
//! first: the k-th word it touches lives at
//! `base + sum_i idx_i * stride_i` where `idx` counts through the bounds
//! odometer-style (dimension 0 fastest). Strides are in bytes; every issue
//! moves one bank word.
//!
//! [`transform_pattern_pair`] builds the matched source/destination pattern
//! pair for a layout transform: both patterns enumerate the logical words of
//! the matrix in the same order, so a streaming copy from one to the other
//! performs the transform without any intermediate buffer.

use crate::oracle::RefLayout;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("cannot parse layout '{0}' (expected MN or MNM<tm>N<tn>)")]
    Parse(String),
    #[error("{what} ({value}) is not a multiple of {of}")]
    NotMultiple {
        what: &'static str,
        value: u64,
        of: u64,
    },
    #[error("tile width {tn} x element size {elem} must fill whole words")]
    TileNotWordAligned { tn: u64, elem: u64 },
    #[error("transform between tiles of different heights ({a} vs {b}) is unsupported")]
    MixedTileHeights { a: u64, b: u64 },
    #[error("pattern needs {needed} dimensions but the streamer supports {max}")]
    TooManyDims { needed: usize, max: usize },
    #[error("pattern bound must be >= 1 (dimension {0})")]
    ZeroBound(usize),
    #[error("streamed transpose requires single-byte elements in 8x8 tiles")]
    TransposeShape,
}

/// Storage layout of a two-dimensional matrix.
///
/// `MN` is plain row-major; `MNM<tm>N<tn>` is a row-major grid of
/// `tm x tn`-element tiles, row-major inside each tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayoutSpec {
    RowMajor,
    Tiled { tm: u64, tn: u64 },
}

impl LayoutSpec {
    pub fn as_ref_layout(self) -> RefLayout {
        match self {
            LayoutSpec::RowMajor => RefLayout::RowMajor,
            LayoutSpec::Tiled { tm, tn } => RefLayout::Tiled {
                tm: tm as usize,
                tn: tn as usize,
            },
        }
    }

    /// Checks that a `rows x cols` matrix can be held in this layout.
    pub fn check_dims(self, rows: u64, cols: u64) -> Result<(), LayoutError> {
        if let LayoutSpec::Tiled { tm, tn } = self {
            if !rows.is_multiple_of(tm) {
                return Err(LayoutError::NotMultiple {
                    what: "rows",
                    value: rows,
                    of: tm,
                });
            }
            if !cols.is_multiple_of(tn) {
                return Err(LayoutError::NotMultiple {
                    what: "cols",
                    value: cols,
                    of: tn,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for LayoutSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutSpec::RowMajor => write!(f, "MN"),
            LayoutSpec::Tiled { tm, tn } => write!(f, "MNM{tm}N{tn}"),
        }
    }
}

impl FromStr for LayoutSpec {
    type Err = LayoutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "MN" {
            return Ok(LayoutSpec::RowMajor);
        }
        let body = s
            .strip_prefix("MNM")
            .ok_or_else(|| LayoutError::Parse(s.to_string()))?;
        let (tm_s, tn_s) = body
            .split_once('N')
            .ok_or_else(|| LayoutError::Parse(s.to_string()))?;
        let tm: u64 = tm_s.parse().map_err(|_| LayoutError::Parse(s.to_string()))?;
        let tn: u64 = tn_s.parse().map_err(|_| LayoutError::Parse(s.to_string()))?;
        if tm == 0 || tn == 0 {
            return Err(LayoutError::Parse(s.to_string()));
        }
        Ok(LayoutSpec::Tiled { tm, tn })
    }
}

impl TryFrom<String> for LayoutSpec {
    type Error = LayoutError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LayoutSpec> for String {
    fn from(l: LayoutSpec) -> String {
        l.to_string()
    }
}

/// An N-dimensional affine word-access pattern, innermost dimension first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffinePattern {
    /// Iteration count along each dimension.
    pub bounds: Vec<u64>,
    /// Byte step along each dimension.
    pub strides: Vec<i64>,
}

impl AffinePattern {
    pub fn new(bounds: Vec<u64>, strides: Vec<i64>) -> Result<Self, LayoutError> {
        assert_eq!(bounds.len(), strides.len(), "bounds/strides length mismatch");
        for (i, &b) in bounds.iter().enumerate() {
            if b == 0 {
                return Err(LayoutError::ZeroBound(i));
            }
        }
        Ok(AffinePattern { bounds, strides })
    }

    /// One-dimensional pattern walking `words` consecutive words.
    pub fn contiguous(words: u64, word_bytes: u64) -> Self {
        AffinePattern {
            bounds: vec![words],
            strides: vec![word_bytes as i64],
        }
    }

    pub fn ndims(&self) -> usize {
        self.bounds.len()
    }

    /// Total number of words the pattern touches.
    pub fn word_count(&self) -> u64 {
        self.bounds.iter().product()
    }

    /// Byte offset (relative to the pattern base) of the k-th word issued.
    pub fn offset_at(&self, k: u64) -> i64 {
        let mut rem = k;
        let mut off = 0i64;
        for (b, s) in self.bounds.iter().zip(&self.strides) {
            off += (rem % b) as i64 * s;
            rem /= b;
        }
        off
    }

    /// Iterates the relative byte offsets in issue order.
    pub fn iter_offsets(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.word_count()).map(|k| self.offset_at(k))
    }

    /// Smallest and largest relative byte offset the pattern can produce.
    pub fn offset_extent(&self) -> (i64, i64) {
        let mut lo = 0i64;
        let mut hi = 0i64;
        for (b, s) in self.bounds.iter().zip(&self.strides) {
            let span = (*b as i64 - 1) * s;
            if span < 0 {
                lo += span;
            } else {
                hi += span;
            }
        }
        (lo, hi)
    }

    /// Checks dimension count and word alignment of every stride.
    pub fn check(&self, max_dims: usize, word_bytes: u64) -> Result<(), LayoutError> {
        if self.ndims() > max_dims {
            return Err(LayoutError::TooManyDims {
                needed: self.ndims(),
                max: max_dims,
            });
        }
        for (i, &s) in self.strides.iter().enumerate() {
            if s.unsigned_abs() % word_bytes != 0 {
                return Err(LayoutError::NotMultiple {
                    what: "stride",
                    value: s.unsigned_abs(),
                    of: word_bytes,
                });
            }
            if self.bounds[i] == 0 {
                return Err(LayoutError::ZeroBound(i));
            }
        }
        Ok(())
    }
}

/// Word-granular pattern that walks the storage buffer of a `rows x cols`
/// matrix in plain storage order (which is contiguous for every layout).
pub fn layout_to_pattern(
    layout: LayoutSpec,
    rows: u64,
    cols: u64,
    elem_bytes: u64,
    word_bytes: u64,
) -> Result<AffinePattern, LayoutError> {
    layout.check_dims(rows, cols)?;
    let total_bytes = rows * cols * elem_bytes;
    if !total_bytes.is_multiple_of(word_bytes) {
        return Err(LayoutError::NotMultiple {
            what: "matrix bytes",
            value: total_bytes,
            of: word_bytes,
        });
    }
    Ok(AffinePattern::contiguous(total_bytes / word_bytes, word_bytes))
}

/// Element-granular pattern enumerating a `rows x cols` matrix in storage
/// order: 1-D for row-major, 4-D for tiled (element within the tile row,
/// row within the tile, tile column, tile row — innermost first). Mostly
/// useful as an executable definition of each layout; streaming uses the
/// word-granular builders below.
pub fn layout_element_pattern(
    layout: LayoutSpec,
    rows: u64,
    cols: u64,
    elem_bytes: u64,
) -> Result<AffinePattern, LayoutError> {
    layout.check_dims(rows, cols)?;
    let e = elem_bytes as i64;
    match layout {
        LayoutSpec::RowMajor => AffinePattern::new(vec![rows * cols], vec![e]),
        LayoutSpec::Tiled { tm, tn } => AffinePattern::new(
            vec![tn, tm, cols / tn, rows / tm],
            vec![
                e,
                tn as i64 * e,
                (tm * tn) as i64 * e,
                (tm * cols) as i64 * e,
            ],
        ),
    }
}

/// Total bytes a pattern touches: one word per issue.
pub fn pattern_bytes(p: &AffinePattern, word_bytes: u64) -> u64 {
    p.word_count() * word_bytes
}

/// Two-dimensional row/word pattern over a row-major matrix: the same word
/// order as [`layout_to_pattern`], but expressed per row so it can pair with
/// a tiled-side pattern.
fn row_major_words(rows: u64, row_bytes: u64, word_bytes: u64) -> AffinePattern {
    AffinePattern {
        bounds: vec![row_bytes / word_bytes, rows],
        strides: vec![word_bytes as i64, row_bytes as i64],
    }
}

/// Pattern over a `tm`-high tiled image that enumerates logical words in
/// row-major matrix order (matching [`row_major_words`] on the plain side).
///
/// Innermost to outermost: word within a tile row-segment, tile column,
/// row within the tile, tile row.
fn tiled_in_row_major_order(
    rows: u64,
    cols_bytes: u64,
    tm: u64,
    tn_bytes: u64,
    word_bytes: u64,
) -> AffinePattern {
    let tile_row_bytes = tm * tn_bytes; // one whole tile
    AffinePattern {
        bounds: vec![tn_bytes / word_bytes, cols_bytes / tn_bytes, tm, rows / tm],
        strides: vec![
            word_bytes as i64,
            tile_row_bytes as i64,
            tn_bytes as i64,
            (tm * cols_bytes) as i64,
        ],
    }
}

/// Builds the matched (source, destination) pattern pair for re-laying out a
/// `rows x cols` matrix of `elem_bytes`-wide elements from `src` to `dst`.
///
/// Both returned patterns touch exactly the words of their own buffer once,
/// and the k-th word of the source pattern is the same logical word as the
/// k-th word of the destination pattern.
pub fn transform_pattern_pair(
    src: LayoutSpec,
    dst: LayoutSpec,
    rows: u64,
    cols: u64,
    elem_bytes: u64,
    word_bytes: u64,
) -> Result<(AffinePattern, AffinePattern), LayoutError> {
    src.check_dims(rows, cols)?;
    dst.check_dims(rows, cols)?;
    let cols_bytes = cols * elem_bytes;
    if !cols_bytes.is_multiple_of(word_bytes) {
        return Err(LayoutError::NotMultiple {
            what: "row bytes",
            value: cols_bytes,
            of: word_bytes,
        });
    }
    let tile_ok = |tn: u64| -> Result<u64, LayoutError> {
        let tn_bytes = tn * elem_bytes;
        if !tn_bytes.is_multiple_of(word_bytes) {
            return Err(LayoutError::TileNotWordAligned {
                tn,
                elem: elem_bytes,
            });
        }
        Ok(tn_bytes)
    };

    // Identical layouts: storage order on both sides, one dimension.
    if src == dst {
        let p = layout_to_pattern(src, rows, cols, elem_bytes, word_bytes)?;
        return Ok((p.clone(), p));
    }
    match (src, dst) {
        (LayoutSpec::RowMajor, LayoutSpec::RowMajor) => unreachable!(),
        (LayoutSpec::RowMajor, LayoutSpec::Tiled { tm, tn }) => {
            let tn_bytes = tile_ok(tn)?;
            Ok((
                row_major_words(rows, cols_bytes, word_bytes),
                tiled_in_row_major_order(rows, cols_bytes, tm, tn_bytes, word_bytes),
            ))
        }
        (LayoutSpec::Tiled { tm, tn }, LayoutSpec::RowMajor) => {
            let tn_bytes = tile_ok(tn)?;
            Ok((
                tiled_in_row_major_order(rows, cols_bytes, tm, tn_bytes, word_bytes),
                row_major_words(rows, cols_bytes, word_bytes),
            ))
        }
        (LayoutSpec::Tiled { tm: tma, tn: tna }, LayoutSpec::Tiled { tm: tmb, tn: tnb }) => {
            if tma != tmb {
                return Err(LayoutError::MixedTileHeights { a: tma, b: tmb });
            }
            // Order the pair as (small tile, large tile) and swap back at the
            // end if the caller asked for large -> small.
            let (s, g, swapped) = if tna < tnb {
                (tna, tnb, false)
            } else {
                (tnb, tna, true)
            };
            if g % s != 0 {
                return Err(LayoutError::NotMultiple {
                    what: "large tile width",
                    value: g,
                    of: s,
                });
            }
            let tm = tma;
            let s_bytes = tile_ok(s)?;
            let g_bytes = tile_ok(g)?;
            let f = g / s; // small tiles per large tile, horizontally
            // Shared order, innermost first: word within a small-tile row
            // segment, small tile within the large tile, row within the
            // tile, large tile column, tile row. Interleaving the small
            // tiles of one large tile keeps both sides' bank footprints
            // spread across the row.
            let bounds = vec![
                s_bytes / word_bytes,
                f,
                tm,
                cols_bytes / g_bytes,
                rows / tm,
            ];
            let small = AffinePattern {
                bounds: bounds.clone(),
                strides: vec![
                    word_bytes as i64,
                    (tm * s_bytes) as i64,
                    s_bytes as i64,
                    (tm * g_bytes) as i64,
                    (tm * cols_bytes) as i64,
                ],
            };
            let large = AffinePattern {
                bounds,
                strides: vec![
                    word_bytes as i64,
                    s_bytes as i64,
                    g_bytes as i64,
                    (tm * g_bytes) as i64,
                    (tm * cols_bytes) as i64,
                ],
            };
            if swapped {
                Ok((large, small))
            } else {
                Ok((small, large))
            }
        }
    }
}

/// Builds the (source, destination) pattern pair for a streamed transpose of
/// a `rows x cols` single-byte matrix held in 8x8 tiles on both sides.
///
/// The source walks whole tiles down each tile column; an in-stream 8x8
/// transpose stage flips each tile; the destination writes contiguously,
/// which lands the flipped tiles exactly in the `cols x rows` tiled image.
pub fn transpose_pattern_pair(
    rows: u64,
    cols: u64,
    elem_bytes: u64,
    word_bytes: u64,
) -> Result<(AffinePattern, AffinePattern), LayoutError> {
    let tile = 8;
    if elem_bytes != 1 || word_bytes != 8 || !rows.is_multiple_of(tile) || !cols.is_multiple_of(tile) {
        return Err(LayoutError::TransposeShape);
    }
    let tile_bytes = tile * tile; // 64 contiguous bytes per tile
    let src = AffinePattern {
        bounds: vec![tile, rows / tile, cols / tile],
        strides: vec![
            word_bytes as i64,
            (tile * cols) as i64,
            tile_bytes as i64,
        ],
    };
    let dst = AffinePattern::contiguous(rows * cols / word_bytes, word_bytes);
    Ok((src, dst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ref_elem_offset, ref_transform, ref_transpose};
    use proptest::prelude::*;

    const WORD: u64 = 8;

    fn layouts() -> Vec<LayoutSpec> {
        vec![
            LayoutSpec::RowMajor,
            LayoutSpec::Tiled { tm: 8, tn: 8 },
            LayoutSpec::Tiled { tm: 8, tn: 16 },
            LayoutSpec::Tiled { tm: 8, tn: 32 },
        ]
    }

    /// Applies a pattern pair as a word-by-word copy and returns the
    /// resulting destination image.
    fn apply_pair(pair: &(AffinePattern, AffinePattern), src_img: &[u8]) -> Vec<u8> {
        let (src, dst) = pair;
        assert_eq!(src.word_count(), dst.word_count());
        let mut out = vec![0u8; src_img.len()];
        for (so, do_) in src.iter_offsets().zip(dst.iter_offsets()) {
            let (s, d) = (so as usize, do_ as usize);
            out[d..d + 8].copy_from_slice(&src_img[s..s + 8]);
        }
        out
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["MN", "MNM8N8", "MNM8N16", "MNM16N32"] {
            let l: LayoutSpec = s.parse().unwrap();
            assert_eq!(l.to_string(), s);
        }
        assert!("NM".parse::<LayoutSpec>().is_err());
        assert!("MNM0N8".parse::<LayoutSpec>().is_err());
        assert!("MNM8".parse::<LayoutSpec>().is_err());
    }

    #[test]
    fn contiguous_pattern_for_row_major_4x4() {
        // 16 single-byte elements = 2 words.
        let p = layout_to_pattern(LayoutSpec::RowMajor, 4, 4, 1, WORD).unwrap();
        assert_eq!(p.bounds, vec![2]);
        assert_eq!(p.strides, vec![8]);
        assert_eq!(p.iter_offsets().collect::<Vec<_>>(), vec![0, 8]);
    }

    #[test]
    fn odometer_order_is_innermost_first() {
        let p = AffinePattern::new(vec![2, 2], vec![8, 64]).unwrap();
        assert_eq!(p.iter_offsets().collect::<Vec<_>>(), vec![0, 8, 64, 72]);
    }

    #[test]
    fn negative_strides_walk_backwards() {
        let p = AffinePattern::new(vec![3], vec![-8]).unwrap();
        assert_eq!(p.iter_offsets().collect::<Vec<_>>(), vec![0, -8, -16]);
        assert_eq!(p.offset_extent(), (-16, 0));
    }

    #[test]
    fn dimension_budget_is_enforced() {
        let p = AffinePattern::new(vec![2; 7], vec![8; 7]).unwrap();
        let err = p.check(6, WORD).unwrap_err();
        assert_eq!(
            err,
            LayoutError::TooManyDims {
                needed: 7,
                max: 6
            }
        );
        p.check(7, WORD).unwrap();
    }

    #[test]
    fn element_pattern_matches_reference_offsets_exhaustively() {
        // For every element (r, c) of a 64x64 matrix, the canonical
        // element-granular pattern's emission for that element must land on
        // the reference model's offset; collectively the offsets cover every
        // byte exactly once.
        for layout in layouts() {
            let p = layout_element_pattern(layout, 64, 64, 1).unwrap();
            let offs: Vec<i64> = p.iter_offsets().collect();
            assert_eq!(offs.len(), 64 * 64);
            let mut sorted = offs.clone();
            sorted.sort_unstable();
            assert!(sorted.iter().enumerate().all(|(i, &o)| o == i as i64));
            // Spot-check element positions through the enumeration order
            // (tile row outermost ... element innermost).
            if let LayoutSpec::Tiled { tm, tn } = layout {
                for (r, c) in [(0u64, 8u64), (1, 0), (63, 63)] {
                    let idx = (c % tn)
                        + tn * ((r % tm) + tm * (c / tn + (64 / tn) * (r / tm)));
                    let want =
                        ref_elem_offset(layout.as_ref_layout(), 64, 64, r as usize, c as usize);
                    assert_eq!(offs[idx as usize], want as i64, "{layout} ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn tiled_element_examples_hand_checked() {
        // 16x16 in 8x8 tiles: element (0,8) starts tile (0,1) -> byte 64.
        let p = layout_element_pattern(LayoutSpec::Tiled { tm: 8, tn: 8 }, 16, 16, 1).unwrap();
        let offs: Vec<i64> = p.iter_offsets().collect();
        // (r=0, c=8): n=0, m=0, tile col 1, tile row 0 -> index 64 in the
        // enumeration; offset must be byte 64.
        assert_eq!(offs[64], 64);
        // 8x32 in 8x16 tiles: element (1,0) -> byte 16.
        let p = layout_element_pattern(LayoutSpec::Tiled { tm: 8, tn: 16 }, 8, 32, 1).unwrap();
        let offs: Vec<i64> = p.iter_offsets().collect();
        assert_eq!(offs[16], 16);
    }

    #[test]
    fn pattern_bytes_counts_words() {
        let p = AffinePattern::new(vec![2, 2], vec![8, 64]).unwrap();
        assert_eq!(pattern_bytes(&p, 8), 32);
        // Degenerate scalar pattern: empty product emits exactly one word.
        let scalar = AffinePattern {
            bounds: vec![],
            strides: vec![],
        };
        assert_eq!(pattern_bytes(&scalar, 8), 8);
    }

    #[test]
    fn pair_word_counts_match_matrix_size() {
        for src in layouts() {
            for dst in layouts() {
                let (p, q) = transform_pattern_pair(src, dst, 64, 64, 1, WORD).unwrap();
                assert_eq!(p.word_count(), 64 * 64 / 8, "{src}->{dst}");
                assert_eq!(q.word_count(), 64 * 64 / 8, "{src}->{dst}");
            }
        }
    }

    #[test]
    fn each_pattern_is_a_permutation_of_its_buffer() {
        for src in layouts() {
            for dst in layouts() {
                let (p, q) = transform_pattern_pair(src, dst, 64, 128, 1, WORD).unwrap();
                for pat in [&p, &q] {
                    let mut offs: Vec<i64> = pat.iter_offsets().collect();
                    offs.sort_unstable();
                    let expect: Vec<i64> = (0..pat.word_count() as i64).map(|k| k * 8).collect();
                    assert_eq!(offs, expect, "{src}->{dst}");
                }
            }
        }
    }

    #[test]
    fn pattern_pairs_reproduce_reference_transform() {
        for src in layouts() {
            for dst in layouts() {
                for (rows, cols) in [(32, 32), (64, 64), (64, 128), (128, 64)] {
                    let img: Vec<u8> =
                        (0..rows * cols).map(|v| (v * 131 + 17) as u8).collect();
                    let pair =
                        transform_pattern_pair(src, dst, rows as u64, cols as u64, 1, WORD)
                            .unwrap();
                    let got = apply_pair(&pair, &img);
                    let want = ref_transform(
                        src.as_ref_layout(),
                        dst.as_ref_layout(),
                        rows,
                        cols,
                        1,
                        &img,
                    );
                    assert_eq!(got, want, "{src}->{dst} {rows}x{cols}");
                }
            }
        }
    }

    #[test]
    fn two_byte_elements_transform_correctly() {
        let src = LayoutSpec::RowMajor;
        let dst = LayoutSpec::Tiled { tm: 8, tn: 8 };
        let (rows, cols, elem) = (32usize, 32usize, 2usize);
        let img: Vec<u8> = (0..rows * cols * elem).map(|v| (v * 37 + 5) as u8).collect();
        let pair = transform_pattern_pair(src, dst, rows as u64, cols as u64, elem as u64, WORD)
            .unwrap();
        let got = apply_pair(&pair, &img);
        let want = ref_transform(src.as_ref_layout(), dst.as_ref_layout(), rows, cols, elem, &img);
        assert_eq!(got, want);
    }

    #[test]
    fn odd_tile_width_rejected_for_word_streaming() {
        let err = transform_pattern_pair(
            LayoutSpec::RowMajor,
            LayoutSpec::Tiled { tm: 8, tn: 4 },
            64,
            64,
            1,
            WORD,
        )
        .unwrap_err();
        assert!(matches!(err, LayoutError::TileNotWordAligned { .. }));
    }

    #[test]
    fn mixed_tile_heights_rejected() {
        let err = transform_pattern_pair(
            LayoutSpec::Tiled { tm: 8, tn: 8 },
            LayoutSpec::Tiled { tm: 16, tn: 16 },
            64,
            64,
            1,
            WORD,
        )
        .unwrap_err();
        assert!(matches!(err, LayoutError::MixedTileHeights { .. }));
    }

    /// The source side of the transpose pair walks whole 64-byte tiles; the
    /// destination is contiguous. Flipping each tile in between must equal
    /// the reference transpose of the tiled image.
    #[test]
    fn transpose_pair_with_tile_flip_matches_reference() {
        for (rows, cols) in [(16usize, 16usize), (32, 16), (64, 128)] {
            let img: Vec<u8> = (0..rows * cols).map(|v| (v * 193 + 7) as u8).collect();
            let (src, dst) =
                transpose_pattern_pair(rows as u64, cols as u64, 1, WORD).unwrap();
            assert_eq!(src.word_count(), (rows * cols / 8) as u64);
            // Stream words through an 8x8-byte tile flip.
            let mut out = vec![0u8; rows * cols];
            let mut tile = [0u8; 64];
            let src_offs: Vec<i64> = src.iter_offsets().collect();
            let dst_offs: Vec<i64> = dst.iter_offsets().collect();
            for t in 0..src_offs.len() / 8 {
                for w in 0..8 {
                    let s = src_offs[t * 8 + w] as usize;
                    tile[w * 8..w * 8 + 8].copy_from_slice(&img[s..s + 8]);
                }
                let mut flipped = [0u8; 64];
                for r in 0..8 {
                    for c in 0..8 {
                        flipped[c * 8 + r] = tile[r * 8 + c];
                    }
                }
                for w in 0..8 {
                    let d = dst_offs[t * 8 + w] as usize;
                    out[d..d + 8].copy_from_slice(&flipped[w * 8..w * 8 + 8]);
                }
            }
            let t88 = RefLayout::Tiled { tm: 8, tn: 8 };
            let want = ref_transpose(t88, t88, rows, cols, 1, &img);
            assert_eq!(out, want, "{rows}x{cols}");
        }
    }

    proptest! {
        /// Any layout pair over word-compatible sizes reproduces the
        /// reference transform when applied as a matched word copy.
        #[test]
        fn prop_pairs_match_reference(
            src_i in 0usize..4,
            dst_i in 0usize..4,
            rows_t in 1u64..=8,
            cols_t in 1u64..=2,
        ) {
            let (src, dst) = (layouts()[src_i], layouts()[dst_i]);
            let rows = rows_t * 8;
            let cols = cols_t * 32; // multiple of every tile width used
            let img: Vec<u8> = (0..rows * cols).map(|v| (v * 89 + 3) as u8).collect();
            let pair = transform_pattern_pair(src, dst, rows, cols, 1, WORD).unwrap();
            let got = apply_pair(&pair, &img);
            let want = ref_transform(
                src.as_ref_layout(),
                dst.as_ref_layout(),
                rows as usize,
                cols as usize,
                1,
                &img,
            );
            prop_assert_eq!(got, want);
        }

        /// offset_at agrees with odometer iteration for arbitrary patterns.
        #[test]
        fn prop_offset_at_matches_iteration(
            bounds in proptest::collection::vec(1u64..5, 1..5),
            raw_strides in proptest::collection::vec(-4i64..=4, 5),
        ) {
            let strides: Vec<i64> = raw_strides[..bounds.len()]
                .iter()
                .map(|s| s * 8)
                .collect();
            let p = AffinePattern::new(bounds, strides).unwrap();
            let mut k = 0u64;
            let total = p.word_count();
            let mut idx = vec![0u64; p.ndims()];
            while k < total {
                let off: i64 = idx
                    .iter()
                    .zip(&p.strides)
                    .map(|(i, s)| *i as i64 * s)
                    .sum();
                prop_assert_eq!(p.offset_at(k), off);
                // odometer increment
                for (i, b) in idx.iter_mut().zip(&p.bounds) {
                    *i += 1;
                    if *i < *b {
                        break;
                    }
                    *i = 0;
                }
                k += 1;
            }
        }
    }
}
