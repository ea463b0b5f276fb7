//! Reference models for layout transforms.
//!
//! Everything here is written as plain nested loops over matrix elements,
//! deliberately independent of the affine-pattern machinery in [`crate::layout`]
//! and of the simulator itself. Simulated memory images are compared against
//! these functions byte for byte.

/// Storage layout of a `rows x cols` element matrix, as understood by the
/// reference model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefLayout {
    /// Plain row-major order.
    RowMajor,
    /// Row-major grid of `tm x tn` element tiles, each tile row-major inside.
    Tiled { tm: usize, tn: usize },
}

/// Element offset (in elements, not bytes) of matrix element `(r, c)` inside
/// the storage buffer of a `rows x cols` matrix held in `layout`.
pub fn ref_elem_offset(layout: RefLayout, rows: usize, cols: usize, r: usize, c: usize) -> usize {
    assert!(r < rows && c < cols, "element ({r},{c}) outside {rows}x{cols}");
    match layout {
        RefLayout::RowMajor => r * cols + c,
        RefLayout::Tiled { tm, tn } => {
            assert!(rows.is_multiple_of(tm) && cols.is_multiple_of(tn));
            let (tr, ir) = (r / tm, r % tm);
            let (tc, ic) = (c / tn, c % tn);
            (tr * (cols / tn) + tc) * (tm * tn) + ir * tn + ic
        }
    }
}

/// Re-lays out `src_img` (a `rows x cols` matrix of `elem_bytes`-wide elements
/// in layout `src`) into layout `dst`, element by element.
pub fn ref_transform(
    src: RefLayout,
    dst: RefLayout,
    rows: usize,
    cols: usize,
    elem_bytes: usize,
    src_img: &[u8],
) -> Vec<u8> {
    let total = rows * cols * elem_bytes;
    assert_eq!(src_img.len(), total, "source image size mismatch");
    let mut out = vec![0u8; total];
    for r in 0..rows {
        for c in 0..cols {
            let s = ref_elem_offset(src, rows, cols, r, c) * elem_bytes;
            let d = ref_elem_offset(dst, rows, cols, r, c) * elem_bytes;
            out[d..d + elem_bytes].copy_from_slice(&src_img[s..s + elem_bytes]);
        }
    }
    out
}

/// Transposes a `rows x cols` matrix held in layout `src` into a
/// `cols x rows` matrix held in layout `dst`.
pub fn ref_transpose(
    src: RefLayout,
    dst: RefLayout,
    rows: usize,
    cols: usize,
    elem_bytes: usize,
    src_img: &[u8],
) -> Vec<u8> {
    let total = rows * cols * elem_bytes;
    assert_eq!(src_img.len(), total, "source image size mismatch");
    let mut out = vec![0u8; total];
    for r in 0..rows {
        for c in 0..cols {
            let s = ref_elem_offset(src, rows, cols, r, c) * elem_bytes;
            // Destination matrix is cols x rows; element (c, r) there.
            let d = ref_elem_offset(dst, cols, rows, c, r) * elem_bytes;
            out[d..d + elem_bytes].copy_from_slice(&src_img[s..s + elem_bytes]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_offsets_are_linear() {
        assert_eq!(ref_elem_offset(RefLayout::RowMajor, 4, 4, 0, 0), 0);
        assert_eq!(ref_elem_offset(RefLayout::RowMajor, 4, 4, 2, 3), 11);
    }

    #[test]
    fn tiled_offsets_hand_checked() {
        // 16x16 matrix in 8x8 tiles: element (0,8) is the first element of
        // tile (0,1), which starts one full tile (64 elements) in.
        let t88 = RefLayout::Tiled { tm: 8, tn: 8 };
        assert_eq!(ref_elem_offset(t88, 16, 16, 0, 8), 64);
        // 8x32 matrix in 8x16 tiles: element (1,0) sits in tile (0,0) at
        // in-tile row 1, column 0 -> 1*16 = 16 elements in.
        let t816 = RefLayout::Tiled { tm: 8, tn: 16 };
        assert_eq!(ref_elem_offset(t816, 8, 32, 1, 0), 16);
    }

    #[test]
    fn tile_transform_4x4_in_2x2_tiles() {
        // Values equal their row-major index, so the tiled image spells out
        // the tiles in grid order.
        let src: Vec<u8> = (0..16).collect();
        let out = ref_transform(
            RefLayout::RowMajor,
            RefLayout::Tiled { tm: 2, tn: 2 },
            4,
            4,
            1,
            &src,
        );
        assert_eq!(
            out,
            vec![0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]
        );
    }

    #[test]
    fn transform_round_trips() {
        let src: Vec<u8> = (0..=255).collect();
        let tiled = ref_transform(
            RefLayout::RowMajor,
            RefLayout::Tiled { tm: 8, tn: 8 },
            16,
            16,
            1,
            &src,
        );
        let back = ref_transform(
            RefLayout::Tiled { tm: 8, tn: 8 },
            RefLayout::RowMajor,
            16,
            16,
            1,
            &tiled,
        );
        assert_eq!(src, back);
    }

    #[test]
    fn transpose_2x4_row_major() {
        let src: Vec<u8> = (0..8).collect();
        let out = ref_transpose(RefLayout::RowMajor, RefLayout::RowMajor, 2, 4, 1, &src);
        assert_eq!(out, vec![0, 4, 1, 5, 2, 6, 3, 7]);
    }

    #[test]
    fn transpose_twice_is_identity() {
        let src: Vec<u8> = (0..64).map(|v| (v * 7 + 3) as u8).collect();
        let t88 = RefLayout::Tiled { tm: 8, tn: 8 };
        let once = ref_transpose(t88, t88, 8, 8, 1, &src);
        let twice = ref_transpose(t88, t88, 8, 8, 1, &once);
        assert_eq!(src, twice);
    }

    #[test]
    fn multi_byte_elements_move_as_units() {
        // 2x2 matrix of 2-byte elements, transpose swaps the off-diagonal
        // elements without splitting them.
        let src = vec![0xAA, 0xAB, 0xBA, 0xBB, 0xCA, 0xCB, 0xDA, 0xDB];
        let out = ref_transpose(RefLayout::RowMajor, RefLayout::RowMajor, 2, 2, 2, &src);
        assert_eq!(out, vec![0xAA, 0xAB, 0xCA, 0xCB, 0xBA, 0xBB, 0xDA, 0xDB]);
    }
}
