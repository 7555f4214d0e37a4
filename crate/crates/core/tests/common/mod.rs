#![allow(dead_code)]

use decomp_core::field::{DualField, Grid, GridField};
use proptest::prelude::*;

/// Unmasked 1D or 2D grid with a handful of cells.
pub fn small_grid() -> impl Strategy<Value = Grid> {
    prop_oneof![
        (2usize..=16).prop_map(|n| Grid::new_1d(n).unwrap()),
        (2usize..=6, 2usize..=6).prop_map(|(a, b)| Grid::new_2d(a, b).unwrap()),
    ]
}

/// 2D grid with a random mask that keeps at least two cells active.
pub fn masked_grid() -> impl Strategy<Value = Grid> {
    (2usize..=6, 2usize..=6)
        .prop_flat_map(|(a, b)| (Just((a, b)), proptest::collection::vec(any::<bool>(), a * b)))
        .prop_map(|((a, b), mut mask)| {
            mask[0] = true;
            mask[a * b - 1] = true;
            Grid::new_2d(a, b).unwrap().with_mask(mask).unwrap()
        })
}

pub fn any_grid() -> impl Strategy<Value = Grid> {
    prop_oneof![3 => small_grid(), 1 => masked_grid()]
}

pub fn field_on(grid: Grid, amp: f64) -> impl Strategy<Value = GridField> {
    let n = grid.len();
    proptest::collection::vec(-amp..amp, n).prop_map(move |v| GridField::new(grid.clone(), v).unwrap())
}

pub fn field(amp: f64) -> impl Strategy<Value = GridField> {
    any_grid().prop_flat_map(move |g| field_on(g, amp))
}

pub fn unmasked_field(amp: f64) -> impl Strategy<Value = GridField> {
    small_grid().prop_flat_map(move |g| field_on(g, amp))
}

/// Dual field with zero components on inactive edges.
pub fn dual_on(grid: Grid, amp: f64) -> impl Strategy<Value = DualField> {
    let n = grid.len();
    let d = grid.dims();
    proptest::collection::vec(proptest::collection::vec(-amp..amp, n), d).prop_map(move |mut axes| {
        for (a, comp) in axes.iter_mut().enumerate() {
            for (c, x) in comp.iter_mut().enumerate() {
                if !grid.edge_active(a, c) {
                    *x = 0.0;
                }
            }
        }
        DualField::new(grid.clone(), axes).unwrap()
    })
}

pub fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * (1.0 + a.abs().max(b.abs()))
}
