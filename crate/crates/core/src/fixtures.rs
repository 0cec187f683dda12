//! Procedurally generated 64×64 test cases, also written to `data/cases/`.

use crate::grid::{LatentGrid, MaskGrid};

pub const CASE_SIZE: usize = 64;

#[derive(Debug, Clone)]
pub struct TestCase {
    pub name: &'static str,
    pub image: LatentGrid,
    pub mask: MaskGrid,
    /// Pixels of the salient object in the image.
    pub object: MaskGrid,
    pub prompt: &'static str,
}

fn disc_case() -> TestCase {
    let n = CASE_SIZE;
    let in_disc = |i: usize, j: usize| {
        let (di, dj) = (i as f64 - 31.5, j as f64 - 31.5);
        di * di + dj * dj <= 12.0 * 12.0
    };
    let image = LatentGrid::from_fn(3, n, n, |c, i, j| {
        if in_disc(i, j) {
            [0.85, 0.2, 0.15][c]
        } else {
            let t = i as f64 / (n - 1) as f64;
            [0.3 + 0.4 * t, 0.5 + 0.2 * t, 0.8 - 0.3 * t][c]
        }
    });
    TestCase {
        name: "disc",
        image,
        mask: MaskGrid::from_fn(n, n, |i, j| (16..48).contains(&i) && (16..48).contains(&j)),
        object: MaskGrid::from_fn(n, n, in_disc),
        prompt: "golden retriever wearing astronaut gear",
    }
}

fn stripes_case() -> TestCase {
    let n = CASE_SIZE;
    let in_box = |i: usize, j: usize| (20..44).contains(&i) && (12..40).contains(&j);
    let image = LatentGrid::from_fn(3, n, n, |c, i, j| {
        if in_box(i, j) {
            [0.1, 0.6, 0.2][c]
        } else {
            let band = ((i + j) / 6) % 2 == 0;
            let base = if band { 0.75 } else { 0.35 };
            base + [0.0, 0.05, 0.1][c]
        }
    });
    TestCase {
        name: "stripes",
        image,
        mask: MaskGrid::from_fn(n, n, |i, j| (16..48).contains(&i) && (4..28).contains(&j)),
        object: MaskGrid::from_fn(n, n, in_box),
        prompt: "a fluffy panda juggling teacups",
    }
}

fn checker_case() -> TestCase {
    let n = CASE_SIZE;
    let in_ellipse = |i: usize, j: usize| {
        let (di, dj) = ((i as f64 - 40.0) / 10.0, (j as f64 - 24.0) / 16.0);
        di * di + dj * dj <= 1.0
    };
    let image = LatentGrid::from_fn(3, n, n, |c, i, j| {
        let dark = ((i / 8) + (j / 8)) % 2 == 0;
        let v = if dark { 0.2 } else { 0.9 };
        v * [1.0, 0.95, 0.85][c]
    });
    TestCase {
        name: "checker",
        image,
        mask: MaskGrid::from_fn(n, n, in_ellipse),
        object: MaskGrid::from_fn(n, n, |i, j| (8..20).contains(&i) && (40..56).contains(&j)),
        prompt: "three penguins playing music",
    }
}

/// The three bundled cases, in a fixed order.
pub fn test_cases() -> Vec<TestCase> {
    vec![disc_case(), stripes_case(), checker_case()]
}
