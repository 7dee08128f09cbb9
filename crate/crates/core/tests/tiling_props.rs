//! Grid arithmetic, coverage and label boundaries, disjoint sets and the
//! patch store.

use cribmil_core::patch_store::{concat_stores, write_patch_store, PatchStore};
use cribmil_core::raster::Mask;
use cribmil_core::tiling::{
    extract_grid, filter_by_coverage, grid_count, label_patch, split_disjoint_sets, PatchRecord, PipelineConfig,
};
use proptest::prelude::*;

fn cfg() -> PipelineConfig {
    PipelineConfig::default()
}

fn overlap_area(a: &PatchRecord, b: &PatchRecord, size: u32) -> u64 {
    let ox = (a.x + size).min(b.x + size).saturating_sub(a.x.max(b.x));
    let oy = (a.y + size).min(b.y + size).saturating_sub(a.y.max(b.y));
    ox as u64 * oy as u64
}

/// Mask over one 256x256 patch at the origin with exactly `n` pixels set.
fn mask_with_count(n: usize) -> Mask {
    let mut k = 0;
    Mask::from_fn(256, 256, |_, _| {
        k += 1;
        k <= n
    })
}

#[test]
fn coverage_boundary() {
    let c = cfg();
    let grid = extract_grid(256, 256, &c).unwrap();
    // 5898 / 65536 = 0.09 (to four places); 6554 / 65536 just reaches 0.10.
    assert!(filter_by_coverage(&grid, &mask_with_count(5898), &c).unwrap().is_empty());
    assert!(filter_by_coverage(&grid, &mask_with_count(6553), &c).unwrap().is_empty());
    assert_eq!(filter_by_coverage(&grid, &mask_with_count(6554), &c).unwrap().len(), 1);
    assert!(filter_by_coverage(&grid, &Mask::new(256, 256), &c).unwrap().is_empty());

    // Exact 0.10 on a patch size where it is representable.
    let c10 = PipelineConfig {
        patch_size: 100,
        stride: 50,
        ..cfg()
    };
    let g = extract_grid(100, 100, &c10).unwrap();
    let m = |n: usize| {
        let mut k = 0;
        Mask::from_fn(100, 100, |_, _| {
            k += 1;
            k <= n
        })
    };
    assert!(filter_by_coverage(&g, &m(900), &c10).unwrap().is_empty());
    assert_eq!(filter_by_coverage(&g, &m(1000), &c10).unwrap().len(), 1);
}

#[test]
fn label_boundary() {
    let c = PipelineConfig {
        patch_size: 1000,
        stride: 500,
        ..cfg()
    };
    let p = extract_grid(1000, 1000, &c).unwrap().remove(0);
    let m = |n: usize| {
        let mut k = 0;
        Mask::from_fn(1000, 1000, |_, _| {
            k += 1;
            k <= n
        })
    };
    // 20000 / 1e6 = 0.02 exactly, 21000 / 1e6 = 0.021.
    assert!(!label_patch(&p, &m(20_000), &c).unwrap());
    assert!(label_patch(&p, &m(21_000), &c).unwrap());
    assert!(!label_patch(&p, &Mask::new(1000, 1000), &c).unwrap());
}

#[test]
fn grid_examples() {
    let c = cfg();
    assert_eq!(extract_grid(512, 384, &c).unwrap().len(), 6);
    assert_eq!(extract_grid(256, 256, &c).unwrap().len(), 1);
    assert_eq!(extract_grid(1536, 1536, &c).unwrap().len(), 121);
    assert!(extract_grid(255, 512, &c).is_err());
    let sets = split_disjoint_sets(&extract_grid(512, 384, &c).unwrap());
    let g = extract_grid(512, 384, &c).unwrap();
    let ij = |v: &[usize]| v.iter().map(|&k| (g[k].i, g[k].j)).collect::<Vec<_>>();
    assert_eq!(ij(&sets.a), vec![(0, 0), (0, 2)]);
    assert_eq!(ij(&sets.b), vec![(1, 1)]);
}

#[test]
fn store_round_trip_and_concat() {
    let dir = tempfile::tempdir().unwrap();
    let entries: Vec<(String, Vec<u8>)> = (0..121)
        .map(|k| (format!("p{k:03}"), (0..(k * 7 + 1)).map(|b| (b * 31 + k) as u8).collect()))
        .collect();
    let a = dir.path().join("a.pstr");
    write_patch_store(&a, &entries[..60]).unwrap();
    let b = dir.path().join("b.pstr");
    write_patch_store(&b, &entries[60..]).unwrap();
    let joined = dir.path().join("all.pstr");
    concat_stores(&[a.clone(), b], &joined).unwrap();
    let store = PatchStore::open(&joined).unwrap();
    assert_eq!(store.len(), 121);
    let mut last = 0;
    for (k, v) in &entries {
        assert_eq!(&store.read(k).unwrap(), v);
        let e = store.entry(k).unwrap();
        assert!(e.offset >= last);
        last = e.offset;
    }
    assert!(store.read("missing").is_err());
    let empty = dir.path().join("empty.pstr");
    write_patch_store(&empty, &[]).unwrap();
    assert!(PatchStore::open(&empty).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn grid_count_closed_form(w in 256u32..3000, h in 256u32..3000) {
        let c = cfg();
        let grid = extract_grid(w, h, &c).unwrap();
        let expect = ((w - 256) / 128 + 1) as usize * ((h - 256) / 128 + 1) as usize;
        prop_assert_eq!(grid.len(), expect);
        prop_assert_eq!(grid_count(w, h, &c), expect);
        for p in &grid {
            prop_assert_eq!((p.x, p.y), (p.j * 128, p.i * 128));
            prop_assert!(p.x + 256 <= w && p.y + 256 <= h);
        }
        let sets = split_disjoint_sets(&grid);
        for set in [&sets.a, &sets.b] {
            for (n, &u) in set.iter().enumerate() {
                for &v in &set[n + 1..] {
                    prop_assert_eq!(overlap_area(&grid[u], &grid[v], 256), 0);
                }
            }
        }
    }

    #[test]
    fn raising_min_coverage_never_adds(seed in any::<u64>(), lo in 0.01f64..0.5, extra in 0.0f64..0.4) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cx = rng.random_range(0.0..768.0);
        let cy = rng.random_range(0.0..768.0);
        let r = rng.random_range(50.0..400.0);
        let mask = Mask::from_fn(768, 768, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < r * r);
        let grid = extract_grid(768, 768, &cfg()).unwrap();
        let low = PipelineConfig { min_tissue_fraction: lo, ..cfg() };
        let high = PipelineConfig { min_tissue_fraction: (lo + extra).min(0.99), ..cfg() };
        let a = filter_by_coverage(&grid, &mask, &low).unwrap();
        let b = filter_by_coverage(&grid, &mask, &high).unwrap();
        prop_assert!(b.len() <= a.len());
        prop_assert!(b.iter().all(|p| a.contains(p)));
    }
}
