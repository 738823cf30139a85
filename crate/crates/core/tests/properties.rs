use crowdmark::chanvese::{chan_vese_segment, init_region_in, roi_window, RegionMask, RoiWindow};
use crowdmark::densitymap::{accumulate_exclusive, DensityMap};
use crowdmark::eval::{compare_methods, map_mae, map_mse, spearman};
use crowdmark::ingest::{make_synthetic_scene, DiskSpec, SyntheticSpec};
use crowdmark::kernels::make_kernel;
use crowdmark::neighbors::{brute_force_knn, kdtree_build, kdtree_knn};
use crowdmark::{generate, ChanVeseParams, GenerationConfig, HeadAnnotationSet, IntensityGrid, Method, Point, Scene};
use proptest::prelude::*;

fn point_set(max: usize, extent: f64) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((0.0..extent, 0.0..extent), 2..max).prop_map(|v| v.into_iter().map(Point::from).collect())
}

fn map_pair() -> impl Strategy<Value = (DensityMap, DensityMap)> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        let vals = || prop::collection::vec(0.0..5.0f64, w * h);
        (vals(), vals()).prop_map(move |(a, b)| {
            let mk = |values| DensityMap {
                width: w,
                height: h,
                values,
                method: Method::Static,
                head_count: 0,
            };
            (mk(a), mk(b))
        })
    })
}

proptest! {
    #[test]
    fn annotations_round_trip(pts in prop::collection::vec((0.0..1e4f64, 0.0..1e4f64), 0..40)) {
        let set = HeadAnnotationSet::new(pts.into_iter().map(Point::from)).unwrap();
        prop_assert_eq!(HeadAnnotationSet::parse_csv(&set.to_csv()).unwrap().points().to_vec(), set.points().to_vec());
        prop_assert_eq!(HeadAnnotationSet::parse_json(&set.to_json()).unwrap().points().to_vec(), set.points().to_vec());
    }

    #[test]
    fn kernel_has_unit_mass(sigma in 1.0..=50.0f64, x in 0.0..199.0f64, y in 0.0..149.0f64, corner in 0u8..5) {
        let c = match corner {
            0 => Point::new(0.0, 0.0),
            1 => Point::new(199.0, 149.0),
            2 => Point::new(x, 0.0),
            _ => Point::new(x, y),
        };
        let k = make_kernel(c, sigma, 3.0, 200, 150).unwrap();
        prop_assert!((k.mass() - 1.0).abs() <= 1e-9, "mass {}", k.mass());
    }

    #[test]
    fn kernel_is_radial(sigma in 1.0..12.0f64, cx in 40usize..60, cy in 40usize..60) {
        let k = make_kernel(Point::new(cx as f64, cy as f64), sigma, 3.0, 100, 100).unwrap();
        let weight = |dx: i64, dy: i64| k.get((cx as i64 + dx) as usize, (cy as i64 + dy) as usize);
        let r = (3.0 * sigma).ceil() as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                let w = weight(dx, dy);
                prop_assert_eq!(w, weight(-dx, dy));
                prop_assert_eq!(w, weight(dx, -dy));
                prop_assert_eq!(w, weight(dy, dx));
                if dx.abs() < r {
                    // stepping outward never increases the weight
                    let step = if dx >= 0 { dx + 1 } else { dx - 1 };
                    prop_assert!(weight(step, dy) <= w);
                }
            }
        }
    }

    #[test]
    fn kdtree_matches_brute_force(points in point_set(120, 64.0), k in 1usize..6, snap in any::<bool>()) {
        let points: Vec<Point> = if snap {
            points.into_iter().map(|p| Point::new(p.x.floor(), p.y.floor())).collect()
        } else {
            points
        };
        let k = k.min(points.len() - 1);
        let index = kdtree_build(&points).unwrap();
        for q in 0..points.len() {
            prop_assert_eq!(kdtree_knn(&index, q, k).unwrap(), brute_force_knn(&points, q, k).unwrap());
        }
    }

    #[test]
    fn mse_and_mae_are_consistent((a, b) in map_pair()) {
        let ab = map_mse(&a, &b).unwrap();
        prop_assert_eq!(ab, map_mse(&b, &a).unwrap());
        prop_assert_eq!(map_mse(&a, &a).unwrap(), 0.0);
        let mae = map_mae(&a, &b).unwrap();
        prop_assert!(mae * mae <= ab * (1.0 + 1e-12) + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn energy_never_increases(
        values in prop::collection::vec(0.0..=1.0f64, 24 * 24),
        mu in 0.0..0.5f64,
        hx in 6.0..18.0f64,
        hy in 6.0..18.0f64,
    ) {
        let grid = IntensityGrid::new(24, 24, values).unwrap();
        let win = RoiWindow::covering(&grid);
        let head = Point::new(hx, hy);
        let init = init_region_in(head, win, &grid).unwrap();
        let params = ChanVeseParams { mu, ..ChanVeseParams::default() };
        let seg = chan_vese_segment(&grid, &win, &init, &params).unwrap();
        for w in seg.energy_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn two_value_window_matches_threshold(
        low in 0.0..=1.0f64,
        gap in 0.2..0.8f64,
        head_bright in any::<bool>(),
        rect in (5usize..12, 5usize..12),
        speckle in prop::collection::vec(prop::bool::weighted(0.1), 32 * 32),
    ) {
        let low = low * (1.0 - gap);
        let (a, b) = if head_bright { (low + gap, low) } else { (low, low + gap) };
        let (rw, rh) = rect;
        let (x0, y0) = (16 - rw / 2, 16 - rh / 2);
        let in_rect = |x: usize, y: usize| (x0..x0 + rw).contains(&x) && (y0..y0 + rh).contains(&y);
        let values: Vec<f64> = (0..32 * 32)
            .map(|i| if in_rect(i % 32, i / 32) || speckle[i] { a } else { b })
            .collect();
        let grid = IntensityGrid::new(32, 32, values.clone()).unwrap();
        let head = Point::new((x0 + rw / 2) as f64, (y0 + rh / 2) as f64);
        let win = roi_window(head, 20.0, &grid).unwrap();
        let init = init_region_in(head, win, &grid).unwrap();
        let seg = chan_vese_segment(&grid, &win, &init, &ChanVeseParams::default()).unwrap();
        let oracle = RegionMask::from_fn(win, |x, y| {
            let v = values[y * 32 + x];
            (v - a).abs() < (v - b).abs()
        }).unwrap();
        prop_assert_eq!(seg.mask, oracle);
    }

    #[test]
    fn generation_ignores_annotation_order(
        pts in prop::collection::vec((2.0..62.0f64, 2.0..46.0f64), 1..10),
        rotate in 0usize..10,
        method in prop::sample::select(Method::ALL.to_vec()),
    ) {
        let grid = IntensityGrid::filled(64, 48, 0.2).unwrap();
        let scene_of = |p: Vec<(f64, f64)>| {
            Scene::new(grid.clone(), HeadAnnotationSet::new(p.into_iter().map(Point::from)).unwrap(), "perm").unwrap()
        };
        let mut rotated = pts.clone();
        rotated.rotate_left(rotate % pts.len());
        rotated.reverse();
        let cfg = GenerationConfig::with_method(method);
        let a = generate(&scene_of(pts), &cfg).unwrap().map;
        let b = generate(&scene_of(rotated), &cfg).unwrap().map;
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert!((u - v).abs() <= 1e-12, "{} vs {}", u, v);
        }
    }

    #[test]
    fn exclusive_cells_hold_unit_mass(
        raw in prop::collection::btree_set((0usize..40, 0usize..30), 2..12),
        sigmas in prop::collection::vec(1.0..8.0f64, 12),
    ) {
        let points: Vec<Point> = raw.iter().map(|&(x, y)| Point::new(x as f64, y as f64)).collect();
        let kernels: Vec<_> = points
            .iter()
            .zip(&sigmas)
            .map(|(&p, &s)| make_kernel(p, s, 3.0, 40, 30).unwrap())
            .collect();
        let map = accumulate_exclusive(&kernels, &points, 40, 30).unwrap();
        let mut mass = vec![0.0; points.len()];
        for y in 0..30 {
            for x in 0..40 {
                let px = Point::new(x as f64, y as f64);
                let owner = (0..points.len())
                    .min_by(|&i, &j| px.dist2(points[i]).total_cmp(&px.dist2(points[j])).then(i.cmp(&j)))
                    .unwrap();
                mass[owner] += map.get(x, y);
            }
        }
        for m in mass {
            prop_assert!((m - 1.0).abs() <= 1e-9, "cell mass {}", m);
        }
    }

    #[test]
    fn content_aware_sigma_tracks_head_size(
        mut radii in Just((3..=12).map(f64::from).collect::<Vec<_>>()).prop_shuffle(),
        noise in 0.0..0.08f64,
        seed in any::<u64>(),
    ) {
        radii.truncate(6);
        let disks = radii
            .iter()
            .enumerate()
            .map(|(i, &radius)| DiskSpec {
                center: [24.0 + 44.0 * (i % 3) as f64, 24.0 + 44.0 * (i / 3) as f64],
                radius,
                intensity: 0.9,
            })
            .collect();
        let scene = make_synthetic_scene(&SyntheticSpec {
            width: 136,
            height: 92,
            background: 0.1,
            noise,
            seed,
            disks,
        })
        .unwrap();
        let g = generate(&scene, &GenerationConfig::with_method(Method::ContentAware)).unwrap();
        let sigmas: Vec<f64> = g.sigmas.iter().map(|s| s.sigma).collect();
        let rho = spearman(&sigmas, scene.true_radii.as_ref().unwrap()).unwrap();
        prop_assert!(rho >= 0.8, "rank correlation {} for {:?}", rho, sigmas);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn compare_is_deterministic(seed in any::<u64>(), n in 0usize..6) {
        let disks = (0..n)
            .map(|i| DiskSpec { center: [15.0 + 20.0 * i as f64, 20.0], radius: 4.0 + i as f64, intensity: 0.9 })
            .collect();
        let scene = make_synthetic_scene(&SyntheticSpec {
            width: 128,
            height: 40,
            background: 0.1,
            noise: 0.05,
            seed,
            disks,
        })
        .unwrap();
        let cfg = GenerationConfig::default();
        let (r1, g1) = compare_methods(&scene, &cfg).unwrap();
        let (r2, g2) = compare_methods(&scene, &cfg).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            prop_assert_eq!(&a.map, &b.map);
            prop_assert_eq!(&a.sigmas, &b.sigmas);
        }
        for (a, b) in r1.methods.iter().zip(&r2.methods) {
            prop_assert_eq!((a.method, a.total, &a.sigmas), (b.method, b.total, &b.sigmas));
        }
        prop_assert_eq!(serde_json::to_string(&r1.pairs).unwrap(), serde_json::to_string(&r2.pairs).unwrap());
    }
}
