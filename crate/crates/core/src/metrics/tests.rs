use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::math::Vec3;
use crate::render::Image;
use crate::spatial::brute_force_knn;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec3>, Vec<Vec3>) {
    let p = (0..n)
        .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 0.5)
        .collect();
    let nr = (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize()
        })
        .collect();
    (p, nr)
}

#[test]
fn identical_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (p, n) = cloud(&mut rng, 300);
    let c = chamfer(&p, &n, &p, &n).unwrap();
    assert_eq!((c.cd_p2s, c.cd_s2p), (0.0, 0.0));
    assert!((c.nc - 1.0).abs() < 1e-12);
    assert_eq!(fscore(&p, &p, DEFAULT_TAU_CM).unwrap(), 100.0);
}

#[test]
fn singleton_distance_in_cm() {
    let n = [Vec3::z()];
    let c = chamfer(&[Vec3::zeros()], &n, &[Vec3::new(0.03, 0.0, 0.04)], &n).unwrap();
    assert!((c.cd_p2s - 5.0).abs() < 1e-12);
    assert!((c.cd_s2p - 5.0).abs() < 1e-12);
}

#[test]
fn grid_chamfer_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let (p, pn) = cloud(&mut rng, 500);
        let (t, tn) = cloud(&mut rng, 500);
        let c = chamfer(&p, &pn, &t, &tn).unwrap();
        let direct = |q: &[Vec3], qn: &[Vec3], s: &[Vec3], sn: &[Vec3]| {
            let mut d = 0.0;
            let mut cos = 0.0;
            for (i, x) in q.iter().enumerate() {
                let (j, dist) = brute_force_knn(s, x, 1)[0];
                d += dist;
                cos += qn[i].dot(&sn[j]).abs();
            }
            (d / q.len() as f64 * 100.0, cos / q.len() as f64)
        };
        let (d1, c1) = direct(&p, &pn, &t, &tn);
        let (d2, c2) = direct(&t, &tn, &p, &pn);
        assert_eq!(c.cd_p2s, d1);
        assert_eq!(c.cd_s2p, d2);
        assert_eq!(c.nc, 0.5 * (c1 + c2));
        let swapped = chamfer(&t, &tn, &p, &pn).unwrap();
        assert_eq!((swapped.cd_p2s, swapped.cd_s2p), (c.cd_s2p, c.cd_p2s));
    }
}

#[test]
fn fscore_fixture() {
    // two predictions: one on the truth point, one 10 cm away
    let truth = [Vec3::zeros()];
    let pred = [Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)];
    let f = fscore(&pred, &truth, 1.0).unwrap();
    assert!((f - 200.0 / 3.0).abs() < 1e-9);
    let far = [Vec3::new(1.0, 0.0, 0.0)];
    assert_eq!(fscore(&far, &truth, 1.0).unwrap(), 0.0);
    assert!(fscore(&pred, &truth, 0.0).is_err());
    assert!(fscore(&[], &truth, 1.0).is_err());
    assert!(chamfer(&[], &[], &truth, &[Vec3::z()]).is_err());
}

#[test]
fn psnr_closed_forms() {
    let a = Image::filled(16, 16, &[0.5, 0.5, 0.5]);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    let b = Image::filled(16, 16, &[0.6, 0.6, 0.6]);
    // f32 pixels: 0.6 - 0.5 is not exactly 0.1
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    let c = Image::filled(8, 8, &[0.5, 0.5, 0.5]);
    assert!(psnr(&a, &c).is_err());
}

fn direct_ssim(a: &Image, b: &Image) -> f64 {
    let w: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let s: f64 = w.iter().sum();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for ch in 0..a.channels {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=a.height - 11 {
            for x0 in 0..=a.width - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let k = w[dx] * w[dy] / (s * s);
                        let x = a.at(x0 + dx, y0 + dy, ch) as f64;
                        let y = b.at(x0 + dx, y0 + dy, ch) as f64;
                        mx += k * x;
                        my += k * y;
                        sxx += k * x * x;
                        syy += k * y * y;
                        sxy += k * x * y;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cv = sxy - mx * my;
                acc += (2.0 * mx * my + c1) * (2.0 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / a.channels as f64
}

#[test]
fn ssim_checkerboard_against_direct_formula() {
    let flat = Image::filled(24, 20, &[0.5]);
    let mut board = flat.clone();
    for y in 0..20 {
        for x in 0..24 {
            board.set(x, y, 0, if (x + y) % 2 == 0 { 0.3 } else { 0.7 });
        }
    }
    let s = ssim(&flat, &board).unwrap();
    assert!(s < 1.0);
    assert!((s - direct_ssim(&flat, &board)).abs() < 1e-9);
    assert_eq!(ssim(&board, &board).unwrap(), 1.0);
}

#[test]
fn ssim_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut a = Image::new(17, 13, 3);
    let mut b = Image::new(17, 13, 3);
    a.pixels.iter_mut().for_each(|p| *p = rng.gen());
    b.pixels.iter_mut().for_each(|p| *p = rng.gen());
    let s = ssim(&a, &b).unwrap();
    assert!((s - direct_ssim(&a, &b)).abs() < 1e-9);
    assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-9);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    assert!(ssim(&Image::new(10, 20, 1), &Image::new(10, 20, 1)).is_err());
}

#[test]
fn bench_reports_sane_timings() {
    let t = bench(1, 5, || std::thread::sleep(std::time::Duration::from_millis(1))).unwrap();
    assert_eq!(t.iterations, 5);
    assert!(t.mean_ms >= 1.0 && t.mean_ms <= 10.0, "{t:?}");
    assert!(t.p50_ms <= t.p95_ms);
    assert!(bench(0, 0, || ()).is_err());
    let fp = fingerprint();
    assert!(fp.threads >= 1 && !fp.cpu_model.is_empty());
}

#[test]
fn reports_serialize() {
    let dir = tempfile::tempdir().unwrap();
    let r = ImageReport { psnr: 30.0, ssim: 0.9 };
    write_json(&dir.path().join("r.json"), &r).unwrap();
    write_csv(&dir.path().join("r.csv"), &[r]).unwrap();
    let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(text, "psnr,ssim\n30.0,0.9\n");
    let mut t = TimingReport::new();
    t.run("noop", 0, 3, || 1 + 1).unwrap();
    assert_eq!(t.stages["noop"].iterations, 3);
}
