use pvae::data::idx::{encode_idx, load_digits, parse_idx, IdxData};
use pvae::data::*;
use pvae::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(n: usize) -> GeneratorConfig {
    GeneratorConfig {
        n_train: n,
        n_test: 10,
        ..GeneratorConfig::default()
    }
}

#[test]
fn epoch_seeds_change_the_pairing() {
    let d = Dataset::generate(&config(200), Split::Train, 0).unwrap();
    let a = pair_epoch(&d, 1).unwrap();
    let b = pair_epoch(&d, 2).unwrap();
    assert_eq!(a, pair_epoch(&d, 1).unwrap());
    // 20 images per identity: a position repeats with probability 1/20.
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    assert!(same < 40, "{same} of 200 pairs repeated");
}

#[test]
fn uniform_negatives_collide_one_time_in_ten() {
    let d = Dataset::generate(&config(1000), Split::Train, 0).unwrap();
    let anchors: Vec<(usize, usize)> = (0..10_000).map(|i| (i % 1000, 0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let negs = negative_for(&anchors, &d, NegativeMode::Uniform, &mut rng).unwrap();
    let hits = anchors
        .iter()
        .zip(&negs)
        .filter(|((a, _), (n, _))| d.audio[*a].identity == d.audio[*n].identity)
        .count() as f64;
    let (n, p) = (10_000.0f64, 0.1f64);
    let band = 3.0 * (n * p * (1.0 - p)).sqrt();
    assert!((hits - n * p).abs() <= band, "{hits} collisions");
    for (a, i) in &negs {
        assert_eq!(d.audio[*a].identity, d.images[*i].identity);
    }
}

/// Pearson chi-square of identity against quartile bins of a style factor.
fn chi_square(identity: &[u8], factor: &[f64]) -> f64 {
    let mut sorted = factor.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..4).map(|q| sorted[q * sorted.len() / 4]).collect();
    let bin = |v: f64| cuts.iter().filter(|&&c| v >= c).count();
    let mut table = [[0.0f64; 4]; 10];
    for (&id, &v) in identity.iter().zip(factor) {
        table[id as usize][bin(v)] += 1.0;
    }
    let n = identity.len() as f64;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..4).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let mut chi = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &obs) in row.iter().enumerate() {
            let exp = rows[r] * cols[c] / n;
            if exp > 0.0 {
                chi += (obs - exp) * (obs - exp) / exp;
            }
        }
    }
    chi
}

#[test]
fn style_factors_independent_of_identity() {
    // 27 degrees of freedom; upper 0.1% point.
    const CRITICAL: f64 = 55.48;
    let d = Dataset::generate(&config(2000), Split::Train, 0).unwrap();
    let ids: Vec<u8> = d.images.iter().map(|s| s.identity).collect();
    let styles: Vec<ImageStyle> = d.images.iter().map(|s| s.style.unwrap()).collect();
    for (name, f) in [
        ("thickness", styles.iter().map(|s| s.thickness).collect::<Vec<_>>()),
        ("tilt", styles.iter().map(|s| s.tilt).collect()),
        ("scale", styles.iter().map(|s| s.scale).collect()),
    ] {
        let chi = chi_square(&ids, &f);
        assert!(chi < CRITICAL, "{name}: {chi}");
    }
    let ids: Vec<u8> = d.audio.iter().map(|s| s.identity).collect();
    for (name, f) in [
        ("duration", d.audio.iter().map(|s| s.style.duration as f64).collect::<Vec<_>>()),
        ("amplitude", d.audio.iter().map(|s| s.style.amplitude).collect()),
    ] {
        let chi = chi_square(&ids, &f);
        assert!(chi < CRITICAL, "{name}: {chi}");
    }
}

#[test]
fn saved_dataset_reloads_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = Dataset::generate(&config(30), Split::Test, 5).unwrap();
    let path = dir.path().join("d.pvds");
    d.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, d);
    let bytes = std::fs::read(&path).unwrap();
    let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
    let header: serde_json::Value = serde_json::from_slice(&bytes[..newline]).unwrap();
    assert_eq!(header["format"], "pvae-dataset");
    assert_eq!((bytes.len() - newline - 1) % 4, 0);
}

fn be(v: u32) -> [u8; 4] {
    [(v >> 24) as u8, (v >> 16) as u8, (v >> 8) as u8, v as u8]
}

#[test]
fn idx_fixture_round_trips_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let mut images = Vec::new();
    for v in [0x803, 2, 28, 28] {
        images.extend_from_slice(&be(v));
    }
    images.extend((0..2 * 784u32).map(|i| (i * 31 % 256) as u8));
    let mut labels = Vec::new();
    for v in [0x801, 2] {
        labels.extend_from_slice(&be(v));
    }
    labels.extend([7, 3]);

    assert_eq!(encode_idx(&parse_idx(&images).unwrap()), images);
    assert_eq!(encode_idx(&parse_idx(&labels).unwrap()), labels);

    let (ip, lp) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    std::fs::write(&ip, &images).unwrap();
    std::fs::write(&lp, &labels).unwrap();
    let digits = load_digits(&ip, &lp).unwrap();
    assert_eq!(digits.len(), 2);
    assert_eq!(digits[1].identity, 3);
    assert_eq!(digits[1].pixels[5], ((784 + 5) * 31 % 256) as f64 / 255.0);
}

#[test]
fn idx_errors_are_distinct() {
    let mut bad = be(0x804).to_vec();
    bad.extend(be(0));
    assert!(matches!(parse_idx(&bad), Err(Error::IdxMagic(0x804))));
    let mut short = be(0x801).to_vec();
    short.extend(be(3));
    short.push(1);
    assert!(matches!(parse_idx(&short), Err(Error::IdxTruncated { expected: 11, found: 9 })));
    let mut range = be(0x801).to_vec();
    range.extend(be(1));
    range.push(10);
    assert!(matches!(parse_idx(&range), Err(Error::IdxLabelRange(10))));
    assert!(matches!(parse_idx(&range[..6]), Err(Error::IdxTruncated { .. })));
    let IdxData::Labels(_) = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 0]).unwrap() else {
        panic!("labels expected");
    };
}
