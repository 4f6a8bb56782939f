use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{GrayImage, Luma, Rgb, RgbImage};
use tempfile::TempDir;

fn nbtc() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nbtc"));
    cmd.env("NBTC_THREADS", "2");
    cmd
}

fn write_maps(dir: &Path, size: u32) -> Vec<PathBuf> {
    let f = |x: u32, y: u32, k: u32| (((x * (k + 3) + y * (2 * k + 1)) % size) * 255 / size) as u8;
    let albedo = RgbImage::from_fn(size, size, |x, y| Rgb([f(x, y, 0), f(x, y, 1), 90]));
    let normal = RgbImage::from_fn(size, size, |x, y| Rgb([128 + (x % 8) as u8, 128, 255 - (y % 16) as u8]));
    let gray = |k: u32| GrayImage::from_fn(size, size, move |x, y| Luma([f(x, y, k)]));
    let names = ["albedo.png", "normal.png", "roughness.png", "metalness.png", "ao.png"];
    let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    albedo.save(&paths[0]).unwrap();
    normal.save(&paths[1]).unwrap();
    gray(2).save(&paths[2]).unwrap();
    gray(3).save(&paths[3]).unwrap();
    gray(4).save(&paths[4]).unwrap();
    paths
}

fn map_args(cmd: &mut Command, maps: &[PathBuf]) {
    for (flag, path) in ["--albedo", "--normal", "--roughness", "--metalness", "--ao"].iter().zip(maps) {
        cmd.arg(flag).arg(path);
    }
}

fn compress(maps: &[PathBuf], out: &Path, extra: &[&str]) -> Output {
    compress_with_threads(maps, out, extra, "2")
}

fn compress_with_threads(maps: &[PathBuf], out: &Path, extra: &[&str], threads: &str) -> Output {
    let mut cmd = nbtc();
    cmd.env("NBTC_THREADS", threads);
    cmd.arg("compress");
    map_args(&mut cmd, maps);
    cmd.args(["--hidden-dim", "16", "--steps", "20", "--batch-size", "256", "--seed", "5"])
        .args(extra)
        .arg("--out")
        .arg(out);
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
        .to_string()
}

#[test]
fn compress_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let maps = write_maps(dir.path(), 64);
    let (a, b) = (dir.path().join("a.nbtc"), dir.path().join("b.nbtc"));
    let oa = compress(&maps, &a, &[]);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let ob = compress_with_threads(&maps, &b, &[], "1");
    assert!(ob.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = stdout(&oa);
    assert!(field(&text, "compression_ratio").parse::<f64>().unwrap() > 1.0);
    assert!(field(&text, "psnr").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn zero_steps_writes_initial_asset() {
    let dir = TempDir::new().unwrap();
    let maps = write_maps(dir.path(), 32);
    let out = dir.path().join("init.nbtc");
    let o = compress(&maps, &out, &["--steps", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.exists());
    let psnr = field(&stdout(&o), "psnr");

    // eval on the written file reproduces the reported PSNR.
    let mut cmd = nbtc();
    cmd.args(["eval", "--in"]).arg(&out).arg("--reference").args(&maps);
    let e = cmd.output().unwrap();
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    assert_eq!(field(&stdout(&e), "psnr"), psnr);
}

#[test]
fn unknown_variant_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let maps = write_maps(dir.path(), 32);
    let o = compress(&maps, &dir.path().join("x.nbtc"), &["--variant", "C"]);
    assert_eq!(o.status.code(), Some(1));
    let o = compress(&maps, &dir.path().join("x.nbtc"), &["--hidden-dim", "24"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_documents_flags() {
    let o = nbtc().args(["compress", "--help"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for flag in ["--albedo", "--normal", "--roughness", "--metalness", "--ao", "--variant", "--hidden-dim", "--steps", "--seed", "--out"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    let o = nbtc().args(["decompress", "--help"]).output().unwrap();
    for flag in ["--in", "--lod", "--out-dir", "--aniso", "--taps"] {
        assert!(stdout(&o).contains(flag));
    }
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let maps = write_maps(dir.path(), 32);

    let missing = dir.path().join("missing.nbtc");
    let o = nbtc().args(["decompress", "--in"]).arg(&missing).arg("--out-dir").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(3));

    let garbage = dir.path().join("garbage.nbtc");
    std::fs::write(&garbage, b"not a container").unwrap();
    let o = nbtc().args(["decompress", "--in"]).arg(&garbage).arg("--out-dir").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset 0"));

    let o = compress(&maps, &dir.path().join("d.nbtc"), &["--lr-mlp", "1e300", "--steps", "5"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let small = GrayImage::new(16, 16);
    let bad = dir.path().join("small.png");
    small.save(&bad).unwrap();
    let mut m = maps.clone();
    m[2] = bad;
    let o = compress(&m, &dir.path().join("e.nbtc"), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn decompress_and_tilesim() {
    let dir = TempDir::new().unwrap();
    let maps = write_maps(dir.path(), 32);
    let asset = dir.path().join("asset.nbtc");
    assert!(compress(&maps, &asset, &[]).status.success());

    let out = dir.path().join("lod1");
    let o = nbtc()
        .args(["decompress", "--in"])
        .arg(&asset)
        .args(["--lod", "1", "--aniso", "0.05,0", "--taps", "3", "--out-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let albedo = image::open(out.join("albedo.png")).unwrap();
    assert_eq!((albedo.width(), albedo.height()), (16, 16));

    let screen = dir.path().join("screen.txt");
    let mut text = String::from("NBTCSCREEN 1\n10 5\n");
    for y in 0..5 {
        for x in 0..10 {
            if (x + y) % 3 == 0 {
                text.push_str("-\n");
            } else {
                text.push_str(&format!("{} {} {} 0.5\n", 1 + x % 2, x as f64 / 10.0, y as f64 / 5.0));
            }
        }
    }
    std::fs::write(&screen, text).unwrap();
    let stats = dir.path().join("stats.txt");
    let mut cmd = nbtc();
    cmd.args(["tilesim", "--screen"])
        .arg(&screen)
        .arg("--assets")
        .arg(format!("1={}", asset.display()))
        .arg(format!("2={}", asset.display()))
        .arg("--stats")
        .arg(&stats)
        .arg("--out-dir")
        .arg(dir.path().join("gbuffer"));
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = std::fs::read_to_string(&stats).unwrap();
    assert_eq!(field(&s, "neural_pixels"), field(&s, "decoded_pixels"));
    assert!(dir.path().join("gbuffer/ao.png").exists());

    let mut cmd = nbtc();
    cmd.args(["tilesim", "--screen"]).arg(&screen).arg("--assets").arg(format!("1={}", asset.display()));
    let o = cmd.output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("material id 2"));
}
